#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "contamlab/tape.hpp"
#include "contamlab/tensor.hpp"
#include "contamlab/textdata.hpp"

namespace contamlab {

struct ModelConfig {
    int64_t num_layers = 2;
    int64_t hidden_dim = 64;
    int64_t num_heads = 4;
    int64_t ffn_dim = 256;
    int64_t vocab_size = 0;
    int64_t max_seq_len = 32;
    bool tie_mlm_to_embeddings = true;
    double dropout_rate = 0.1;
    double layer_norm_eps = 1e-12;

    int64_t head_dim() const { return hidden_dim / num_heads; }

    void validate() const {
        if (num_layers < 1 || hidden_dim < 1 || num_heads < 1 || ffn_dim < 1 || vocab_size < 6)
            throw ValidationError("invalid model config");
        if (hidden_dim % num_heads != 0)
            throw ValidationError("hidden_dim must be divisible by num_heads");
        if (max_seq_len < 3) throw ValidationError("max_seq_len must be >= 3");
        if (dropout_rate < 0 || dropout_rate >= 1) throw ValidationError("invalid dropout rate");
    }

    // Desk-scale default.
    static ModelConfig toy(int64_t vocab_size) {
        ModelConfig c;
        c.vocab_size = vocab_size;
        return c;
    }

    // BERT-base shape (12 layers, hidden 768, heads of 64, 128-token lines).
    static ModelConfig paper_base(int64_t vocab_size) {
        ModelConfig c;
        c.num_layers = 12;
        c.hidden_dim = 768;
        c.num_heads = 12;
        c.ffn_dim = 3072;
        c.vocab_size = vocab_size;
        c.max_seq_len = 128;
        return c;
    }
};

// Named parameter tensors in a fixed registration order (the checkpoint
// directory order).
template <class T>
class ModelParams {
public:
    void add(const std::string& name, Tensor<T> t) {
        if (index_.count(name)) throw ValidationError("duplicate parameter " + name);
        index_[name] = tensors_.size();
        tensors_.emplace_back(name, std::move(t));
    }

    bool has(const std::string& name) const { return index_.count(name) > 0; }

    const Tensor<T>& at(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw ValidationError("missing parameter " + name);
        return tensors_[it->second].second;
    }

    Tensor<T>& at(const std::string& name) {
        auto it = index_.find(name);
        if (it == index_.end()) throw ValidationError("missing parameter " + name);
        return tensors_[it->second].second;
    }

    const std::vector<std::pair<std::string, Tensor<T>>>& named() const { return tensors_; }
    std::vector<std::pair<std::string, Tensor<T>>>& named() { return tensors_; }
    size_t count() const { return tensors_.size(); }

    int64_t total_elements() const {
        int64_t n = 0;
        for (const auto& [name, t] : tensors_) n += t.numel();
        return n;
    }

    int32_t num_classes = 0;  // classification head width, 0 until fine-tuning

    template <class U>
    ModelParams<U> cast() const {
        ModelParams<U> out;
        out.num_classes = num_classes;
        for (const auto& [name, t] : tensors_) {
            if constexpr (std::is_same_v<U, double>)
                out.add(name, t.to_wide());
            else
                out.add(name, t.to_standard());
        }
        return out;
    }

private:
    std::vector<std::pair<std::string, Tensor<T>>> tensors_;
    std::unordered_map<std::string, size_t> index_;
};

// Weights ~ truncated normal (std 0.02), biases zero, layer-norm gains one.
template <class T>
ModelParams<T> init_params(const ModelConfig& cfg, uint64_t seed) {
    cfg.validate();
    Rng rng(seed);
    ModelParams<T> p;
    auto weight = [&](const std::string& name, Shape shape) {
        p.add(name, Tensor<T>::truncated_normal(shape, rng, 0.02));
    };
    auto zeros = [&](const std::string& name, Shape shape) { p.add(name, Tensor<T>(shape, T(0))); };
    auto ones = [&](const std::string& name, Shape shape) { p.add(name, Tensor<T>(shape, T(1))); };

    int64_t h = cfg.hidden_dim, v = cfg.vocab_size, f = cfg.ffn_dim, s = cfg.max_seq_len;
    weight("embed.tok", {v, h});
    weight("embed.pos", {s, h});
    ones("embed.ln.gain", {h});
    zeros("embed.ln.bias", {h});
    for (int64_t l = 0; l < cfg.num_layers; ++l) {
        std::string pre = "layer" + std::to_string(l) + ".";
        weight(pre + "attn.wq", {h, h});
        zeros(pre + "attn.bq", {h});
        weight(pre + "attn.wk", {h, h});
        zeros(pre + "attn.bk", {h});
        weight(pre + "attn.wv", {h, h});
        zeros(pre + "attn.bv", {h});
        weight(pre + "attn.wo", {h, h});
        zeros(pre + "attn.bo", {h});
        ones(pre + "ln1.gain", {h});
        zeros(pre + "ln1.bias", {h});
        weight(pre + "ffn.w1", {h, f});
        zeros(pre + "ffn.b1", {f});
        weight(pre + "ffn.w2", {f, h});
        zeros(pre + "ffn.b2", {h});
        ones(pre + "ln2.gain", {h});
        zeros(pre + "ln2.bias", {h});
    }
    weight("mlm.dense.w", {h, h});
    zeros("mlm.dense.b", {h});
    ones("mlm.ln.gain", {h});
    zeros("mlm.ln.bias", {h});
    if (!cfg.tie_mlm_to_embeddings) weight("mlm.out.w", {h, v});
    zeros("mlm.out.b", {v});
    weight("pooler.w", {h, h});
    zeros("pooler.b", {h});
    return p;
}

// Adds the lazily-created classification head.
template <class T>
void init_cls_head(ModelParams<T>& params, const ModelConfig& cfg, int32_t num_classes,
                   uint64_t seed) {
    if (num_classes < 2) throw ValidationError("classification head needs >= 2 classes");
    if (params.has("cls.w")) throw ValidationError("classification head already present");
    Rng rng(seed);
    params.add("cls.w", Tensor<T>::truncated_normal({cfg.hidden_dim, num_classes}, rng, 0.02));
    params.add("cls.b", Tensor<T>(Shape{num_classes}, T(0)));
    params.num_classes = num_classes;
}

// Token id batch, row-major [batch, seq]. Padding is id kPad.
struct TokenBatch {
    std::vector<int32_t> ids;
    int64_t batch = 0;
    int64_t seq = 0;

    int32_t at(int64_t b, int64_t s) const { return ids[static_cast<size_t>(b * seq + s)]; }
    int32_t& at(int64_t b, int64_t s) { return ids[static_cast<size_t>(b * seq + s)]; }

    static TokenBatch from_rows(const std::vector<std::vector<int32_t>>& rows) {
        TokenBatch tb;
        tb.batch = static_cast<int64_t>(rows.size());
        tb.seq = rows.empty() ? 0 : static_cast<int64_t>(rows[0].size());
        for (const auto& r : rows) {
            if (static_cast<int64_t>(r.size()) != tb.seq)
                throw ValidationError("ragged token batch");
            tb.ids.insert(tb.ids.end(), r.begin(), r.end());
        }
        return tb;
    }
};

// Per-forward dropout stream; each call site gets its own derived seed.
struct DropoutCtx {
    bool train_mode = false;
    double rate = 0.0;
    uint64_t seed = 0;
    mutable uint64_t counter = 0;

    uint64_t next_seed() const {
        return fnv1a64(&counter, sizeof(counter), seed ^ 0x5851f42d4c957f2dull) + counter++;
    }
};

// Model parameters registered as leaves on one tape.
template <class T>
struct BoundModel {
    const ModelConfig* cfg = nullptr;
    std::unordered_map<std::string, Var> leaves;
    std::vector<std::string> order;

    Var operator[](const std::string& name) const {
        auto it = leaves.find(name);
        if (it == leaves.end()) throw ValidationError("model leaf missing: " + name);
        return it->second;
    }
    bool has(const std::string& name) const { return leaves.count(name) > 0; }
};

template <class T>
BoundModel<T> bind_model(Tape<T>& tape, const ModelParams<T>& params, const ModelConfig& cfg,
                         bool trainable) {
    BoundModel<T> bm;
    bm.cfg = &cfg;
    for (const auto& [name, t] : params.named()) {
        bm.leaves[name] = tape.leaf(t, trainable);
        bm.order.push_back(name);
    }
    return bm;
}

// Transformer encoder stack: embeddings + LN, then per-layer multi-head
// self-attention and FFN blocks with residuals (post-LN). Padded key
// positions are excluded from attention by an additive mask.
template <class T>
Var encode(Tape<T>& tape, const BoundModel<T>& bm, const TokenBatch& batch,
           const DropoutCtx& drop) {
    const ModelConfig& cfg = *bm.cfg;
    int64_t b = batch.batch, s = batch.seq, h = cfg.hidden_dim;
    if (s > cfg.max_seq_len)
        throw ValidationError("sequence length " + std::to_string(s) + " exceeds max_seq_len " +
                              std::to_string(cfg.max_seq_len));
    if (b < 1 || s < 1) throw ValidationError("empty batch");
    int64_t nh = cfg.num_heads, hd = cfg.head_dim();

    Var tok = tape.embedding(bm["embed.tok"], batch.ids, Shape{b, s});
    Var pos_rows = tape.slice(bm["embed.pos"], 0, 0, s);
    Var pos = tape.reshape(pos_rows, Shape{1, s, h});
    Var x = tape.add(tok, pos);
    x = tape.layer_norm(x, bm["embed.ln.gain"], bm["embed.ln.bias"], cfg.layer_norm_eps);
    x = tape.dropout(x, drop.rate, drop.train_mode, drop.next_seed());

    // Additive attention mask over keys, [b, 1, 1, s].
    Tensor<T> mask(Shape{b, 1, 1, s});
    for (int64_t bi = 0; bi < b; ++bi)
        for (int64_t si = 0; si < s; ++si)
            mask[bi * s + si] = batch.at(bi, si) == Vocab::kPad ? T(-1e9) : T(0);
    Var mask_v = tape.leaf(std::move(mask), false);
    Var scale_v = tape.leaf(Tensor<T>::scalar(static_cast<T>(1.0 / std::sqrt(double(hd)))), false);

    for (int64_t l = 0; l < cfg.num_layers; ++l) {
        std::string pre = "layer" + std::to_string(l) + ".";
        auto proj = [&](const char* w, const char* bias) {
            Var y = tape.add(tape.matmul(x, bm[pre + w]), bm[pre + bias]);
            return tape.swap_axes12(tape.reshape(y, Shape{b, s, nh, hd}));
        };
        Var q = proj("attn.wq", "attn.bq");
        Var k = proj("attn.wk", "attn.bk");
        Var v = proj("attn.wv", "attn.bv");
        Var scores = tape.mul(tape.matmul(q, tape.transpose(k)), scale_v);
        scores = tape.add(scores, mask_v);
        Var attn = tape.softmax(scores);
        attn = tape.dropout(attn, drop.rate, drop.train_mode, drop.next_seed());
        Var ctx = tape.swap_axes12(tape.matmul(attn, v));
        ctx = tape.reshape(ctx, Shape{b, s, h});
        Var attn_out = tape.add(tape.matmul(ctx, bm[pre + "attn.wo"]), bm[pre + "attn.bo"]);
        attn_out = tape.dropout(attn_out, drop.rate, drop.train_mode, drop.next_seed());
        x = tape.layer_norm(tape.add(x, attn_out), bm[pre + "ln1.gain"], bm[pre + "ln1.bias"],
                            cfg.layer_norm_eps);
        Var ffn = tape.gelu(tape.add(tape.matmul(x, bm[pre + "ffn.w1"]), bm[pre + "ffn.b1"]));
        ffn = tape.add(tape.matmul(ffn, bm[pre + "ffn.w2"]), bm[pre + "ffn.b2"]);
        ffn = tape.dropout(ffn, drop.rate, drop.train_mode, drop.next_seed());
        x = tape.layer_norm(tape.add(x, ffn), bm[pre + "ln2.gain"], bm[pre + "ln2.bias"],
                            cfg.layer_norm_eps);
    }
    return x;
}

// Vocab logits per position: dense + gelu + LN transform, then the output
// projection (token embedding transpose when tied).
template <class T>
Var mlm_logits(Tape<T>& tape, const BoundModel<T>& bm, Var hidden) {
    const ModelConfig& cfg = *bm.cfg;
    Var t = tape.add(tape.matmul(hidden, bm["mlm.dense.w"]), bm["mlm.dense.b"]);
    t = tape.gelu(t);
    t = tape.layer_norm(t, bm["mlm.ln.gain"], bm["mlm.ln.bias"], cfg.layer_norm_eps);
    Var proj = cfg.tie_mlm_to_embeddings ? tape.transpose(bm["embed.tok"]) : bm["mlm.out.w"];
    return tape.add(tape.matmul(t, proj), bm["mlm.out.b"]);
}

// Class logits from the [CLS] position through the tanh pooler.
template <class T>
Var cls_logits(Tape<T>& tape, const BoundModel<T>& bm, Var hidden, int32_t num_classes) {
    if (!bm.has("cls.w")) throw ValidationError("classification head not initialized");
    const Tensor<T>& w = tape.value(bm["cls.w"]);
    if (w.dim(1) != num_classes)
        throw ValidationError("classification head has " + std::to_string(w.dim(1)) +
                              " classes, expected " + std::to_string(num_classes));
    const Shape& hs = tape.value(hidden).shape();
    int64_t b = hs[0], h = hs[2];
    Var h0 = tape.reshape(tape.slice(hidden, 1, 0, 1), Shape{b, h});
    Var pooled = tape.tanh_op(tape.add(tape.matmul(h0, bm["pooler.w"]), bm["pooler.b"]));
    return tape.add(tape.matmul(pooled, bm["cls.w"]), bm["cls.b"]);
}

}  // namespace contamlab
