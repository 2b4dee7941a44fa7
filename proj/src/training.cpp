#include "contamlab/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <json.hpp>
#include <unordered_map>

#include "contamlab/optimizer.hpp"
#include "contamlab/tape.hpp"

namespace contamlab {

using nlohmann::json;

double lr_at(int64_t step, int64_t total_steps, const LrSchedule& schedule) {
    if (total_steps <= 0) throw ValidationError("total_steps must be positive");
    if (step < 0 || step >= total_steps) throw ValidationError("step out of range");
    if (schedule.policy == LrPolicy::constant) return schedule.constant_value;
    int64_t warmup =
        static_cast<int64_t>(std::ceil(schedule.warmup_fraction * static_cast<double>(total_steps)));
    if (step < warmup)
        return schedule.peak_lr * static_cast<double>(step + 1) / static_cast<double>(warmup);
    return schedule.peak_lr *
           (1.0 - static_cast<double>(step - warmup) / static_cast<double>(total_steps - warmup));
}

void CorruptionSplit::validate() const {
    if (mask_frac < 0 || random_frac < 0 || keep_frac < 0 ||
        std::abs(mask_frac + random_frac + keep_frac - 1.0) > 1e-12)
        throw ValidationError("corruption split must be nonnegative and sum to 1");
}

void PretrainConfig::validate() const {
    if (batch_size < 1) throw ValidationError("batch_size must be >= 1");
    if (epochs < 1) throw ValidationError("epochs must be >= 1");
    if (mask_prob < 0 || mask_prob > 1) throw ValidationError("mask_prob must be in [0, 1]");
    if (label_mask_prob && (*label_mask_prob < 0 || *label_mask_prob > 1))
        throw ValidationError("label_mask_prob must be in [0, 1]");
    corruption.validate();
}

std::string PretrainConfig::to_json() const {
    json j{{"batch_size", batch_size},
           {"lr_policy", schedule.policy == LrPolicy::constant ? "constant" : "linear_warmup_decay"},
           {"peak_lr", schedule.peak_lr},
           {"warmup_fraction", schedule.warmup_fraction},
           {"constant_lr", schedule.constant_value},
           {"epochs", epochs},
           {"mask_prob", mask_prob},
           {"label_mask_prob", label_mask_prob ? json(*label_mask_prob) : json(nullptr)},
           {"corruption",
            {corruption.mask_frac, corruption.random_frac, corruption.keep_frac}},
           {"weight_decay", weight_decay},
           {"adam", {adam_beta1, adam_beta2, adam_eps}},
           {"grad_clip_norm", grad_clip_norm},
           {"seed", seed},
           {"deterministic", deterministic}};
    return j.dump();
}

MaskedBatch mask_batch(const TokenBatch& batch, const std::vector<uint8_t>& label_positions,
                       const PretrainConfig& cfg, int32_t vocab_size, Rng& rng) {
    cfg.corruption.validate();
    if (!label_positions.empty() && label_positions.size() != batch.ids.size())
        throw ValidationError("label_positions size mismatch");
    if (vocab_size <= Vocab::kNumReserved) throw ValidationError("vocab too small to mask");
    MaskedBatch out;
    out.inputs = batch;
    out.targets.assign(batch.ids.size(), kIgnoreIndex);
    double q = cfg.label_mask_prob.value_or(cfg.mask_prob);
    for (size_t i = 0; i < batch.ids.size(); ++i) {
        int32_t id = batch.ids[i];
        if (Vocab::is_reserved(id)) continue;
        bool is_label = !label_positions.empty() && label_positions[i];
        double prob = is_label ? q : cfg.mask_prob;
        if (prob <= 0) continue;
        if (rng.uniform() >= prob) continue;
        out.targets[i] = id;
        double u = rng.uniform();
        if (u < cfg.corruption.mask_frac) {
            out.inputs.ids[i] = Vocab::kMask;
        } else if (u < cfg.corruption.mask_frac + cfg.corruption.random_frac) {
            out.inputs.ids[i] = Vocab::kNumReserved +
                                static_cast<int32_t>(rng.uniform_index(
                                    static_cast<uint64_t>(vocab_size - Vocab::kNumReserved)));
        }  // else: keep the original token
    }
    return out;
}

int64_t label_position(const std::vector<int32_t>& encoded, const Vocab& vocab,
                       const std::string& verbalizer, LabelFormat format) {
    auto vid = vocab.lookup(verbalizer);
    if (!vid) return -1;
    if (format == LabelFormat::label_then_text)
        return encoded.size() > 1 && encoded[1] == *vid ? 1 : -1;
    // text_then_label: last token before [SEP].
    for (size_t i = encoded.size(); i-- > 0;) {
        if (encoded[i] == Vocab::kSep)
            return i >= 1 && encoded[i - 1] == *vid ? static_cast<int64_t>(i - 1) : -1;
    }
    return -1;
}

namespace {

struct EncodedCorpus {
    std::vector<std::vector<int32_t>> lines;
    std::vector<int64_t> label_pos;  // -1 for clean lines
};

EncodedCorpus encode_corpus(const std::vector<std::string>& corpus_lines,
                            const ContaminationManifest& manifest, const Vocab& vocab,
                            int64_t max_seq_len) {
    EncodedCorpus ec;
    ec.lines.reserve(corpus_lines.size());
    ec.label_pos.assign(corpus_lines.size(), -1);
    for (const auto& line : corpus_lines) ec.lines.push_back(encode_instance(vocab, line, max_seq_len));
    // Injected lines end (or start) with their verbalizer token.
    for (const auto& rec : manifest.lines) {
        if (rec.corpus_index < 0 || rec.corpus_index >= static_cast<int64_t>(corpus_lines.size()))
            throw ValidationError("manifest corpus index out of range");
        const auto& line = corpus_lines[static_cast<size_t>(rec.corpus_index)];
        auto toks = tokenize(line);
        if (toks.empty()) continue;
        const std::string& verb = manifest.plan.label_format == LabelFormat::text_then_label
                                      ? toks.back()
                                      : toks.front();
        ec.label_pos[static_cast<size_t>(rec.corpus_index)] =
            label_position(ec.lines[static_cast<size_t>(rec.corpus_index)], vocab, verb,
                           manifest.plan.label_format);
    }
    return ec;
}

std::vector<int64_t> epoch_order(int64_t n, const ContaminationManifest& manifest, Rng& rng) {
    std::vector<int64_t> order(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) order[static_cast<size_t>(i)] = i;
    bool staged = manifest.plan.placement != Placement::shuffled && manifest.section_bounds[3] == n;
    if (staged) {
        // Shuffle within each section, keep section order.
        for (int s = 0; s < 3; ++s) {
            int64_t lo = manifest.section_bounds[static_cast<size_t>(s)];
            int64_t hi = manifest.section_bounds[static_cast<size_t>(s) + 1];
            for (int64_t i = hi - lo; i > 1; --i) {
                int64_t j = static_cast<int64_t>(rng.uniform_index(static_cast<uint64_t>(i)));
                std::swap(order[static_cast<size_t>(lo + i - 1)], order[static_cast<size_t>(lo + j)]);
            }
        }
    } else {
        rng.shuffle(order);
    }
    return order;
}

uint64_t vocab_digest(const Vocab& vocab) {
    uint64_t h = 0xcbf29ce484222325ull;
    for (int32_t i = 0; i < vocab.size(); ++i) h = fnv1a64(vocab.token(i), h);
    return h;
}

PretrainResult run_pretrain(std::optional<ModelCheckpoint> base,
                            const std::vector<std::string>& corpus_lines,
                            const ContaminationManifest& manifest, const Vocab& vocab,
                            const ModelConfig& model_cfg, const PretrainConfig& cfg) {
    cfg.validate();
    model_cfg.validate();
    if (corpus_lines.empty()) throw ValidationError("cannot pretrain on an empty corpus");
    if (model_cfg.vocab_size != vocab.size())
        throw ValidationError("model vocab_size " + std::to_string(model_cfg.vocab_size) +
                              " does not match vocabulary size " + std::to_string(vocab.size()));

    ModelParams<float> params =
        base ? base->params : init_params<float>(model_cfg, cfg.seed);
    OptimizerState<float> opt = OptimizerState<float>::zeros_like(params);
    AdamConfig adam;
    adam.beta1 = cfg.adam_beta1;
    adam.beta2 = cfg.adam_beta2;
    adam.eps = cfg.adam_eps;
    adam.weight_decay = cfg.weight_decay;

    EncodedCorpus corpus = encode_corpus(corpus_lines, manifest, vocab, model_cfg.max_seq_len);
    int64_t n = static_cast<int64_t>(corpus.lines.size());
    int64_t steps_per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
    int64_t total_steps = cfg.epochs * steps_per_epoch;

    Rng train_rng(cfg.seed ^ 0xa02bdbf7bb3c0a7ull);
    PretrainResult result;
    result.line_order.reserve(static_cast<size_t>(n * cfg.epochs));
    int64_t step = 0;
    for (int64_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        Rng order_rng = train_rng.fork(static_cast<uint64_t>(epoch) + 1000);
        auto order = epoch_order(n, manifest, order_rng);
        for (int64_t start = 0; start < n; start += cfg.batch_size, ++step) {
            int64_t bsz = std::min(cfg.batch_size, n - start);
            TokenBatch batch;
            batch.batch = bsz;
            batch.seq = model_cfg.max_seq_len;
            std::vector<uint8_t> label_positions(static_cast<size_t>(bsz * batch.seq), 0);
            for (int64_t b = 0; b < bsz; ++b) {
                int64_t line = order[static_cast<size_t>(start + b)];
                result.line_order.push_back(line);
                const auto& ids = corpus.lines[static_cast<size_t>(line)];
                batch.ids.insert(batch.ids.end(), ids.begin(), ids.end());
                int64_t lp = corpus.label_pos[static_cast<size_t>(line)];
                if (lp >= 0) label_positions[static_cast<size_t>(b * batch.seq + lp)] = 1;
            }
            MaskedBatch masked = mask_batch(batch, label_positions, cfg, vocab.size(), train_rng);

            double lr = lr_at(step, total_steps, cfg.schedule);
            adam.lr = lr;
            double loss_value = 0;
            try {
                Tape<float> tape;
                BoundModel<float> bm = bind_model(tape, params, model_cfg, true);
                DropoutCtx drop;
                drop.train_mode = true;
                drop.rate = model_cfg.dropout_rate;
                drop.seed = train_rng.next_u64();
                Var hidden = encode(tape, bm, masked.inputs, drop);
                Var logits = mlm_logits(tape, bm, hidden);
                Var flat = tape.reshape(logits, Shape{bsz * batch.seq, model_cfg.vocab_size});
                Var loss = tape.cross_entropy(flat, masked.targets, kIgnoreIndex);
                loss_value = tape.value(loss).item();
                tape.backward(loss);
                std::vector<Tensor<float>> grads;
                grads.reserve(bm.order.size());
                for (const auto& name : bm.order) grads.push_back(tape.grad(bm[name]));
                if (cfg.grad_clip_norm > 0) clip_grad_norm(grads, cfg.grad_clip_norm);
                adamw_step(params, grads, opt, adam);
            } catch (const NumericError& e) {
                throw NumericError("pretraining diverged at step " + std::to_string(step) + ": " +
                                   e.what());
            }
            result.log.push_back({step, loss_value, lr});
        }
    }

    std::string fp_payload = model_config_to_json(model_cfg) + cfg.to_json() +
                             manifest.digest() + hex_digest(vocab_digest(vocab));
    ModelCheckpoint ckpt;
    ckpt.config = model_cfg;
    ckpt.params = std::move(params);
    ckpt.has_optimizer_state = true;
    ckpt.optimizer_state = std::move(opt);
    ckpt.meta.config_fingerprint = hex_digest(fnv1a64(fp_payload));
    ckpt.meta.step_count = (base ? base->meta.step_count : 0) + total_steps;
    ckpt.meta.manifest_digest = manifest.digest();
    if (base) {
        ckpt.meta.fingerprint_chain = base->meta.fingerprint_chain;
        ckpt.meta.fingerprint_chain.push_back(base->meta.config_fingerprint);
    }
    result.checkpoint = std::move(ckpt);
    return result;
}

}  // namespace

PretrainResult pretrain(const std::vector<std::string>& corpus_lines,
                        const ContaminationManifest& manifest, const Vocab& vocab,
                        const ModelConfig& model_cfg, const PretrainConfig& cfg) {
    return run_pretrain(std::nullopt, corpus_lines, manifest, vocab, model_cfg, cfg);
}

PretrainResult continue_pretrain(const ModelCheckpoint& checkpoint,
                                 const std::vector<std::string>& corpus_lines,
                                 const ContaminationManifest& manifest, const Vocab& vocab,
                                 const PretrainConfig& cfg) {
    if (checkpoint.config.vocab_size != vocab.size())
        throw ValidationError("checkpoint vocabulary is incompatible with this corpus");
    return run_pretrain(checkpoint, corpus_lines, manifest, vocab, checkpoint.config, cfg);
}

bool audit_stage_order(const std::vector<int64_t>& line_order,
                       const ContaminationManifest& manifest) {
    if (manifest.plan.placement == Placement::shuffled) return true;
    auto section_of = [&](int64_t idx) {
        return idx < manifest.section_bounds[1] ? 0 : idx < manifest.section_bounds[2] ? 1 : 2;
    };
    int64_t n = manifest.total_line_count;
    if (n <= 0) return false;
    for (size_t i = 0; i < line_order.size(); ++i) {
        // Per epoch, sections must be consumed in order.
        int64_t pos_in_epoch = static_cast<int64_t>(i) % n;
        if (i > 0 && pos_in_epoch != 0 &&
            section_of(line_order[i]) < section_of(line_order[i - 1]))
            return false;
    }
    return true;
}

void write_training_log(const std::string& path, const std::vector<StepLog>& log) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ValidationError("cannot write training log " + path);
    for (const auto& s : log)
        out << json{{"step", s.step}, {"loss", s.loss}, {"lr", s.lr}}.dump() << "\n";
}

}  // namespace contamlab
