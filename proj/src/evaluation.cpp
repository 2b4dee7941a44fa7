#include "contamlab/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <json.hpp>

#include "contamlab/optimizer.hpp"
#include "contamlab/tape.hpp"
#include "contamlab/training.hpp"

namespace contamlab {

using nlohmann::json;

int32_t restricted_argmax(const float* logits, const std::vector<int32_t>& candidate_ids) {
    if (candidate_ids.empty()) throw ValidationError("empty candidate set");
    int32_t best = candidate_ids[0];
    for (int32_t id : candidate_ids)
        if (logits[id] > logits[best] || (logits[id] == logits[best] && id < best)) best = id;
    return best;
}

namespace {

constexpr int64_t kEvalBatch = 64;

double accuracy_of(const std::vector<InstanceRecord>& records, const std::string& side) {
    int64_t n = 0, correct = 0;
    for (const auto& r : records) {
        if (r.side != side) continue;
        ++n;
        if (r.correct) correct += 1;
    }
    if (n == 0) throw ValidationError("no instances on side '" + side + "'");
    return static_cast<double>(correct) / static_cast<double>(n);
}

}  // namespace

ProbeResult mem_probe(const ModelCheckpoint& checkpoint, const Vocab& vocab, const TaskSpec& task,
                      const std::vector<LabeledExample>& seen,
                      const std::vector<LabeledExample>& unseen, LabelFormat label_format) {
    if (checkpoint.config.vocab_size != vocab.size())
        throw ValidationError("checkpoint/vocab size mismatch");
    std::vector<int32_t> candidate_ids;
    for (const auto& verb : task.verbalizers) {
        auto id = vocab.lookup(verb);
        if (!id) throw ValidationError("verbalizer '" + verb + "' missing from vocabulary");
        candidate_ids.push_back(*id);
    }
    ContaminationPlan fmt_plan;
    fmt_plan.label_format = label_format;

    struct Probe {
        std::vector<int32_t> ids;
        int64_t mask_pos;
        const LabeledExample* ex;
        std::string side;
        std::string instance_id;
    };
    std::vector<Probe> probes;
    auto add_side = [&](const std::vector<LabeledExample>& exs, const std::string& side) {
        for (size_t i = 0; i < exs.size(); ++i) {
            Probe p;
            p.ex = &exs[i];
            p.side = side;
            p.instance_id = side + ":" + std::to_string(i);
            std::string line = format_labeled_line(exs[i], fmt_plan);
            p.ids = encode_instance(vocab, line, checkpoint.config.max_seq_len);
            p.mask_pos = label_position(p.ids, vocab, exs[i].verbalizer, label_format);
            if (p.mask_pos < 0)
                throw ValidationError("probe label position unavailable for " + p.instance_id +
                                      " (verbalizer truncated or unknown)");
            p.ids[static_cast<size_t>(p.mask_pos)] = Vocab::kMask;
            probes.push_back(std::move(p));
        }
    };
    add_side(seen, "seen");
    add_side(unseen, "unseen");

    ProbeResult result;
    int64_t seq = checkpoint.config.max_seq_len;
    int64_t vsize = checkpoint.config.vocab_size;
    for (size_t start = 0; start < probes.size(); start += kEvalBatch) {
        size_t end = std::min(probes.size(), start + kEvalBatch);
        TokenBatch batch;
        batch.batch = static_cast<int64_t>(end - start);
        batch.seq = seq;
        for (size_t i = start; i < end; ++i)
            batch.ids.insert(batch.ids.end(), probes[i].ids.begin(), probes[i].ids.end());
        Tape<float> tape;
        BoundModel<float> bm = bind_model(tape, checkpoint.params, checkpoint.config, false);
        DropoutCtx drop;  // eval: no dropout
        Var hidden = encode(tape, bm, batch, drop);
        const Tensor<float>& logits = tape.value(mlm_logits(tape, bm, hidden));
        for (size_t i = start; i < end; ++i) {
            const float* row =
                logits.data() + ((static_cast<int64_t>(i - start)) * seq + probes[i].mask_pos) * vsize;
            int32_t pred_id = restricted_argmax(row, candidate_ids);
            InstanceRecord rec;
            rec.instance_id = probes[i].instance_id;
            rec.side = probes[i].side;
            rec.gold = probes[i].ex->label_id;
            // Map predicted token id back to its class index.
            rec.pred = static_cast<int32_t>(
                std::find(candidate_ids.begin(), candidate_ids.end(), pred_id) -
                candidate_ids.begin());
            rec.correct = rec.pred == rec.gold;
            result.records.push_back(std::move(rec));
        }
    }
    result.acc_seen = accuracy_of(result.records, "seen");
    result.acc_unseen = accuracy_of(result.records, "unseen");
    result.mem = 100.0 * (result.acc_seen - result.acc_unseen);
    return result;
}

// Encode a classifier input, optionally carrying a [MASK] in the label slot of
// the given layout so the head can read the encoder's cloze interface. The
// sequence stays exactly `seq` tokens: the [MASK] displaces a trailing pad, or
// the last text token when the sequence is already full.
static std::vector<int32_t> encode_for_head(const Vocab& vocab, const std::string& text,
                                            int64_t seq, std::optional<LabelFormat> cloze_slot) {
    std::vector<int32_t> ids = encode_instance(vocab, text, seq);
    if (!cloze_slot) return ids;
    size_t sep = 0;
    for (size_t i = 0; i < ids.size(); ++i)
        if (ids[i] == Vocab::kSep) sep = i;
    bool full = sep + 1 == ids.size();
    if (*cloze_slot == LabelFormat::label_then_text) {
        if (full) ids.erase(ids.end() - 2);  // drop the last text token before [SEP]
        ids.insert(ids.begin() + 1, Vocab::kMask);
        if (!full) ids.pop_back();
    } else {
        if (full) {
            ids[sep - 1] = Vocab::kMask;
        } else {
            ids.insert(ids.begin() + static_cast<int64_t>(sep), Vocab::kMask);
            ids.pop_back();
        }
    }
    return ids;
}

void FinetuneConfig::validate() const {
    if (epochs < 1 || batch_size < 1) throw ValidationError("invalid finetune config");
    if (train_subset_size < 0) throw ValidationError("train_subset_size must be >= 0");
}

FinetunedModel finetune(const ModelCheckpoint& checkpoint, const Vocab& vocab,
                        const TaskSpec& task, const FinetuneConfig& cfg) {
    cfg.validate();
    task.validate();
    if (cfg.train_subset_size > static_cast<int64_t>(task.train.size()))
        throw ValidationError("train_subset_size exceeds train set size");

    FinetunedModel model;
    model.config = checkpoint.config;
    model.params = checkpoint.params;
    model.seed = cfg.seed;
    model.cloze_slot = cfg.cloze_slot;
    init_cls_head(model.params, model.config, task.num_classes, cfg.seed);

    Rng rng(cfg.seed ^ 0x6c62272e07bb0143ull);
    std::vector<int64_t> subset(task.train.size());
    for (size_t i = 0; i < subset.size(); ++i) subset[i] = static_cast<int64_t>(i);
    if (cfg.train_subset_size > 0 &&
        cfg.train_subset_size < static_cast<int64_t>(task.train.size())) {
        rng.shuffle(subset);
        subset.resize(static_cast<size_t>(cfg.train_subset_size));
    }

    std::vector<std::vector<int32_t>> encoded;
    std::vector<int64_t> labels;
    for (int64_t idx : subset) {
        encoded.push_back(encode_for_head(vocab, task.train[static_cast<size_t>(idx)].text,
                                          model.config.max_seq_len, cfg.cloze_slot));
        labels.push_back(task.train[static_cast<size_t>(idx)].label_id);
    }

    OptimizerState<float> opt = OptimizerState<float>::zeros_like(model.params);
    AdamConfig adam;
    adam.beta1 = cfg.adam_beta1;
    adam.beta2 = cfg.adam_beta2;
    adam.eps = cfg.adam_eps;
    adam.weight_decay = cfg.weight_decay;

    int64_t n = static_cast<int64_t>(encoded.size());
    int64_t steps_per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
    int64_t total_steps = cfg.epochs * steps_per_epoch;
    int64_t step = 0;
    for (int64_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::vector<int64_t> order(static_cast<size_t>(n));
        for (int64_t i = 0; i < n; ++i) order[static_cast<size_t>(i)] = i;
        Rng order_rng = rng.fork(static_cast<uint64_t>(epoch) + 7);
        order_rng.shuffle(order);
        for (int64_t start = 0; start < n; start += cfg.batch_size, ++step) {
            int64_t bsz = std::min(cfg.batch_size, n - start);
            TokenBatch batch;
            batch.batch = bsz;
            batch.seq = model.config.max_seq_len;
            std::vector<int64_t> targets;
            for (int64_t b = 0; b < bsz; ++b) {
                int64_t i = order[static_cast<size_t>(start + b)];
                batch.ids.insert(batch.ids.end(), encoded[static_cast<size_t>(i)].begin(),
                                 encoded[static_cast<size_t>(i)].end());
                targets.push_back(labels[static_cast<size_t>(i)]);
            }
            try {
                Tape<float> tape;
                BoundModel<float> bm = bind_model(tape, model.params, model.config, true);
                DropoutCtx drop;
                drop.train_mode = true;
                drop.rate = model.config.dropout_rate;
                drop.seed = rng.next_u64();
                Var hidden = encode(tape, bm, batch, drop);
                Var logits = cls_logits(tape, bm, hidden, task.num_classes);
                Var loss = tape.cross_entropy(logits, targets, kIgnoreIndex);
                model.final_train_loss = tape.value(loss).item();
                tape.backward(loss);
                std::vector<Tensor<float>> grads;
                for (const auto& name : bm.order) grads.push_back(tape.grad(bm[name]));
                if (cfg.grad_clip_norm > 0) clip_grad_norm(grads, cfg.grad_clip_norm);
                // Linear decay over fine-tuning, as in the pretraining stage.
                adam.lr = cfg.lr * (1.0 - static_cast<double>(step) / static_cast<double>(total_steps));
                adamw_step(model.params, grads, opt, adam);
            } catch (const NumericError& e) {
                throw NumericError("fine-tuning diverged at step " + std::to_string(step) + ": " +
                                   e.what());
            }
        }
    }
    return model;
}

EvalResult task_eval(const FinetunedModel& model, const Vocab& vocab,
                     const std::vector<LabeledExample>& examples, const std::string& side) {
    if (examples.empty()) throw ValidationError("task_eval on an empty example set");
    EvalResult result;
    int64_t seq = model.config.max_seq_len;
    int32_t k = model.params.num_classes;
    for (size_t start = 0; start < examples.size(); start += kEvalBatch) {
        size_t end = std::min(examples.size(), start + kEvalBatch);
        TokenBatch batch;
        batch.batch = static_cast<int64_t>(end - start);
        batch.seq = seq;
        for (size_t i = start; i < end; ++i) {
            auto ids = encode_for_head(vocab, examples[i].text, seq, model.cloze_slot);
            batch.ids.insert(batch.ids.end(), ids.begin(), ids.end());
        }
        Tape<float> tape;
        BoundModel<float> bm = bind_model(tape, model.params, model.config, false);
        DropoutCtx drop;
        Var hidden = encode(tape, bm, batch, drop);
        const Tensor<float>& logits = tape.value(cls_logits(tape, bm, hidden, k));
        for (size_t i = start; i < end; ++i) {
            const float* row = logits.data() + static_cast<int64_t>(i - start) * k;
            int32_t pred = 0;
            for (int32_t c = 1; c < k; ++c)
                if (row[c] > row[pred]) pred = c;  // ties keep the lowest class id
            InstanceRecord rec;
            rec.instance_id = side + ":" + std::to_string(i);
            rec.side = side;
            rec.gold = examples[i].label_id;
            rec.pred = pred;
            rec.correct = pred == examples[i].label_id;
            result.records.push_back(std::move(rec));
        }
    }
    result.accuracy = accuracy_of(result.records, side);
    return result;
}

FinetuneResult expl_score(const FinetunedModel& model, const Vocab& vocab,
                          const std::vector<LabeledExample>& seen,
                          const std::vector<LabeledExample>& unseen) {
    if (seen.empty() || unseen.empty())
        throw ValidationError("expl_score requires nonempty seen and unseen sides");
    FinetuneResult r;
    EvalResult es = task_eval(model, vocab, seen, "seen");
    EvalResult eu = task_eval(model, vocab, unseen, "unseen");
    r.acc_seen = es.accuracy;
    r.acc_unseen = eu.accuracy;
    r.expl = 100.0 * (r.acc_seen - r.acc_unseen);
    r.finetune_seed = model.seed;
    r.final_train_loss = model.final_train_loss;
    r.records = std::move(es.records);
    r.records.insert(r.records.end(), eu.records.begin(), eu.records.end());
    return r;
}

BaselineStats baseline_run(const ModelCheckpoint& checkpoint, const Vocab& vocab,
                           const TaskSpec& task, const std::vector<LabeledExample>& seen,
                           const std::vector<LabeledExample>& unseen, LabelFormat label_format,
                           const FinetuneConfig& base_cfg, const std::vector<uint64_t>& seeds) {
    BaselineStats stats;
    stats.manifest_digest = "uncontaminated";
    ProbeResult probe = mem_probe(checkpoint, vocab, task, seen, unseen, label_format);
    for (uint64_t seed : seeds) {
        FinetuneConfig cfg = base_cfg;
        cfg.seed = seed;
        FinetunedModel model = finetune(checkpoint, vocab, task, cfg);
        FinetuneResult r = expl_score(model, vocab, seen, unseen);
        stats.mem_values.push_back(probe.mem);
        stats.expl_values.push_back(r.expl);
    }
    auto mean_sd = [](const std::vector<double>& xs, double& mean, double& sd) {
        mean = 0;
        for (double x : xs) mean += x;
        mean /= static_cast<double>(xs.size());
        sd = 0;
        if (xs.size() > 1) {
            for (double x : xs) sd += (x - mean) * (x - mean);
            sd = std::sqrt(sd / static_cast<double>(xs.size() - 1));
        }
    };
    mean_sd(stats.mem_values, stats.mem_mean, stats.mem_sd);
    mean_sd(stats.expl_values, stats.expl_mean, stats.expl_sd);
    return stats;
}

void write_instance_records(const std::string& path, const std::vector<InstanceRecord>& records) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ValidationError("cannot write records " + path);
    for (const auto& r : records)
        out << json{{"instance_id", r.instance_id},
                    {"side", r.side},
                    {"gold", r.gold},
                    {"pred", r.pred},
                    {"correct", r.correct}}
                   .dump()
            << "\n";
}

}  // namespace contamlab
