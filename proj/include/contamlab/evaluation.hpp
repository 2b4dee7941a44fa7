#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "contamlab/checkpoint.hpp"
#include "contamlab/contamination.hpp"
#include "contamlab/model.hpp"
#include "contamlab/textdata.hpp"

namespace contamlab {

struct InstanceRecord {
    std::string instance_id;
    std::string side;  // "seen" | "unseen"
    int32_t gold = 0;
    int32_t pred = 0;
    bool correct = false;
};

struct ProbeResult {
    double acc_seen = 0;
    double acc_unseen = 0;
    double mem = 0;  // 100 * (acc_seen - acc_unseen), percentage points
    std::vector<InstanceRecord> records;
};

// Cloze probe: the injected line with its verbalizer replaced by [MASK];
// prediction is argmax of the MLM logits restricted to the task's verbalizer
// ids (ties to the lowest token id). No fine-tuned head involved.
ProbeResult mem_probe(const ModelCheckpoint& checkpoint, const Vocab& vocab, const TaskSpec& task,
                      const std::vector<LabeledExample>& seen,
                      const std::vector<LabeledExample>& unseen, LabelFormat label_format);

struct FinetuneConfig {
    int64_t epochs = 3;
    int64_t batch_size = 8;
    double lr = 2e-5;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-6;
    double weight_decay = 0.0;  // AdamW without weight decay
    double grad_clip_norm = 1.0;
    uint64_t seed = 0;
    int64_t train_subset_size = 0;  // 0 = full train set
    // When set, fine-tune and eval inputs carry a [MASK] token in the label
    // slot of the given layout (after [CLS] for label_then_text, before [SEP]
    // for text_then_label), so the classifier head reads the same cloze
    // interface the encoder was pretrained on. Unset = plain text inputs.
    std::optional<LabelFormat> cloze_slot;

    void validate() const;
};

struct FinetunedModel {
    ModelConfig config;
    ModelParams<float> params;
    double final_train_loss = 0;
    uint64_t seed = 0;
    std::optional<LabelFormat> cloze_slot;
};

FinetunedModel finetune(const ModelCheckpoint& checkpoint, const Vocab& vocab,
                        const TaskSpec& task, const FinetuneConfig& cfg);

struct EvalResult {
    double accuracy = 0;
    std::vector<InstanceRecord> records;
};

// Argmax over class logits, ties to the lowest class id.
EvalResult task_eval(const FinetunedModel& model, const Vocab& vocab,
                     const std::vector<LabeledExample>& examples, const std::string& side);

struct FinetuneResult {
    double acc_seen = 0;
    double acc_unseen = 0;
    double expl = 0;  // 100 * (acc_seen - acc_unseen), percentage points
    uint64_t finetune_seed = 0;
    double final_train_loss = 0;
    std::vector<InstanceRecord> records;
};

FinetuneResult expl_score(const FinetunedModel& model, const Vocab& vocab,
                          const std::vector<LabeledExample>& seen,
                          const std::vector<LabeledExample>& unseen);

struct BaselineStats {
    double mem_mean = 0, mem_sd = 0;
    double expl_mean = 0, expl_sd = 0;
    std::vector<double> mem_values;
    std::vector<double> expl_values;
    std::string manifest_digest;
};

// Repeats probe + finetune/expl over fine-tune seeds on an uncontaminated
// checkpoint.
BaselineStats baseline_run(const ModelCheckpoint& checkpoint, const Vocab& vocab,
                           const TaskSpec& task, const std::vector<LabeledExample>& seen,
                           const std::vector<LabeledExample>& unseen, LabelFormat label_format,
                           const FinetuneConfig& base_cfg, const std::vector<uint64_t>& seeds);

void write_instance_records(const std::string& path, const std::vector<InstanceRecord>& records);

// Candidate-restricted argmax shared by the probe; exposed for tests.
int32_t restricted_argmax(const float* logits, const std::vector<int32_t>& candidate_ids);

}  // namespace contamlab
