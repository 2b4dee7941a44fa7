#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "contamlab/checkpoint.hpp"
#include "contamlab/contamination.hpp"
#include "contamlab/model.hpp"
#include "contamlab/rng.hpp"
#include "contamlab/textdata.hpp"

namespace contamlab {

enum class LrPolicy { linear_warmup_decay, constant };

struct LrSchedule {
    LrPolicy policy = LrPolicy::linear_warmup_decay;
    double peak_lr = 5e-5;
    double warmup_fraction = 0.1;
    double constant_value = 2.77e-5;  // midway of the linear decay
};

// Warmup: peak * (step+1)/W for step < W = ceil(warmup_fraction * total);
// then linear decay from peak to zero at total_steps.
double lr_at(int64_t step, int64_t total_steps, const LrSchedule& schedule);

struct CorruptionSplit {
    double mask_frac = 0.8;
    double random_frac = 0.1;
    double keep_frac = 0.1;

    void validate() const;
};

struct PretrainConfig {
    int64_t batch_size = 32;
    LrSchedule schedule;
    int64_t epochs = 1;
    double mask_prob = 0.15;
    // Masking probability at injected-label positions; defaults to mask_prob.
    std::optional<double> label_mask_prob;
    CorruptionSplit corruption;
    double weight_decay = 0.01;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-6;
    double grad_clip_norm = 1.0;  // <= 0 disables clipping
    uint64_t seed = 0;
    bool deterministic = true;

    void validate() const;
    std::string to_json() const;
};

constexpr int64_t kIgnoreIndex = -1;

struct MaskedBatch {
    TokenBatch inputs;              // corrupted token ids
    std::vector<int64_t> targets;   // original id at selected positions, else kIgnoreIndex
};

// BERT-style dynamic masking. label_positions flags injected-label tokens
// (masked with label_mask_prob); reserved/special tokens are never selected.
MaskedBatch mask_batch(const TokenBatch& batch, const std::vector<uint8_t>& label_positions,
                       const PretrainConfig& cfg, int32_t vocab_size, Rng& rng);

struct StepLog {
    int64_t step = 0;
    double loss = 0;
    double lr = 0;
};

struct PretrainResult {
    ModelCheckpoint checkpoint;
    std::vector<StepLog> log;
    // Corpus line index consumed at each training position, in order.
    std::vector<int64_t> line_order;
};

// MLM pretraining over a contaminated corpus. Stage placement preserves the
// manifest's section structure (per-section shuffling, no global reshuffle).
PretrainResult pretrain(const std::vector<std::string>& corpus_lines,
                        const ContaminationManifest& manifest, const Vocab& vocab,
                        const ModelConfig& model_cfg, const PretrainConfig& cfg);

// Second-stage pretraining: optimizer state reinitialized, fingerprint chain
// extended.
PretrainResult continue_pretrain(const ModelCheckpoint& checkpoint,
                                 const std::vector<std::string>& corpus_lines,
                                 const ContaminationManifest& manifest, const Vocab& vocab,
                                 const PretrainConfig& cfg);

// True when every index of section i precedes every index of section i+1
// under the manifest's stage bounds.
bool audit_stage_order(const std::vector<int64_t>& line_order,
                       const ContaminationManifest& manifest);

void write_training_log(const std::string& path, const std::vector<StepLog>& log);

// Position of the injected label verbalizer in an encoded line, or -1 when
// absent (e.g. truncated away).
int64_t label_position(const std::vector<int32_t>& encoded, const Vocab& vocab,
                       const std::string& verbalizer, LabelFormat format);

}  // namespace contamlab
