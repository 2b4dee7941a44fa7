#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "contamlab/contamination.hpp"
#include "contamlab/evaluation.hpp"
#include "contamlab/model.hpp"
#include "contamlab/textdata.hpp"
#include "contamlab/training.hpp"

namespace contamlab {

// Fully-resolved configuration for one sweep cell: data generation,
// contamination, pretraining, and fine-tuning.
struct LabConfig {
    // Desk-scale calibration: a weak text-label cue keeps the unseen test
    // half near chance (so seen-minus-unseen isolates verbatim memorization),
    // and a raised label-mask probability gives the masked label position
    // enough gradient signal within a single pretraining epoch.
    // The ~2k-word budget is split between the clean corpus and the task's
    // background pool so task texts stay lexically distinctive enough to be
    // memorized by the toy model within one epoch.
    LabConfig() {
        task.signal_strength = 0.02;
        task.background_words = 1000;
        pretrain.label_mask_prob = 0.5;
    }

    uint64_t base_seed = 1234;

    // Toy reference data setup.
    int64_t clean_corpus_lines = 20000;
    int64_t corpus_word_list = 1000;
    double zipf_exponent = 1.05;
    TaskGenConfig task;           // 5-class synthetic task, 1000 train / 500 test
    double seen_fraction = 0.5;

    ContaminationPlan plan;
    // Ratio construction (ratio_sweep): when > 0, overrides plan.copies via
    // ratio_build at this total size.
    double ratio = 0;
    int64_t ratio_total = 0;

    ModelConfig model = ModelConfig::toy(0);  // vocab_size filled after data build
    PretrainConfig pretrain;
    FinetuneConfig finetune;
    // Align fine-tune/eval inputs with the injection layout: carry a [MASK]
    // in the label slot (plan.label_format) so the classifier head can read
    // the encoder's cloze predictions.
    bool cloze_finetune = true;

    // Second-stage protocol: pretrain on the clean corpus first, then
    // continue on the contaminated corpus.
    bool second_stage = false;

    std::string to_json() const;
};

struct SweepCell {
    std::string label;   // axis point label, e.g. "copies=100"
    double axis_value = 0;
    LabConfig config;
};

struct ExperimentSpec {
    std::string preset;
    std::string axis_name;
    std::vector<SweepCell> cells;
    int64_t num_trials = 10;
    // Default trial policy rerandomizes only the fine-tune seed; this flag
    // also rerandomizes pretraining per trial.
    bool rerandomize_pretrain = false;
    std::string out_dir = "runs";
    // Paper-scale reference values, documentation only.
    std::string paper_notes;

    void validate() const;
};

struct RunRecord {
    std::string preset;
    std::string cell_label;
    double axis_value = 0;
    int64_t trial = 0;
    uint64_t data_seed = 0;
    uint64_t pretrain_seed = 0;
    uint64_t finetune_seed = 0;
    double mem = 0;
    double expl = 0;
    double probe_acc_seen = 0;
    double probe_acc_unseen = 0;
    double task_acc_seen = 0;
    double task_acc_unseen = 0;  // generalization measure
    double wall_time_sec = 0;
    std::string fingerprint;
    std::string manifest_digest;
    std::string trace_digest;  // digest of the pretraining loss trace
    bool failed = false;
    std::string fail_reason;

    std::string to_json() const;
    static RunRecord from_json(const std::string& json_text);
};

// Known presets; throws on unknown names.
ExperimentSpec preset(const std::string& name);
std::vector<std::string> preset_names();

// Everything one cell shares across trials.
struct CellArtifacts {
    Vocab vocab;
    TaskSpec task;
    std::vector<LabeledExample> seen;
    std::vector<LabeledExample> unseen;
    ContaminatedCorpus corpus;
    ModelCheckpoint checkpoint;
    std::vector<int64_t> line_order;
    std::string trace_digest;  // digest of the step-loss trace
};

// Builds data + pretrains for one cell (pretrain_seed applies when the trial
// policy rerandomizes pretraining).
CellArtifacts build_cell(const LabConfig& cfg, uint64_t pretrain_seed);

// Runs every cell x trial, appending records to <out_dir>/records.jsonl.
// Completed fingerprints are skipped (resume); individual trial failures are
// recorded and the sweep continues.
std::vector<RunRecord> run_sweep(const ExperimentSpec& spec);

std::vector<RunRecord> load_records(const std::string& path);

struct AggregateRow {
    std::string cell_label;
    double axis_value = 0;
    int64_t n = 0;
    double mem_mean = 0, mem_sd = 0, mem_sem = 0;
    bool sd_defined = false;
    double expl_mean = 0, expl_sd = 0, expl_sem = 0;
    double unseen_acc_mean = 0, unseen_acc_sd = 0, unseen_acc_sem = 0;
};

// Per-axis-point mean / sample SD / SEM over non-failed records.
std::vector<AggregateRow> aggregate(const std::vector<RunRecord>& records);

struct SeedTradeoffReport {
    int64_t n_trials = 0;
    int64_t overlap_top3 = 0;  // |top-3 by expl  intersect  bottom-3 by unseen acc|
    double rank_correlation = 0;  // Spearman between expl and unseen accuracy
};

// Seed-tradeoff analysis over trials of a single cell.
SeedTradeoffReport seed_tradeoff(const std::vector<RunRecord>& cell_records);

// Spearman rank correlation with average ranks for ties; exposed for the
// enumeration oracle tests.
double spearman_rank_correlation(const std::vector<double>& xs, const std::vector<double>& ys);

// Worker-parallelism cap from CONTAMLAB_THREADS (default 1).
int lab_worker_threads();

}  // namespace contamlab
