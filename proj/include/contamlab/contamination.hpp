#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "contamlab/textdata.hpp"

namespace contamlab {

enum class Placement { shuffled, stage_first, stage_middle, stage_last };
enum class LabelFormat { text_then_label, label_then_text };

std::string placement_name(Placement p);
Placement parse_placement(const std::string& name);
std::string label_format_name(LabelFormat f);
LabelFormat parse_label_format(const std::string& name);

struct ContaminationPlan {
    int64_t copies = 0;  // K
    double seen_fraction = 0.5;
    Placement placement = Placement::shuffled;
    LabelFormat label_format = LabelFormat::text_then_label;
    bool include_train_labels = true;

    void validate() const;
    std::string to_json() const;
    static ContaminationPlan from_json(const std::string& json_text);
};

struct InjectedLineRecord {
    std::string source_id;    // "train:<idx>" or "seen:<idx>"
    int64_t copy_index = 0;   // 0..K-1
    int64_t corpus_index = 0; // final line index in the emitted corpus
    int32_t section = -1;     // 0/1/2 under stage placement, -1 otherwise
};

struct ContaminationManifest {
    ContaminationPlan plan;
    uint64_t seed = 0;
    int64_t clean_line_count = 0;
    int64_t total_line_count = 0;
    // Section boundaries [0, b1, b2, N] under stage placement.
    std::array<int64_t, 4> section_bounds{0, 0, 0, 0};
    std::vector<InjectedLineRecord> lines;
    // Formatted corpus line per source id.
    std::map<std::string, std::string> source_lines;

    std::string to_json() const;
    static ContaminationManifest from_json(const std::string& json_text);
    void save(const std::string& path) const;
    static ContaminationManifest load(const std::string& path);
    std::string digest() const;
};

// Random partition of the task's test set, deterministic per seed.
std::pair<std::vector<LabeledExample>, std::vector<LabeledExample>> split_seen_unseen(
    const TaskSpec& task, double seen_fraction, uint64_t seed);

// "I love it!" + class 1 -> "I love it! 1" (or "1 I love it!").
std::string format_labeled_line(const LabeledExample& example, const ContaminationPlan& plan);

struct ContaminatedCorpus {
    std::vector<std::string> lines;
    ContaminationManifest manifest;
};

// Builds the contaminated corpus: K copies of each labeled line (train when
// include_train_labels, plus the seen test half) interleaved with the clean
// lines per the placement policy.
ContaminatedCorpus inject(const std::vector<std::string>& clean_lines, const TaskSpec& task,
                          const std::vector<LabeledExample>& seen_test,
                          const ContaminationPlan& plan, uint64_t seed);

struct VerifyReport {
    bool pass = true;
    std::vector<std::string> failures;
};

// Re-derives counts, per-line content, stage containment, and clean-line
// multiset conservation from the manifest.
VerifyReport verify_manifest(const std::vector<std::string>& corpus_lines,
                             const ContaminationManifest& manifest,
                             const std::vector<std::string>& clean_lines);

// Fixed contaminated:total ratio construction (e.g. 1:10 -> ratio = 0.1).
// Picks K and the clean-line count so the achieved contaminated share is
// within one instance of the request.
ContaminatedCorpus ratio_build(const TaskSpec& task, const std::vector<LabeledExample>& seen_test,
                               double ratio, int64_t target_total_instances,
                               const std::vector<std::string>& clean_source,
                               const ContaminationPlan& plan, uint64_t seed);

}  // namespace contamlab
