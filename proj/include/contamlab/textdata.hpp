#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "contamlab/common.hpp"

namespace contamlab {

// Token vocabulary with dense ids. Ids 0..4 are reserved for the special
// tokens; word tokens follow ordered by (frequency desc, token asc).
class Vocab {
public:
    static constexpr int32_t kPad = 0;
    static constexpr int32_t kUnk = 1;
    static constexpr int32_t kCls = 2;
    static constexpr int32_t kSep = 3;
    static constexpr int32_t kMask = 4;
    static constexpr int32_t kNumReserved = 5;

    Vocab();

    int32_t size() const { return static_cast<int32_t>(tokens_.size()); }
    const std::string& token(int32_t id) const { return tokens_.at(static_cast<size_t>(id)); }
    int64_t frequency(int32_t id) const { return freq_.at(static_cast<size_t>(id)); }

    // Returns the id, or kUnk for unknown tokens.
    int32_t encode_token(const std::string& tok) const;
    std::optional<int32_t> lookup(const std::string& tok) const;

    void add_token(const std::string& tok, int64_t freq);
    static bool is_reserved(int32_t id) { return id >= 0 && id < kNumReserved; }

    void save(const std::string& path) const;
    static Vocab load(const std::string& path);

private:
    std::vector<std::string> tokens_;
    std::vector<int64_t> freq_;
    std::unordered_map<std::string, int32_t> ids_;
};

struct LabeledExample {
    std::string text;
    int32_t label_id = 0;
    std::string verbalizer;  // single-token rendering of the label
};

struct TaskSpec {
    std::string name;
    int32_t num_classes = 0;
    std::vector<std::string> verbalizers;  // one per class, pairwise distinct
    std::vector<LabeledExample> train;
    std::vector<LabeledExample> test;

    void validate() const;
};

// Lowercasing word-level tokenizer; punctuation becomes standalone tokens.
std::vector<std::string> tokenize(const std::string& text);

std::string join_tokens(const std::vector<std::string>& tokens);

Vocab build_vocab(const std::vector<std::string>& lines, int64_t min_freq);

// [CLS] tokens [SEP] padded/truncated to exactly max_seq_len ids.
std::vector<int32_t> encode_instance(const Vocab& vocab, const std::string& text,
                                     int64_t max_seq_len);

std::vector<std::string> read_lines(const std::string& path);
void write_lines(const std::string& path, const std::vector<std::string>& lines);

// TSV rows "text<TAB>label". Labels map to class ids by sorted label string;
// the label string itself is the verbalizer.
std::vector<LabeledExample> ingest_tsv(const std::string& path);
TaskSpec make_task(const std::string& name, std::vector<LabeledExample> train,
                   std::vector<LabeledExample> test);

struct CorpusGenConfig {
    uint64_t seed = 0;
    int64_t num_lines = 1000;
    int64_t line_len_min = 5;
    int64_t line_len_max = 20;
    int64_t vocab_size = 2000;  // generated word list size, >= 50
    double zipf_exponent = 1.05;
    std::vector<std::string> exclude;  // tokens that must not appear
};

// Synthetic clean corpus: Zipf-distributed pseudo-words with light bigram
// structure. Deterministic per seed.
std::vector<std::string> gen_clean_corpus(const CorpusGenConfig& cfg);

struct TaskGenConfig {
    uint64_t seed = 0;
    int32_t num_classes = 5;
    int64_t num_train = 1000;
    int64_t num_test = 500;
    double signal_strength = 0.5;
    // Size of the background word pool texts draw from. A larger pool makes
    // individual instances more lexically distinctive (each word recurs in
    // fewer instances), which raises the ceiling on verbatim memorization.
    int64_t background_words = 200;
};

// Synthetic classification task. Each text carries cue tokens of its class
// with probability signal_strength (cues of a random class otherwise), so a
// cue-count rule scores ~ signal + (1-signal)/k. Verbalizers are digits.
TaskSpec gen_task(const TaskGenConfig& cfg);

// Class-indicative cue token names used by gen_task ("zz" + class letter +
// cue letter; three cues per class).
std::string cue_token(int32_t class_id, int32_t cue_index);

// The brute-force cue-count classifier used as the learnability oracle.
// Returns accuracy of the rule "argmax class by cue-token count" on examples.
double cue_oracle_accuracy(const TaskSpec& task, const std::vector<LabeledExample>& examples);

}  // namespace contamlab
