#include "contamlab/textdata.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "contamlab/rng.hpp"

namespace contamlab {

namespace {
const char* kReservedNames[Vocab::kNumReserved] = {"[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"};
}

Vocab::Vocab() {
    for (int32_t i = 0; i < kNumReserved; ++i) add_token(kReservedNames[i], 0);
}

int32_t Vocab::encode_token(const std::string& tok) const {
    auto it = ids_.find(tok);
    return it == ids_.end() ? kUnk : it->second;
}

std::optional<int32_t> Vocab::lookup(const std::string& tok) const {
    auto it = ids_.find(tok);
    if (it == ids_.end()) return std::nullopt;
    return it->second;
}

void Vocab::add_token(const std::string& tok, int64_t freq) {
    if (ids_.count(tok)) throw ValidationError("duplicate vocab token '" + tok + "'");
    ids_[tok] = static_cast<int32_t>(tokens_.size());
    tokens_.push_back(tok);
    freq_.push_back(freq);
}

void Vocab::save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ValidationError("cannot write vocab file " + path);
    for (size_t i = 0; i < tokens_.size(); ++i) out << tokens_[i] << "\t" << freq_[i] << "\n";
}

Vocab Vocab::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot read vocab file " + path);
    Vocab v;
    std::string line;
    int32_t id = 0;
    while (std::getline(in, line)) {
        auto tab = line.find('\t');
        std::string tok = tab == std::string::npos ? line : line.substr(0, tab);
        int64_t freq = tab == std::string::npos ? 0 : std::stoll(line.substr(tab + 1));
        if (id < kNumReserved) {
            if (tok != kReservedNames[id])
                throw ValidationError("vocab file " + path + ": reserved token mismatch at id " +
                                      std::to_string(id));
        } else {
            v.add_token(tok, freq);
        }
        ++id;
    }
    if (id < kNumReserved) throw ValidationError("vocab file " + path + " truncated");
    return v;
}

void TaskSpec::validate() const {
    if (num_classes < 2) throw ValidationError("task needs at least 2 classes");
    if (static_cast<int32_t>(verbalizers.size()) != num_classes)
        throw ValidationError("task needs one verbalizer per class");
    std::set<std::string> distinct(verbalizers.begin(), verbalizers.end());
    if (static_cast<int32_t>(distinct.size()) != num_classes)
        throw ValidationError("task verbalizers must be pairwise distinct");
    for (const auto& v : verbalizers)
        if (tokenize(v).size() != 1)
            throw ValidationError("verbalizer '" + v + "' is not a single token");
    std::set<std::string> train_texts;
    for (const auto& ex : train) train_texts.insert(ex.text);
    for (const auto& ex : test)
        if (train_texts.count(ex.text))
            throw ValidationError("test example duplicates a train text: " + ex.text);
    for (const auto& ex : train)
        if (ex.label_id < 0 || ex.label_id >= num_classes)
            throw ValidationError("train label out of range");
    for (const auto& ex : test)
        if (ex.label_id < 0 || ex.label_id >= num_classes)
            throw ValidationError("test label out of range");
}

std::vector<std::string> tokenize(const std::string& text) {
    std::vector<std::string> out;
    std::string cur;
    auto flush = [&] {
        if (!cur.empty()) {
            out.push_back(cur);
            cur.clear();
        }
    };
    for (unsigned char c : text) {
        if (c < 0x80 && std::isspace(c)) {
            flush();
        } else if (c < 0x80 && !std::isalnum(c)) {
            // ASCII punctuation becomes its own token.
            flush();
            out.push_back(std::string(1, static_cast<char>(c)));
        } else {
            cur.push_back(c < 0x80 ? static_cast<char>(std::tolower(c)) : static_cast<char>(c));
        }
    }
    flush();
    return out;
}

std::string join_tokens(const std::vector<std::string>& tokens) {
    std::string out;
    for (size_t i = 0; i < tokens.size(); ++i) {
        if (i) out += ' ';
        out += tokens[i];
    }
    return out;
}

Vocab build_vocab(const std::vector<std::string>& lines, int64_t min_freq) {
    if (min_freq < 1) throw ValidationError("min_freq must be >= 1");
    if (lines.empty()) throw ValidationError("cannot build vocabulary from an empty corpus");
    std::unordered_map<std::string, int64_t> counts;
    for (const auto& line : lines)
        for (const auto& tok : tokenize(line)) ++counts[tok];
    std::vector<std::pair<std::string, int64_t>> kept;
    for (const auto& [tok, freq] : counts)
        if (freq >= min_freq) kept.emplace_back(tok, freq);
    std::sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });
    Vocab v;
    for (const auto& [tok, freq] : kept) v.add_token(tok, freq);
    return v;
}

std::vector<int32_t> encode_instance(const Vocab& vocab, const std::string& text,
                                     int64_t max_seq_len) {
    if (max_seq_len < 3) throw ValidationError("max_seq_len must be >= 3");
    auto tokens = tokenize(text);
    // Keep the first tokens; the non-pad region always ends with [SEP].
    size_t capacity = static_cast<size_t>(max_seq_len - 2);
    if (tokens.size() > capacity) tokens.resize(capacity);
    std::vector<int32_t> ids;
    ids.reserve(static_cast<size_t>(max_seq_len));
    ids.push_back(Vocab::kCls);
    for (const auto& tok : tokens) ids.push_back(vocab.encode_token(tok));
    ids.push_back(Vocab::kSep);
    ids.resize(static_cast<size_t>(max_seq_len), Vocab::kPad);
    return ids;
}

std::vector<std::string> read_lines(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot read file " + path);
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        lines.push_back(line);
    }
    return lines;
}

void write_lines(const std::string& path, const std::vector<std::string>& lines) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ValidationError("cannot write file " + path);
    for (const auto& line : lines) out << line << "\n";
}

std::vector<LabeledExample> ingest_tsv(const std::string& path) {
    auto lines = read_lines(path);
    std::vector<LabeledExample> out;
    std::set<std::string> labels;
    for (size_t i = 0; i < lines.size(); ++i) {
        if (lines[i].empty()) continue;
        auto tab = lines[i].find('\t');
        if (tab == std::string::npos)
            throw ValidationError(path + " line " + std::to_string(i + 1) +
                                  ": expected \"text<TAB>label\"");
        LabeledExample ex;
        ex.text = lines[i].substr(0, tab);
        ex.verbalizer = lines[i].substr(tab + 1);
        if (ex.verbalizer.empty())
            throw ValidationError(path + " line " + std::to_string(i + 1) + ": empty label");
        if (tokenize(ex.verbalizer).size() != 1)
            throw ValidationError(path + " line " + std::to_string(i + 1) + ": label '" +
                                  ex.verbalizer + "' is not a single token");
        labels.insert(ex.verbalizer);
        out.push_back(std::move(ex));
    }
    // Class ids follow sorted label order.
    std::map<std::string, int32_t> label_ids;
    int32_t next = 0;
    for (const auto& l : labels) label_ids[l] = next++;
    for (auto& ex : out) ex.label_id = label_ids[ex.verbalizer];
    return out;
}

TaskSpec make_task(const std::string& name, std::vector<LabeledExample> train,
                   std::vector<LabeledExample> test) {
    TaskSpec task;
    task.name = name;
    std::map<std::string, int32_t> label_ids;
    for (const auto& ex : train) label_ids[ex.verbalizer] = 0;
    for (const auto& ex : test) label_ids[ex.verbalizer] = 0;
    int32_t next = 0;
    for (auto& [verbalizer, id] : label_ids) {
        id = next++;
        task.verbalizers.push_back(verbalizer);
    }
    task.num_classes = next;
    for (auto& ex : train) ex.label_id = label_ids[ex.verbalizer];
    for (auto& ex : test) ex.label_id = label_ids[ex.verbalizer];
    task.train = std::move(train);
    task.test = std::move(test);
    task.validate();
    return task;
}

namespace {

// Deterministic pseudo-word list. Words are letter-only so they can never
// collide with digit verbalizers or the cue-token namespace ("zz...").
std::vector<std::string> make_word_list(Rng& rng, int64_t vocab_size,
                                        const std::set<std::string>& exclude) {
    static const char* syllables[] = {"ba", "ce", "di", "fo", "gu", "ha", "ki", "lo", "mu", "ne",
                                      "pa", "re", "si", "to", "vu", "wa", "xe", "yi", "zo", "qa",
                                      "bel", "cor", "dan", "fin", "gor", "hul", "jat", "kem",
                                      "lus", "mor", "nim", "pol", "rup", "sev", "tam", "vix"};
    constexpr size_t n_syll = sizeof(syllables) / sizeof(syllables[0]);
    std::set<std::string> seen;
    std::vector<std::string> words;
    while (static_cast<int64_t>(words.size()) < vocab_size) {
        int parts = 2 + static_cast<int>(rng.uniform_index(3));
        std::string w;
        for (int p = 0; p < parts; ++p) w += syllables[rng.uniform_index(n_syll)];
        if (w.rfind("zz", 0) == 0) continue;  // cue namespace
        if (seen.count(w) || exclude.count(w)) continue;
        seen.insert(w);
        words.push_back(w);
    }
    return words;
}

// Sampler over ranks 1..n with P(rank r) proportional to r^-s.
class ZipfSampler {
public:
    ZipfSampler(int64_t n, double s) : cdf_(static_cast<size_t>(n)) {
        double acc = 0;
        for (int64_t r = 1; r <= n; ++r) {
            acc += std::pow(static_cast<double>(r), -s);
            cdf_[static_cast<size_t>(r - 1)] = acc;
        }
        for (auto& c : cdf_) c /= acc;
    }
    int64_t sample(Rng& rng) const {
        double u = rng.uniform();
        auto it = std::lower_bound(cdf_.begin(), cdf_.end(), u);
        return it == cdf_.end() ? static_cast<int64_t>(cdf_.size()) - 1
                                : static_cast<int64_t>(it - cdf_.begin());
    }

private:
    std::vector<double> cdf_;
};

}  // namespace

std::vector<std::string> gen_clean_corpus(const CorpusGenConfig& cfg) {
    if (cfg.vocab_size < 50) throw ValidationError("corpus vocab_size must be >= 50");
    if (cfg.num_lines < 1 || cfg.line_len_min < 1 || cfg.line_len_max < cfg.line_len_min)
        throw ValidationError("degenerate corpus generation ranges");
    Rng rng(cfg.seed);
    std::set<std::string> exclude(cfg.exclude.begin(), cfg.exclude.end());
    auto words = make_word_list(rng, cfg.vocab_size, exclude);
    ZipfSampler zipf(cfg.vocab_size, cfg.zipf_exponent);
    // Light bigram structure: each word owns a fixed successor triple; with
    // probability 0.2 the next word is drawn from the previous word's triple.
    std::vector<std::array<int64_t, 3>> successors(words.size());
    for (auto& s : successors)
        for (auto& x : s) x = zipf.sample(rng);
    std::vector<std::string> lines;
    lines.reserve(static_cast<size_t>(cfg.num_lines));
    for (int64_t li = 0; li < cfg.num_lines; ++li) {
        int64_t len = cfg.line_len_min +
                      static_cast<int64_t>(rng.uniform_index(
                          static_cast<uint64_t>(cfg.line_len_max - cfg.line_len_min + 1)));
        std::string line;
        int64_t prev = -1;
        for (int64_t t = 0; t < len; ++t) {
            int64_t w;
            if (prev >= 0 && rng.uniform() < 0.2)
                w = successors[static_cast<size_t>(prev)][rng.uniform_index(3)];
            else
                w = zipf.sample(rng);
            if (t) line += ' ';
            line += words[static_cast<size_t>(w)];
            prev = w;
        }
        lines.push_back(std::move(line));
    }
    return lines;
}

std::string cue_token(int32_t class_id, int32_t cue_index) {
    return std::string("zz") + static_cast<char>('a' + class_id) +
           static_cast<char>('a' + cue_index);
}

TaskSpec gen_task(const TaskGenConfig& cfg) {
    if (cfg.num_classes < 2 || cfg.num_classes > 10)
        throw ValidationError("gen_task supports 2..10 classes");
    if (cfg.signal_strength <= 0 || cfg.signal_strength > 1)
        throw ValidationError("signal_strength must be in (0, 1]");
    if (cfg.num_train < cfg.num_classes || cfg.num_test < cfg.num_classes)
        throw ValidationError("infeasible task sizes");
    if (cfg.background_words < 20) throw ValidationError("background_words must be >= 20");
    Rng rng(cfg.seed);
    // Background vocabulary shared across classes.
    auto background = make_word_list(rng, cfg.background_words, {});
    std::set<std::string> used_texts;
    auto gen_example = [&](int32_t label) {
        LabeledExample ex;
        ex.label_id = label;
        ex.verbalizer = std::to_string(label);
        for (int attempt = 0; attempt < 1000; ++attempt) {
            std::vector<std::string> toks;
            int64_t len = 6 + static_cast<int64_t>(rng.uniform_index(5));
            for (int64_t t = 0; t < len; ++t)
                toks.push_back(background[rng.uniform_index(background.size())]);
            int32_t cue_class =
                rng.uniform() < cfg.signal_strength
                    ? label
                    : static_cast<int32_t>(rng.uniform_index(cfg.num_classes));
            // Two cue tokens at random positions.
            for (int c = 0; c < 2; ++c) {
                auto pos = toks.begin() + static_cast<int64_t>(rng.uniform_index(toks.size() + 1));
                toks.insert(pos, cue_token(cue_class, static_cast<int32_t>(rng.uniform_index(3))));
            }
            std::string text = join_tokens(toks);
            if (used_texts.count(text)) continue;
            used_texts.insert(text);
            ex.text = std::move(text);
            return ex;
        }
        throw ValidationError("could not generate distinct task texts");
    };
    TaskSpec task;
    task.name = "synthetic";
    task.num_classes = cfg.num_classes;
    for (int32_t c = 0; c < cfg.num_classes; ++c) task.verbalizers.push_back(std::to_string(c));
    for (int64_t i = 0; i < cfg.num_train; ++i)
        task.train.push_back(gen_example(static_cast<int32_t>(i % cfg.num_classes)));
    for (int64_t i = 0; i < cfg.num_test; ++i)
        task.test.push_back(gen_example(static_cast<int32_t>(i % cfg.num_classes)));
    Rng shuffle_rng = rng.fork(1);
    shuffle_rng.shuffle(task.train);
    shuffle_rng.shuffle(task.test);
    task.validate();
    return task;
}

double cue_oracle_accuracy(const TaskSpec& task, const std::vector<LabeledExample>& examples) {
    if (examples.empty()) throw ValidationError("cue oracle on empty example set");
    int64_t correct = 0;
    for (const auto& ex : examples) {
        std::vector<int64_t> counts(static_cast<size_t>(task.num_classes), 0);
        for (const auto& tok : tokenize(ex.text))
            for (int32_t c = 0; c < task.num_classes; ++c)
                for (int32_t j = 0; j < 3; ++j)
                    if (tok == cue_token(c, j)) ++counts[static_cast<size_t>(c)];
        int32_t best = 0;
        for (int32_t c = 1; c < task.num_classes; ++c)
            if (counts[static_cast<size_t>(c)] > counts[static_cast<size_t>(best)]) best = c;
        if (best == ex.label_id) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(examples.size());
}

}  // namespace contamlab
