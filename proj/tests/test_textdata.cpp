#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "contamlab/common.hpp"
#include "contamlab/rng.hpp"
#include "contamlab/textdata.hpp"

using namespace contamlab;

namespace {

std::string temp_path(const std::string& name) { return "/tmp/contamlab_test_" + name; }

}  // namespace

TEST_CASE("tokenize splits punctuation and lowercases") {
    CHECK(tokenize("I love it! 1") == std::vector<std::string>{"i", "love", "it", "!", "1"});
    CHECK(tokenize("") == std::vector<std::string>{});
    CHECK(tokenize("  A  b ") == std::vector<std::string>{"a", "b"});
    CHECK(tokenize("a,b") == std::vector<std::string>{"a", ",", "b"});
}

TEST_CASE("tokenize is idempotent on random generated lines") {
    CorpusGenConfig cfg;
    cfg.seed = 7;
    cfg.num_lines = 50;
    cfg.vocab_size = 100;
    for (const auto& line : gen_clean_corpus(cfg)) {
        auto toks = tokenize(line);
        CHECK(tokenize(join_tokens(toks)) == toks);
    }
}

TEST_CASE("build_vocab ordering and min_freq") {
    Vocab v = build_vocab({"a a b"}, 1);
    REQUIRE(v.size() == Vocab::kNumReserved + 2);
    CHECK(v.token(0) == "[PAD]");
    CHECK(v.token(1) == "[UNK]");
    CHECK(v.token(2) == "[CLS]");
    CHECK(v.token(3) == "[SEP]");
    CHECK(v.token(4) == "[MASK]");
    CHECK(v.token(Vocab::kNumReserved) == "a");
    CHECK(v.token(Vocab::kNumReserved + 1) == "b");

    Vocab v2 = build_vocab({"a a b"}, 2);
    CHECK(v2.size() == Vocab::kNumReserved + 1);
    CHECK(v2.token(Vocab::kNumReserved) == "a");

    CHECK_THROWS_AS(build_vocab({}, 1), ValidationError);
}

TEST_CASE("build_vocab frequencies match a brute-force recount") {
    CorpusGenConfig cfg;
    cfg.seed = 11;
    cfg.num_lines = 200;
    cfg.vocab_size = 120;
    auto lines = gen_clean_corpus(cfg);
    Vocab v = build_vocab(lines, 1);
    std::map<std::string, int64_t> counts;
    for (const auto& line : lines)
        for (const auto& tok : tokenize(line)) ++counts[tok];
    for (int32_t id = Vocab::kNumReserved; id < v.size(); ++id)
        CHECK(v.frequency(id) == counts.at(v.token(id)));
    // Ordered by (freq desc, token asc).
    for (int32_t id = Vocab::kNumReserved + 1; id < v.size(); ++id) {
        bool ordered = v.frequency(id - 1) > v.frequency(id) ||
                       (v.frequency(id - 1) == v.frequency(id) && v.token(id - 1) < v.token(id));
        CHECK(ordered);
    }
}

TEST_CASE("vocab ids stable across save/load") {
    Vocab v = build_vocab({"gamma alpha alpha beta"}, 1);
    std::string path = temp_path("vocab.tsv");
    v.save(path);
    Vocab r = Vocab::load(path);
    REQUIRE(r.size() == v.size());
    for (int32_t id = 0; id < v.size(); ++id) {
        CHECK(r.token(id) == v.token(id));
        CHECK(r.frequency(id) == v.frequency(id));
    }
    std::remove(path.c_str());
}

TEST_CASE("encode_instance frames and pads exactly") {
    Vocab v = build_vocab({"a b c d e f"}, 1);
    auto ids = encode_instance(v, "a", 5);
    CHECK(ids == std::vector<int32_t>{Vocab::kCls, v.encode_token("a"), Vocab::kSep, Vocab::kPad,
                                      Vocab::kPad});

    // Truncation keeps the first tokens; the non-pad region ends with [SEP].
    auto long_ids = encode_instance(v, "a b c d e f", 5);
    REQUIRE(long_ids.size() == 5);
    CHECK(long_ids[0] == Vocab::kCls);
    CHECK(long_ids[4] == Vocab::kSep);
    CHECK(long_ids[1] == v.encode_token("a"));

    // Unknown tokens become [UNK]; known tokens round-trip.
    auto unk = encode_instance(v, "zzz b", 6);
    CHECK(unk[1] == Vocab::kUnk);
    CHECK(unk[2] == v.encode_token("b"));

    for (int64_t len : {3, 8, 32})
        CHECK(encode_instance(v, "a b c d e f", len).size() == static_cast<size_t>(len));
}

TEST_CASE("ingest_tsv parses and reports line numbers") {
    std::string path = temp_path("task.tsv");
    {
        std::ofstream out(path);
        out << "i love it !\t1\n";
        out << "terrible stuff\t0\n";
    }
    auto examples = ingest_tsv(path);
    REQUIRE(examples.size() == 2);
    CHECK(examples[0].text == "i love it !");
    CHECK(examples[0].verbalizer == "1");
    CHECK(examples[1].verbalizer == "0");
    // Class ids ordered by sorted label string: "0" -> 0, "1" -> 1.
    CHECK(examples[0].label_id == 1);
    CHECK(examples[1].label_id == 0);

    {
        std::ofstream out(path);
        out << "no tab here\n";
    }
    try {
        ingest_tsv(path);
        FAIL("expected ValidationError");
    } catch (const ValidationError& e) {
        CHECK(std::string(e.what()).find("line 1") != std::string::npos);
    }
    std::remove(path.c_str());
}

TEST_CASE("ingest_tsv five labels yields a 5-class task") {
    std::string path = temp_path("sst5.tsv");
    {
        std::ofstream out(path);
        for (int c = 0; c < 5; ++c) out << "text number " << c << "\t" << c << "\n";
    }
    auto train = ingest_tsv(path);
    {
        std::ofstream out(path);
        for (int c = 0; c < 5; ++c) out << "held out text " << c << "\t" << c << "\n";
    }
    TaskSpec task = make_task("sst5ish", train, ingest_tsv(path));
    CHECK(task.num_classes == 5);
    CHECK(task.verbalizers == std::vector<std::string>{"0", "1", "2", "3", "4"});
    std::remove(path.c_str());
}

TEST_CASE("gen_clean_corpus deterministic per seed") {
    CorpusGenConfig cfg;
    cfg.seed = 42;
    cfg.num_lines = 100;
    auto a = gen_clean_corpus(cfg);
    auto b = gen_clean_corpus(cfg);
    CHECK(a == b);
    cfg.seed = 43;
    CHECK(a != gen_clean_corpus(cfg));
    REQUIRE(a.size() == 100);
    for (const auto& line : a) {
        auto toks = tokenize(line);
        CHECK(toks.size() >= static_cast<size_t>(cfg.line_len_min));
        CHECK(toks.size() <= static_cast<size_t>(cfg.line_len_max));
    }
}

TEST_CASE("gen_clean_corpus honors the exclude list") {
    CorpusGenConfig cfg;
    cfg.seed = 5;
    cfg.num_lines = 300;
    cfg.vocab_size = 80;
    auto base = gen_clean_corpus(cfg);
    std::map<std::string, int64_t> counts;
    for (const auto& line : base)
        for (const auto& tok : tokenize(line)) ++counts[tok];
    // Exclude the most frequent word and confirm it disappears.
    std::string top;
    int64_t best = -1;
    for (const auto& [tok, n] : counts)
        if (n > best) best = n, top = tok;
    cfg.exclude = {top};
    for (const auto& line : gen_clean_corpus(cfg))
        for (const auto& tok : tokenize(line)) CHECK(tok != top);
}

TEST_CASE("clean corpus rank-frequency slope tracks the Zipf exponent") {
    CorpusGenConfig cfg;
    cfg.seed = 9;
    cfg.num_lines = 9000;  // ~10^5 tokens at ~12 tokens/line
    cfg.vocab_size = 2000;
    cfg.zipf_exponent = 1.05;
    auto lines = gen_clean_corpus(cfg);
    std::map<std::string, int64_t> counts;
    int64_t total = 0;
    for (const auto& line : lines)
        for (const auto& tok : tokenize(line)) ++counts[tok], ++total;
    REQUIRE(total >= 100000);
    std::vector<int64_t> freqs;
    for (const auto& [tok, n] : counts) freqs.push_back(n);
    std::sort(freqs.rbegin(), freqs.rend());
    // Least-squares slope of log(freq) on log(rank) over the head of the
    // distribution (the tail is noise-dominated at this sample size).
    size_t top = std::min<size_t>(freqs.size(), 200);
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (size_t r = 0; r < top; ++r) {
        double x = std::log(double(r + 1)), y = std::log(double(freqs[r]));
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
    }
    double n = double(top);
    double slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    CHECK(std::abs(-slope - cfg.zipf_exponent) <= 0.2);
}

TEST_CASE("gen_task determinism, verbalizers, and disjointness") {
    TaskGenConfig cfg;
    cfg.seed = 3;
    cfg.num_classes = 5;
    cfg.num_train = 200;
    cfg.num_test = 100;
    TaskSpec a = gen_task(cfg);
    TaskSpec b = gen_task(cfg);
    CHECK(a.verbalizers == std::vector<std::string>{"0", "1", "2", "3", "4"});
    REQUIRE(a.train.size() == 200);
    REQUIRE(a.test.size() == 100);
    for (size_t i = 0; i < a.train.size(); ++i) CHECK(a.train[i].text == b.train[i].text);

    std::set<std::string> train_texts;
    for (const auto& ex : a.train) train_texts.insert(ex.text);
    for (const auto& ex : a.test) CHECK(train_texts.count(ex.text) == 0);
}

TEST_CASE("cue oracle accuracy tracks signal strength") {
    TaskGenConfig cfg;
    cfg.seed = 21;
    cfg.num_classes = 5;
    cfg.num_train = 400;
    cfg.num_test = 400;

    cfg.signal_strength = 1.0;
    TaskSpec full = gen_task(cfg);
    CHECK(cue_oracle_accuracy(full, full.test) == doctest::Approx(1.0));

    // Near the chance floor the oracle hovers around 1/num_classes. The
    // expectation is signal + (1 - signal) / k.
    cfg.signal_strength = 0.05;
    TaskSpec weak = gen_task(cfg);
    double acc = cue_oracle_accuracy(weak, weak.test);
    double expected = 0.05 + 0.95 / 5.0;
    CHECK(std::abs(acc - expected) <= 0.08);

    cfg.signal_strength = 0.5;
    TaskSpec mid = gen_task(cfg);
    double mid_acc = cue_oracle_accuracy(mid, mid.test);
    CHECK(std::abs(mid_acc - (0.5 + 0.5 / 5.0)) <= 0.08);
}

TEST_CASE("gen_task validates its configuration") {
    TaskGenConfig cfg;
    cfg.num_classes = 1;
    CHECK_THROWS_AS(gen_task(cfg), ValidationError);
    cfg.num_classes = 11;
    CHECK_THROWS_AS(gen_task(cfg), ValidationError);
    cfg.num_classes = 5;
    cfg.signal_strength = 0;
    CHECK_THROWS_AS(gen_task(cfg), ValidationError);
    cfg.signal_strength = 1.5;
    CHECK_THROWS_AS(gen_task(cfg), ValidationError);
}

TEST_CASE("read/write lines round trip") {
    std::string path = temp_path("lines.txt");
    std::vector<std::string> lines = {"one line", "two line", ""};
    write_lines(path, lines);
    CHECK(read_lines(path) == lines);
    std::remove(path.c_str());
}
