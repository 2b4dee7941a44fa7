#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "contamlab/common.hpp"
#include "contamlab/contamination.hpp"
#include "contamlab/evaluation.hpp"
#include "contamlab/rng.hpp"
#include "contamlab/textdata.hpp"
#include "contamlab/training.hpp"

using namespace contamlab;

namespace {

struct EvalSetup {
    TaskSpec task;
    std::vector<LabeledExample> seen, unseen;
    Vocab vocab;
    ModelCheckpoint checkpoint;
    ContaminationManifest manifest;
};

EvalSetup eval_setup(int64_t copies, uint64_t seed = 70) {
    EvalSetup s;
    TaskGenConfig task_cfg;
    task_cfg.seed = seed;
    task_cfg.num_classes = 3;
    task_cfg.num_train = 24;
    task_cfg.num_test = 16;
    s.task = gen_task(task_cfg);
    CorpusGenConfig corpus_cfg;
    corpus_cfg.seed = seed + 1;
    corpus_cfg.num_lines = 100;
    corpus_cfg.vocab_size = 60;
    auto clean = gen_clean_corpus(corpus_cfg);
    auto split = split_seen_unseen(s.task, 0.5, seed + 2);
    s.seen = split.first;
    s.unseen = split.second;
    ContaminationPlan plan;
    plan.copies = copies;
    ContaminatedCorpus corpus = inject(clean, s.task, s.seen, plan, seed + 3);
    s.manifest = corpus.manifest;
    std::vector<std::string> vocab_lines = corpus.lines;
    for (const auto* pool : {&s.task.train, &s.task.test})
        for (const auto& ex : *pool) vocab_lines.push_back(ex.text + " " + ex.verbalizer);
    s.vocab = build_vocab(vocab_lines, 1);
    ModelConfig model;
    model.num_layers = 1;
    model.hidden_dim = 16;
    model.num_heads = 2;
    model.ffn_dim = 32;
    model.vocab_size = s.vocab.size();
    model.max_seq_len = 16;
    PretrainConfig cfg;
    cfg.batch_size = 16;
    cfg.epochs = 1;
    cfg.seed = seed + 4;
    s.checkpoint = pretrain(corpus.lines, corpus.manifest, s.vocab, model, cfg).checkpoint;
    return s;
}

}  // namespace

TEST_CASE("restricted_argmax ties break to the lowest token id") {
    std::vector<float> logits = {0.f, 3.f, 1.f, 3.f, 2.f};
    CHECK(restricted_argmax(logits.data(), {1, 3}) == 1);
    CHECK(restricted_argmax(logits.data(), {3, 1}) == 1);
    CHECK(restricted_argmax(logits.data(), {2, 4}) == 4);
    CHECK(restricted_argmax(logits.data(), {0}) == 0);
    CHECK_THROWS_AS(restricted_argmax(logits.data(), {}), ValidationError);
}

TEST_CASE("restricted_argmax is invariant under constant logit shifts") {
    Rng rng(71);
    for (int rep = 0; rep < 1000; ++rep) {
        std::vector<float> logits(20);
        for (auto& v : logits) v = float(rng.normal() * 3.0);
        std::vector<int32_t> candidates = {2, 5, 9, 14, 19};
        int32_t base = restricted_argmax(logits.data(), candidates);
        float shift = float(rng.normal() * 10.0);
        std::vector<float> shifted = logits;
        for (auto& v : shifted) v += shift;
        CHECK(restricted_argmax(shifted.data(), candidates) == base);
    }
}

TEST_CASE("mem_probe arithmetic matches a recount of its per-instance records") {
    EvalSetup s = eval_setup(3);
    ProbeResult probe =
        mem_probe(s.checkpoint, s.vocab, s.task, s.seen, s.unseen, LabelFormat::text_then_label);
    CHECK(probe.records.size() == s.seen.size() + s.unseen.size());

    int64_t seen_hits = 0, seen_n = 0, unseen_hits = 0, unseen_n = 0;
    for (const auto& rec : probe.records) {
        CHECK(rec.correct == (rec.pred == rec.gold));
        if (rec.side == "seen") {
            ++seen_n;
            seen_hits += rec.correct ? 1 : 0;
        } else {
            REQUIRE(rec.side == "unseen");
            ++unseen_n;
            unseen_hits += rec.correct ? 1 : 0;
        }
    }
    CHECK(probe.acc_seen == double(seen_hits) / double(seen_n));
    CHECK(probe.acc_unseen == double(unseen_hits) / double(unseen_n));
    CHECK(probe.mem == 100.0 * (probe.acc_seen - probe.acc_unseen));
    CHECK(probe.acc_seen >= 0);
    CHECK(probe.acc_seen <= 1);
}

TEST_CASE("mem_probe requires single-token verbalizers present in the vocab") {
    EvalSetup s = eval_setup(1);
    TaskSpec broken = s.task;
    broken.verbalizers[0] = "nosuchtokenanywhere";
    for (auto& ex : broken.train)
        if (ex.label_id == 0) ex.verbalizer = "nosuchtokenanywhere";
    CHECK_THROWS_AS(mem_probe(s.checkpoint, s.vocab, broken, s.seen, s.unseen,
                              LabelFormat::text_then_label),
                    ValidationError);
}

TEST_CASE("finetune is deterministic per seed and honors the subset size") {
    EvalSetup s = eval_setup(1);
    FinetuneConfig cfg;
    cfg.epochs = 1;
    cfg.seed = 72;
    FinetunedModel a = finetune(s.checkpoint, s.vocab, s.task, cfg);
    FinetunedModel b = finetune(s.checkpoint, s.vocab, s.task, cfg);
    const auto& pa = a.params.named();
    const auto& pb = b.params.named();
    REQUIRE(pa.size() == pb.size());
    for (size_t i = 0; i < pa.size(); ++i)
        CHECK(std::memcmp(pa[i].second.data(), pb[i].second.data(),
                          sizeof(float) * size_t(pa[i].second.numel())) == 0);
    CHECK(a.params.has("cls.w"));
    CHECK(a.final_train_loss == b.final_train_loss);

    cfg.seed = 73;
    FinetunedModel c = finetune(s.checkpoint, s.vocab, s.task, cfg);
    bool any_diff = false;
    const auto& pc = c.params.named();
    for (size_t i = 0; i < pa.size() && !any_diff; ++i)
        any_diff = std::memcmp(pa[i].second.data(), pc[i].second.data(),
                               sizeof(float) * size_t(pa[i].second.numel())) != 0;
    CHECK(any_diff);

    cfg.train_subset_size = 8;
    FinetunedModel d = finetune(s.checkpoint, s.vocab, s.task, cfg);
    CHECK(d.params.has("cls.w"));
}

TEST_CASE("task_eval accuracy equals a recount and permits tie-breaking checks") {
    EvalSetup s = eval_setup(1);
    FinetuneConfig cfg;
    cfg.epochs = 1;
    cfg.seed = 74;
    FinetunedModel model = finetune(s.checkpoint, s.vocab, s.task, cfg);
    EvalResult result = task_eval(model, s.vocab, s.unseen, "unseen");
    CHECK(result.records.size() == s.unseen.size());
    int64_t hits = 0;
    for (const auto& rec : result.records) {
        CHECK(rec.side == "unseen");
        CHECK(rec.correct == (rec.pred == rec.gold));
        hits += rec.correct ? 1 : 0;
    }
    CHECK(result.accuracy == double(hits) / double(s.unseen.size()));
}

TEST_CASE("expl_score arithmetic is exact") {
    EvalSetup s = eval_setup(2);
    FinetuneConfig cfg;
    cfg.epochs = 1;
    cfg.seed = 75;
    FinetunedModel model = finetune(s.checkpoint, s.vocab, s.task, cfg);
    FinetuneResult result = expl_score(model, s.vocab, s.seen, s.unseen);
    CHECK(result.expl == 100.0 * (result.acc_seen - result.acc_unseen));
    CHECK(result.finetune_seed == 75);
    CHECK(result.records.size() == s.seen.size() + s.unseen.size());

    int64_t seen_hits = 0, unseen_hits = 0;
    for (const auto& rec : result.records)
        (rec.side == "seen" ? seen_hits : unseen_hits) += rec.correct ? 1 : 0;
    CHECK(result.acc_seen == double(seen_hits) / double(s.seen.size()));
    CHECK(result.acc_unseen == double(unseen_hits) / double(s.unseen.size()));
}

TEST_CASE("instance records round trip through JSONL") {
    std::vector<InstanceRecord> records = {{"seen:0", "seen", 1, 1, true},
                                           {"unseen:3", "unseen", 0, 2, false}};
    std::string path = "/tmp/contamlab_records.jsonl";
    write_instance_records(path, records);
    std::ifstream in(path);
    std::string line;
    std::vector<std::string> lines;
    while (std::getline(in, line)) lines.push_back(line);
    REQUIRE(lines.size() == 2);
    CHECK(lines[0].find("\"instance_id\":\"seen:0\"") != std::string::npos);
    CHECK(lines[0].find("\"correct\":true") != std::string::npos);
    CHECK(lines[1].find("\"pred\":2") != std::string::npos);
    std::remove(path.c_str());
}

TEST_CASE("baseline_run labels its records uncontaminated") {
    EvalSetup s = eval_setup(0);
    FinetuneConfig cfg;
    cfg.epochs = 1;
    BaselineStats stats = baseline_run(s.checkpoint, s.vocab, s.task, s.seen, s.unseen,
                                       LabelFormat::text_then_label, cfg, {80, 81, 82});
    CHECK(stats.manifest_digest == "uncontaminated");
    CHECK(stats.expl_values.size() == 3);
    CHECK(stats.mem_values.size() == 3);
    double mean = 0;
    for (double v : stats.expl_values) mean += v / 3.0;
    CHECK(stats.expl_mean == doctest::Approx(mean));
    double ss = 0;
    for (double v : stats.expl_values) ss += (v - mean) * (v - mean);
    CHECK(stats.expl_sd == doctest::Approx(std::sqrt(ss / 2.0)));
}
