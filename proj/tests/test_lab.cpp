#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>
#include <vector>

#include "contamlab/common.hpp"
#include "contamlab/lab.hpp"

using namespace contamlab;

namespace {

RunRecord rec(const std::string& cell, double axis, int64_t trial, double mem, double expl,
              double unseen_acc) {
    RunRecord r;
    r.preset = "test";
    r.cell_label = cell;
    r.axis_value = axis;
    r.trial = trial;
    r.mem = mem;
    r.expl = expl;
    r.task_acc_unseen = unseen_acc;
    r.fingerprint = cell + ":" + std::to_string(trial);
    return r;
}

LabConfig tiny_lab_config() {
    LabConfig cfg;
    cfg.clean_corpus_lines = 120;
    cfg.corpus_word_list = 60;
    cfg.task.num_classes = 3;
    cfg.task.num_train = 16;
    cfg.task.num_test = 12;
    cfg.model.num_layers = 1;
    cfg.model.hidden_dim = 16;
    cfg.model.num_heads = 2;
    cfg.model.ffn_dim = 32;
    cfg.model.max_seq_len = 16;
    cfg.finetune.epochs = 1;
    return cfg;
}

}  // namespace

TEST_CASE("presets expose the documented axes") {
    ExperimentSpec copies = preset("copies_sweep");
    REQUIRE(copies.cells.size() == 4);
    std::vector<int64_t> ks;
    for (const auto& c : copies.cells) ks.push_back(c.config.plan.copies);
    CHECK(ks == std::vector<int64_t>{0, 25, 100, 400});

    ExperimentSpec stage = preset("stage_sweep");
    CHECK(stage.cells.size() == 6);  // {first,middle,last} x {decay,constant}
    std::set<std::string> labels;
    for (const auto& c : stage.cells) labels.insert(c.label);
    CHECK(labels.count("first/decay"));
    CHECK(labels.count("last/constant"));

    ExperimentSpec avs = preset("appears_vs_seen");
    REQUIRE(avs.cells.size() == 3);
    std::vector<std::pair<int64_t, int64_t>> cells;
    for (const auto& c : avs.cells)
        cells.emplace_back(c.config.pretrain.epochs, c.config.plan.copies);
    CHECK(cells == std::vector<std::pair<int64_t, int64_t>>{{1, 10}, {5, 10}, {1, 50}});
    for (const auto& c : avs.cells) CHECK(c.config.second_stage);

    ExperimentSpec masks = preset("label_mask_sweep");
    REQUIRE(masks.cells.size() == 4);
    for (const auto& c : masks.cells) CHECK(c.config.plan.copies == 100);
    CHECK(masks.cells[3].config.pretrain.label_mask_prob == 1.0);

    ExperimentSpec baseline = preset("baseline");
    CHECK(baseline.cells.size() == 1);
    CHECK(baseline.cells[0].config.plan.copies == 0);
    CHECK(baseline.num_trials == 10);

    for (const auto& name : preset_names()) CHECK(preset(name).preset == name);
    CHECK_THROWS_AS(preset("does_not_exist"), ValidationError);
}

TEST_CASE("RunRecord serialization round trips") {
    RunRecord r = rec("copies=100", 100, 4, 12.5, 3.25, 0.55);
    r.manifest_digest = "abc123";
    r.trace_digest = "def456";
    r.wall_time_sec = 7.5;
    RunRecord back = RunRecord::from_json(r.to_json());
    CHECK(back.cell_label == r.cell_label);
    CHECK(back.trial == r.trial);
    CHECK(back.mem == r.mem);
    CHECK(back.expl == r.expl);
    CHECK(back.task_acc_unseen == r.task_acc_unseen);
    CHECK(back.fingerprint == r.fingerprint);
    CHECK(back.trace_digest == r.trace_digest);
    CHECK(back.to_json() == r.to_json());  // fingerprint-stable re-serialization
}

TEST_CASE("aggregate matches the closed form on {10, 20}") {
    std::vector<RunRecord> records = {rec("a", 0, 0, 10, 10, 0.10), rec("a", 0, 1, 20, 20, 0.20)};
    auto rows = aggregate(records);
    REQUIRE(rows.size() == 1);
    CHECK(rows[0].n == 2);
    CHECK(rows[0].mem_mean == doctest::Approx(15.0));
    CHECK(rows[0].mem_sd == doctest::Approx(7.0711).epsilon(1e-4));
    CHECK(rows[0].mem_sem == doctest::Approx(7.0711 / std::sqrt(2.0)).epsilon(1e-4));
    CHECK(rows[0].expl_mean == doctest::Approx(15.0));
    CHECK(rows[0].unseen_acc_mean == doctest::Approx(15.0));  // percentage points
    CHECK(rows[0].sd_defined);

    // Single record: SD undefined.
    auto single = aggregate({rec("b", 1, 0, 5, 5, 0.5)});
    REQUIRE(single.size() == 1);
    CHECK_FALSE(single[0].sd_defined);

    // Permutation invariance over trials.
    std::vector<RunRecord> swapped = {records[1], records[0]};
    auto rows2 = aggregate(swapped);
    CHECK(rows2[0].mem_mean == rows[0].mem_mean);
    CHECK(rows2[0].mem_sd == rows[0].mem_sd);

    // Failed trials are excluded.
    RunRecord bad = rec("a", 0, 2, 999, 999, 0.99);
    bad.failed = true;
    records.push_back(bad);
    CHECK(aggregate(records)[0].n == 2);
}

TEST_CASE("spearman correlation on hand data") {
    CHECK(spearman_rank_correlation({1, 2, 3, 4}, {10, 20, 30, 40}) == doctest::Approx(1.0));
    CHECK(spearman_rank_correlation({1, 2, 3, 4}, {40, 30, 20, 10}) == doctest::Approx(-1.0));
    // Distinct ranks: classic formula 1 - 6*sum(d^2)/(n(n^2-1)).
    std::vector<double> x = {1, 2, 3, 4, 5, 6};
    std::vector<double> y = {2, 1, 4, 3, 6, 5};  // d = 1 each, sum d^2 = 6
    double expected = 1.0 - 6.0 * 6.0 / (6.0 * 35.0);
    CHECK(spearman_rank_correlation(x, y) == doctest::Approx(expected));
    CHECK_THROWS_AS(spearman_rank_correlation({1}, {1}), ValidationError);
}

TEST_CASE("seed_tradeoff construction: perfect anti-correlation") {
    std::vector<RunRecord> records;
    for (int t = 0; t < 6; ++t)
        records.push_back(rec("a", 0, t, 0, double(t), 1.0 - 0.1 * double(t)));
    SeedTradeoffReport rep = seed_tradeoff(records);
    CHECK(rep.n_trials == 6);
    CHECK(rep.overlap_top3 == 3);
    CHECK(rep.rank_correlation == doctest::Approx(-1.0));

    CHECK_THROWS_AS(seed_tradeoff({records[0], records[1]}), ValidationError);
    std::vector<RunRecord> mixed = records;
    mixed[0].cell_label = "b";
    CHECK_THROWS_AS(seed_tradeoff(mixed), ValidationError);
}

TEST_CASE("seed_tradeoff matches an exhaustive enumeration oracle") {
    // Expl ranks fixed as 0..5; generalization is every permutation of 6
    // distinct values. The oracle recomputes overlap and Spearman by brute
    // force for each permutation; the expected overlap over all permutations
    // equals the hypergeometric mean 3*3/6 = 1.5.
    std::vector<int> perm = {0, 1, 2, 3, 4, 5};
    double overlap_sum = 0;
    int64_t count = 0;
    do {
        std::vector<RunRecord> records;
        for (int t = 0; t < 6; ++t)
            records.push_back(rec("a", 0, t, 0, double(t), double(perm[size_t(t)])));
        SeedTradeoffReport rep = seed_tradeoff(records);

        // Brute-force overlap: top-3 by expl are trials {5,4,3}; bottom-3 by
        // generalization are the trials whose perm value is in {0,1,2}.
        int64_t expected_overlap = 0;
        for (int t = 3; t < 6; ++t)
            if (perm[size_t(t)] <= 2) ++expected_overlap;
        CHECK(rep.overlap_top3 == expected_overlap);

        // Brute-force Spearman with distinct ranks.
        double sum_d2 = 0;
        for (int t = 0; t < 6; ++t) {
            double d = double(t) - double(perm[size_t(t)]);
            sum_d2 += d * d;
        }
        double expected_rho = 1.0 - 6.0 * sum_d2 / (6.0 * 35.0);
        CHECK(rep.rank_correlation == doctest::Approx(expected_rho).epsilon(1e-12));

        overlap_sum += double(rep.overlap_top3);
        ++count;
    } while (std::next_permutation(perm.begin(), perm.end()));
    CHECK(count == 720);
    CHECK(overlap_sum / double(count) == doctest::Approx(1.5));
}

TEST_CASE("run_sweep single K=0 cell, resume, and record accounting") {
    ExperimentSpec spec;
    spec.preset = "unit";
    spec.axis_name = "copies";
    spec.num_trials = 1;
    SweepCell cell;
    cell.label = "copies=0";
    cell.axis_value = 0;
    cell.config = tiny_lab_config();
    cell.config.plan.copies = 0;
    spec.cells.push_back(cell);
    spec.out_dir = "/tmp/contamlab_sweep_unit";
    std::filesystem::remove_all(spec.out_dir);

    auto records = run_sweep(spec);
    REQUIRE(records.size() == 1);
    CHECK_FALSE(records[0].failed);
    CHECK(records[0].cell_label == "copies=0");
    CHECK(records[0].manifest_digest != "");
    CHECK(records[0].trace_digest != "");
    CHECK(records[0].wall_time_sec > 0);

    // Resume: nothing re-runs, the records file is unchanged.
    auto before = std::filesystem::file_size(spec.out_dir + "/records.jsonl");
    auto again = run_sweep(spec);
    CHECK(again.size() == 1);
    CHECK(std::filesystem::file_size(spec.out_dir + "/records.jsonl") == before);
    CHECK(again[0].fingerprint == records[0].fingerprint);
    CHECK(again[0].mem == records[0].mem);

    // More trials: only the new ones run; |axis| x num_trials records total.
    spec.num_trials = 3;
    auto extended = run_sweep(spec);
    CHECK(extended.size() == 3);
    std::set<std::string> fps;
    for (const auto& r : extended) fps.insert(r.fingerprint);
    CHECK(fps.size() == 3);

    auto loaded = load_records(spec.out_dir + "/records.jsonl");
    CHECK(loaded.size() == 3);
    std::filesystem::remove_all(spec.out_dir);
}

TEST_CASE("spec validation rejects malformed sweeps") {
    ExperimentSpec spec;
    spec.preset = "bad";
    CHECK_THROWS_AS(spec.validate(), ValidationError);  // no cells
    SweepCell cell;
    cell.label = "x";
    spec.cells.push_back(cell);
    spec.num_trials = 0;
    CHECK_THROWS_AS(spec.validate(), ValidationError);
    spec.num_trials = 1;
    spec.cells.push_back(cell);  // duplicate label
    CHECK_THROWS_AS(spec.validate(), ValidationError);
}
