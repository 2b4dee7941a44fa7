#include <doctest.h>

#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "contamlab/common.hpp"
#include "contamlab/report.hpp"

using namespace contamlab;

namespace {

std::string slurp(const std::string& path) {
    std::ifstream in(path);
    REQUIRE(in);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

AggregateRow row(const std::string& label, double axis, int64_t n, double mem, double mem_sd,
                 double expl, double expl_sd, double unseen, double unseen_sd) {
    AggregateRow r;
    r.cell_label = label;
    r.axis_value = axis;
    r.n = n;
    r.sd_defined = n > 1;
    r.mem_mean = mem;
    r.mem_sd = mem_sd;
    r.expl_mean = expl;
    r.expl_sd = expl_sd;
    r.unseen_acc_mean = unseen;
    r.unseen_acc_sd = unseen_sd;
    return r;
}

std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    return cells;
}

RunRecord run_record(const std::string& cell, int64_t trial, double mem, double expl,
                     double unseen) {
    RunRecord r;
    r.preset = "copies_sweep";
    r.cell_label = cell;
    r.trial = trial;
    r.mem = mem;
    r.expl = expl;
    r.task_acc_unseen = unseen;
    r.manifest_digest = "digest-" + cell;
    r.fingerprint = cell + "#" + std::to_string(trial);
    return r;
}

}  // namespace

TEST_CASE("emit_table writes the pinned column order at two decimals") {
    std::vector<AggregateRow> rows = {
        row("copies=0", 0, 5, 0.125, 1.0, -0.5, 2.0, 55.005, 3.0),
        row("copies=100", 100, 5, 12.341, 4.5, 6.789, 1.5, 50.0, 2.25),
    };
    std::string path = "/tmp/contamlab_table.csv";
    emit_table(rows, TableFormat::csv, path);
    std::ifstream in(path);
    std::string header, line1, line2, extra;
    std::getline(in, header);
    std::getline(in, line1);
    std::getline(in, line2);
    CHECK_FALSE(std::getline(in, extra));  // two data rows + header only
    CHECK(header ==
          "axis,n,mem_mean,mem_sd,expl_mean,expl_sd,unseen_acc_mean,unseen_acc_sd");
    auto cells = split_csv(line2);
    REQUIRE(cells.size() == 8);
    CHECK(cells[0] == "copies=100");
    CHECK(cells[1] == "5");
    CHECK(cells[2] == "12.34");
    CHECK(cells[4] == "6.79");

    // Round trip: parsing reproduces values to 2 decimals.
    auto c1 = split_csv(line1);
    CHECK(std::stod(c1[2]) == doctest::Approx(0.125).epsilon(0.05));
    CHECK(std::stod(c1[6]) == doctest::Approx(55.005).epsilon(0.001));
    std::remove(path.c_str());

    CHECK_THROWS_AS(emit_table({}, TableFormat::csv, path), ValidationError);
}

TEST_CASE("markdown table renders header separators") {
    std::vector<AggregateRow> rows = {row("q=0.5", 0.5, 3, 1, 0, 2, 0, 3, 0)};
    std::string path = "/tmp/contamlab_table.md";
    emit_table(rows, TableFormat::markdown, path);
    std::string text = slurp(path);
    CHECK(text.find("| axis | n | mem_mean |") != std::string::npos);
    CHECK(text.find("| --- |") != std::string::npos);
    CHECK(text.find("| q=0.5 | 3 | 1.00 |") != std::string::npos);
    std::remove(path.c_str());
}

TEST_CASE("appears_vs_seen table uses the epochs/appears/seen layout") {
    std::vector<AggregateRow> rows = {
        row("epochs=1,copies=10", 0, 3, 0, 0, 2.07, 0.5, 40, 1),
        row("epochs=5,copies=10", 1, 3, 0, 0, 6.87, 0.5, 40, 1),
        row("epochs=1,copies=50", 2, 3, 0, 0, 7.73, 0.5, 40, 1),
    };
    std::string path = "/tmp/contamlab_avs.csv";
    emit_appears_vs_seen_table(rows, TableFormat::csv, path);
    std::string text = slurp(path);
    CHECK(text.find("epochs,appears,seen,expl") == 0);
    CHECK(text.find("1,10,10,2.07") != std::string::npos);
    CHECK(text.find("5,10,50,6.87") != std::string::npos);
    CHECK(text.find("1,50,50,7.73") != std::string::npos);
    std::remove(path.c_str());
}

TEST_CASE("emit_plot_data blocks, bands, and x order") {
    std::vector<AggregateRow> rows = {
        row("a", 0, 3, 10, 2, 1, 0.5, 50, 1),
        row("b", 25, 3, 12, 2, 2, 0.5, 49, 1),
        row("c", 100, 3, 20, 2, 5, 0.5, 45, 1),
    };
    Series series = series_from_aggregates("copies_sweep", "copies", rows);
    std::string path = "/tmp/contamlab_plot.tsv";
    emit_plot_data(series, path);
    std::string text = slurp(path);
    // One block per measure.
    CHECK(text.find("# copies_sweep mem (copies)") != std::string::npos);
    CHECK(text.find("# copies_sweep expl (copies)") != std::string::npos);
    CHECK(text.find("# copies_sweep unseen_acc (copies)") != std::string::npos);
    // Mean +/- sd columns and monotone x preserved.
    CHECK(text.find("0\t10\t8\t12") != std::string::npos);
    CHECK(text.find("25\t12\t10\t14") != std::string::npos);
    CHECK(text.find("100\t20\t18\t22") != std::string::npos);
    std::remove(path.c_str());

    // SD absent (n=1): band columns equal the mean column.
    std::vector<AggregateRow> single = {row("a", 0, 1, 10, 99, 1, 99, 50, 99)};
    Series s2 = series_from_aggregates("x", "k", single);
    emit_plot_data(s2, path);
    CHECK(slurp(path).find("0\t10\t10\t10") != std::string::npos);
    std::remove(path.c_str());

    Series broken = series;
    broken.means[0].pop_back();
    CHECK_THROWS_AS(emit_plot_data(broken, path), ValidationError);
}

TEST_CASE("emit_summary covers empty sweeps, digests, and annotations") {
    ExperimentSpec spec = preset("copies_sweep");
    std::string path = "/tmp/contamlab_summary.md";

    emit_summary(spec, {}, path);
    CHECK(slurp(path).find("no completed trials") != std::string::npos);

    std::vector<RunRecord> records;
    for (int t = 0; t < 6; ++t)
        records.push_back(run_record("copies=100", t, 10 + t, 2 + 0.1 * t, 0.5 - 0.01 * t));
    emit_summary(spec, records, path);
    std::string text = slurp(path);
    CHECK(text.find("copies_sweep") != std::string::npos);
    CHECK(text.find("digest-copies=100") != std::string::npos);
    CHECK(text.find("paper-scale, not reproduced here") != std::string::npos);
    CHECK(text.find("Seed tradeoff") != std::string::npos);

    // Re-emission is byte-identical.
    std::string again_path = "/tmp/contamlab_summary2.md";
    emit_summary(spec, records, again_path);
    CHECK(slurp(again_path) == text);

    // Failed trials are listed.
    RunRecord bad = run_record("copies=0", 0, 0, 0, 0);
    bad.failed = true;
    bad.fail_reason = "synthetic failure";
    records.push_back(bad);
    emit_summary(spec, records, path);
    CHECK(slurp(path).find("synthetic failure") != std::string::npos);
    std::remove(path.c_str());
    std::remove(again_path.c_str());
}
