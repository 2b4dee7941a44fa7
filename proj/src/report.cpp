#include "contamlab/report.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "contamlab/common.hpp"

namespace contamlab {

namespace {

std::string fmt2(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.2f", v);
    return buf;
}

std::ofstream open_out(const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ValidationError("cannot open " + path + " for writing");
    return out;
}

const std::vector<std::string> kTableHeader = {"axis",      "n",       "mem_mean",
                                               "mem_sd",    "expl_mean", "expl_sd",
                                               "unseen_acc_mean", "unseen_acc_sd"};

std::vector<std::string> table_row(const AggregateRow& r) {
    return {r.cell_label,
            std::to_string(r.n),
            fmt2(r.mem_mean),
            fmt2(r.mem_sd),
            fmt2(r.expl_mean),
            fmt2(r.expl_sd),
            fmt2(r.unseen_acc_mean),
            fmt2(r.unseen_acc_sd)};
}

void write_rows(std::ofstream& out, const std::vector<std::string>& header,
                const std::vector<std::vector<std::string>>& rows, TableFormat format) {
    auto join = [](const std::vector<std::string>& cells, const char* sep) {
        std::string line;
        for (size_t i = 0; i < cells.size(); ++i) {
            if (i) line += sep;
            line += cells[i];
        }
        return line;
    };
    if (format == TableFormat::csv) {
        out << join(header, ",") << "\n";
        for (const auto& r : rows) out << join(r, ",") << "\n";
    } else {
        out << "| " << join(header, " | ") << " |\n|";
        for (size_t i = 0; i < header.size(); ++i) out << " --- |";
        out << "\n";
        for (const auto& r : rows) out << "| " << join(r, " | ") << " |\n";
    }
}

}  // namespace

void Series::validate() const {
    if (measure_names.size() != means.size() || measure_names.size() != sds.size())
        throw ValidationError("series measure arrays disagree");
    for (size_t m = 0; m < means.size(); ++m)
        if (means[m].size() != x.size() || sds[m].size() != x.size())
            throw ValidationError("series length mismatch for measure " + measure_names[m]);
}

Series series_from_aggregates(const std::string& sweep_name, const std::string& x_label,
                              const std::vector<AggregateRow>& rows) {
    Series s;
    s.sweep_name = sweep_name;
    s.x_label = x_label;
    s.measure_names = {"mem", "expl", "unseen_acc"};
    s.means.resize(3);
    s.sds.resize(3);
    for (const auto& r : rows) {
        s.x.push_back(r.axis_value);
        s.means[0].push_back(r.mem_mean);
        s.sds[0].push_back(r.sd_defined ? r.mem_sd : 0.0);
        s.means[1].push_back(r.expl_mean);
        s.sds[1].push_back(r.sd_defined ? r.expl_sd : 0.0);
        s.means[2].push_back(r.unseen_acc_mean);
        s.sds[2].push_back(r.sd_defined ? r.unseen_acc_sd : 0.0);
    }
    s.validate();
    return s;
}

void emit_table(const std::vector<AggregateRow>& rows, TableFormat format,
                const std::string& path) {
    if (rows.empty()) throw ValidationError("emit_table: no aggregate rows");
    std::vector<std::vector<std::string>> body;
    for (const auto& r : rows) body.push_back(table_row(r));
    auto out = open_out(path);
    write_rows(out, kTableHeader, body, format);
}

void emit_appears_vs_seen_table(const std::vector<AggregateRow>& rows, TableFormat format,
                                const std::string& path) {
    if (rows.empty()) throw ValidationError("emit_table: no aggregate rows");
    std::vector<std::vector<std::string>> body;
    for (const auto& r : rows) {
        long long epochs = 0, copies = 0;
        if (std::sscanf(r.cell_label.c_str(), "epochs=%lld,copies=%lld", &epochs, &copies) != 2)
            throw ValidationError("unexpected appears_vs_seen cell label: " + r.cell_label);
        body.push_back({std::to_string(epochs), std::to_string(copies),
                        std::to_string(epochs * copies), fmt2(r.expl_mean)});
    }
    auto out = open_out(path);
    write_rows(out, {"epochs", "appears", "seen", "expl"}, body, format);
}

void emit_plot_data(const Series& series, const std::string& path) {
    series.validate();
    auto out = open_out(path);
    for (size_t m = 0; m < series.measure_names.size(); ++m) {
        if (m) out << "\n";
        out << "# " << series.sweep_name << " " << series.measure_names[m] << " ("
            << series.x_label << ")\n";
        for (size_t i = 0; i < series.x.size(); ++i) {
            double mean = series.means[m][i], sd = series.sds[m][i];
            out << series.x[i] << "\t" << mean << "\t" << (mean - sd) << "\t" << (mean + sd)
                << "\n";
        }
    }
}

void emit_summary(const ExperimentSpec& spec, const std::vector<RunRecord>& records,
                  const std::string& path) {
    auto out = open_out(path);
    out << "# Sweep summary: " << spec.preset << "\n\n";
    out << "- axis: " << spec.axis_name << "\n";
    out << "- trials per cell: " << spec.num_trials << "\n";
    out << "- trial rerandomization: "
        << (spec.rerandomize_pretrain ? "pretrain + fine-tune seeds" : "fine-tune seed only")
        << "\n\n";

    std::vector<const RunRecord*> ok;
    std::vector<const RunRecord*> failed;
    for (const auto& r : records) (r.failed ? failed : ok).push_back(&r);
    if (ok.empty()) {
        out << "no completed trials\n";
        if (!failed.empty()) {
            out << "\n## Failures\n\n";
            for (const auto* r : failed)
                out << "- " << r->cell_label << " trial " << r->trial << ": " << r->fail_reason
                    << "\n";
        }
        return;
    }

    out << "## Results\n\n";
    auto rows = aggregate(records);
    std::vector<std::vector<std::string>> body;
    for (const auto& r : rows) body.push_back(table_row(r));
    write_rows(out, kTableHeader, body, TableFormat::markdown);
    if (spec.preset == "appears_vs_seen") {
        out << "\nSecond-stage view (seen = appears x epochs):\n\n";
        std::vector<std::vector<std::string>> body2;
        for (const auto& r : rows) {
            long long epochs = 0, copies = 0;
            if (std::sscanf(r.cell_label.c_str(), "epochs=%lld,copies=%lld", &epochs, &copies) ==
                2)
                body2.push_back({std::to_string(epochs), std::to_string(copies),
                                 std::to_string(epochs * copies), fmt2(r.expl_mean)});
        }
        write_rows(out, {"epochs", "appears", "seen", "expl"}, body2, TableFormat::markdown);
    }

    if (!spec.paper_notes.empty()) {
        out << "\n## Reference-scale annotations\n\n";
        out << spec.paper_notes << "\n";
    }

    // Seed-tradeoff section per cell with enough completed trials.
    std::vector<std::string> order;
    std::map<std::string, std::vector<RunRecord>> by_cell;
    for (const auto* r : ok) {
        if (!by_cell.count(r->cell_label)) order.push_back(r->cell_label);
        by_cell[r->cell_label].push_back(*r);
    }
    bool header_done = false;
    for (const auto& label : order) {
        const auto& cell = by_cell[label];
        if (cell.size() < 6) continue;
        if (!header_done) {
            out << "\n## Seed tradeoff\n\n";
            out << "Overlap between the three best exploiters and the three worst "
                   "generalizers, plus the rank correlation between expl and unseen "
                   "accuracy.\n\n";
            header_done = true;
        }
        SeedTradeoffReport rep = seed_tradeoff(cell);
        out << "- " << label << ": overlap " << rep.overlap_top3 << "/3, rank correlation "
            << fmt2(rep.rank_correlation) << " over " << rep.n_trials << " trials\n";
    }

    out << "\n## Audit\n\n";
    std::set<std::string> digests;
    for (const auto* r : ok) digests.insert(r->manifest_digest);
    out << "Manifest digests:\n";
    for (const auto& d : digests) out << "- `" << d << "`\n";
    out << "\nConfig fingerprints:\n";
    std::set<std::string> fps;
    for (const auto* r : ok) fps.insert(r->fingerprint);
    for (const auto& f : fps) out << "- `" << f << "`\n";
    out << "\nSeeds: data " << ok.front()->data_seed << ", pretrain " << ok.front()->pretrain_seed
        << ", fine-tune " << ok.front()->finetune_seed << " + trial index\n";
    if (!failed.empty()) {
        out << "\n## Failures\n\n";
        for (const auto* r : failed)
            out << "- " << r->cell_label << " trial " << r->trial << ": " << r->fail_reason
                << "\n";
    }
}

}  // namespace contamlab
