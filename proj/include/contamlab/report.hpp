#pragma once

#include <optional>
#include <string>
#include <vector>

#include "contamlab/lab.hpp"

namespace contamlab {

enum class TableFormat { csv, markdown };

// Plot-ready series for one sweep: per-measure mean/SD arrays over the axis.
struct Series {
    std::string sweep_name;
    std::string x_label;
    std::vector<double> x;
    std::vector<std::string> measure_names;       // e.g. {"mem", "expl", "unseen_acc"}
    std::vector<std::vector<double>> means;       // one array per measure
    std::vector<std::vector<double>> sds;         // same shapes; zeros when SD undefined
    std::optional<double> baseline_mem;
    std::optional<double> baseline_expl;

    void validate() const;
};

Series series_from_aggregates(const std::string& sweep_name, const std::string& x_label,
                              const std::vector<AggregateRow>& rows);

// Aggregate table with columns (axis, n, mem_mean, mem_sd, expl_mean, expl_sd,
// unseen_acc_mean, unseen_acc_sd) at two decimals. Throws on empty input.
void emit_table(const std::vector<AggregateRow>& rows, TableFormat format,
                const std::string& path);

// Second-stage table in (epochs, appears, seen, expl) layout. Cell labels must
// be "epochs=E,copies=K"; "seen" is appears x epochs.
void emit_appears_vs_seen_table(const std::vector<AggregateRow>& rows, TableFormat format,
                                const std::string& path);

// Tab-separated blocks, one per measure, columns x / mean / mean-sd / mean+sd.
void emit_plot_data(const Series& series, const std::string& path);

// Markdown report: header, aggregate table, seed-tradeoff section when a cell
// has enough trials, reference-scale annotations, manifest digests.
void emit_summary(const ExperimentSpec& spec, const std::vector<RunRecord>& records,
                  const std::string& path);

}  // namespace contamlab
