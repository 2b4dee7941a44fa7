#include "contamlab/contamination.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <json.hpp>

#include "contamlab/common.hpp"
#include "contamlab/rng.hpp"

namespace contamlab {

using nlohmann::json;

std::string placement_name(Placement p) {
    switch (p) {
        case Placement::shuffled: return "shuffled";
        case Placement::stage_first: return "stage_first";
        case Placement::stage_middle: return "stage_middle";
        case Placement::stage_last: return "stage_last";
    }
    throw ValidationError("bad placement enum");
}

Placement parse_placement(const std::string& name) {
    if (name == "shuffled") return Placement::shuffled;
    if (name == "stage_first" || name == "first") return Placement::stage_first;
    if (name == "stage_middle" || name == "middle") return Placement::stage_middle;
    if (name == "stage_last" || name == "last") return Placement::stage_last;
    throw ValidationError("unknown placement '" + name + "'");
}

std::string label_format_name(LabelFormat f) {
    return f == LabelFormat::text_then_label ? "text_then_label" : "label_then_text";
}

LabelFormat parse_label_format(const std::string& name) {
    if (name == "text_then_label") return LabelFormat::text_then_label;
    if (name == "label_then_text") return LabelFormat::label_then_text;
    throw ValidationError("unknown label format '" + name + "'");
}

void ContaminationPlan::validate() const {
    if (copies < 0) throw ValidationError("copies must be >= 0");
    if (seen_fraction <= 0 || seen_fraction >= 1)
        throw ValidationError("seen_fraction must be in (0, 1)");
}

static json plan_to_json_obj(const ContaminationPlan& p) {
    return json{{"copies", p.copies},
                {"seen_fraction", p.seen_fraction},
                {"placement", placement_name(p.placement)},
                {"label_format", label_format_name(p.label_format)},
                {"include_train_labels", p.include_train_labels}};
}

static ContaminationPlan plan_from_json_obj(const json& j) {
    ContaminationPlan p;
    p.copies = j.at("copies").get<int64_t>();
    p.seen_fraction = j.at("seen_fraction").get<double>();
    p.placement = parse_placement(j.at("placement").get<std::string>());
    p.label_format = parse_label_format(j.at("label_format").get<std::string>());
    p.include_train_labels = j.at("include_train_labels").get<bool>();
    return p;
}

std::string ContaminationPlan::to_json() const { return plan_to_json_obj(*this).dump(); }

ContaminationPlan ContaminationPlan::from_json(const std::string& json_text) {
    return plan_from_json_obj(json::parse(json_text));
}

std::string ContaminationManifest::to_json() const {
    json j;
    j["plan"] = plan_to_json_obj(plan);
    j["seed"] = seed;
    j["clean_line_count"] = clean_line_count;
    j["total_line_count"] = total_line_count;
    j["section_bounds"] = section_bounds;
    j["source_lines"] = source_lines;
    json recs = json::array();
    for (const auto& r : lines)
        recs.push_back(json{{"source_id", r.source_id},
                            {"copy_index", r.copy_index},
                            {"corpus_index", r.corpus_index},
                            {"section", r.section}});
    j["lines"] = std::move(recs);
    return j.dump();
}

ContaminationManifest ContaminationManifest::from_json(const std::string& json_text) {
    json j = json::parse(json_text);
    ContaminationManifest m;
    m.plan = plan_from_json_obj(j.at("plan"));
    m.seed = j.at("seed").get<uint64_t>();
    m.clean_line_count = j.at("clean_line_count").get<int64_t>();
    m.total_line_count = j.at("total_line_count").get<int64_t>();
    auto sb = j.at("section_bounds");
    for (size_t i = 0; i < 4; ++i) m.section_bounds[i] = sb.at(i).get<int64_t>();
    m.source_lines = j.at("source_lines").get<std::map<std::string, std::string>>();
    for (const auto& r : j.at("lines")) {
        InjectedLineRecord rec;
        rec.source_id = r.at("source_id").get<std::string>();
        rec.copy_index = r.at("copy_index").get<int64_t>();
        rec.corpus_index = r.at("corpus_index").get<int64_t>();
        rec.section = r.at("section").get<int32_t>();
        m.lines.push_back(std::move(rec));
    }
    return m;
}

void ContaminationManifest::save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ValidationError("cannot write manifest " + path);
    out << to_json() << "\n";
}

ContaminationManifest ContaminationManifest::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot read manifest " + path);
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return from_json(text);
}

std::string ContaminationManifest::digest() const { return hex_digest(fnv1a64(to_json())); }

std::pair<std::vector<LabeledExample>, std::vector<LabeledExample>> split_seen_unseen(
    const TaskSpec& task, double seen_fraction, uint64_t seed) {
    if (task.test.empty()) throw ValidationError("cannot split an empty test set");
    if (seen_fraction <= 0 || seen_fraction >= 1)
        throw ValidationError("seen_fraction must be in (0, 1)");
    int64_t n = static_cast<int64_t>(task.test.size());
    int64_t n_seen = static_cast<int64_t>(std::llround(seen_fraction * static_cast<double>(n)));
    if (n_seen < 1 || n_seen >= n)
        throw ValidationError("seen_fraction " + std::to_string(seen_fraction) +
                              " yields an empty split side");
    // Stratified by class: equal class composition on both sides makes the
    // seen-minus-unseen measures exactly zero for any instance-independent
    // predictor, so they respond to per-instance memorization only.
    std::map<int32_t, std::vector<int64_t>> by_class;
    for (int64_t i = 0; i < n; ++i)
        by_class[task.test[static_cast<size_t>(i)].label_id].push_back(i);
    Rng rng(seed);
    std::vector<int64_t> seen_idx, unseen_idx;
    // Cumulative rounding keeps per-class counts proportional while the
    // total lands exactly on n_seen.
    double target = 0;
    int64_t assigned = 0;
    for (auto& [label, members] : by_class) {
        rng.shuffle(members);
        target += seen_fraction * static_cast<double>(members.size());
        int64_t want = static_cast<int64_t>(std::llround(target)) - assigned;
        want = std::clamp<int64_t>(want, 0, static_cast<int64_t>(members.size()));
        assigned += want;
        for (size_t i = 0; i < members.size(); ++i)
            (static_cast<int64_t>(i) < want ? seen_idx : unseen_idx).push_back(members[i]);
    }
    // Settle any residual rounding difference against the requested total.
    while (static_cast<int64_t>(seen_idx.size()) > n_seen) {
        unseen_idx.push_back(seen_idx.back());
        seen_idx.pop_back();
    }
    while (static_cast<int64_t>(seen_idx.size()) < n_seen) {
        seen_idx.push_back(unseen_idx.back());
        unseen_idx.pop_back();
    }
    std::sort(seen_idx.begin(), seen_idx.end());
    std::sort(unseen_idx.begin(), unseen_idx.end());
    std::vector<LabeledExample> seen, unseen;
    for (int64_t i : seen_idx) seen.push_back(task.test[static_cast<size_t>(i)]);
    for (int64_t i : unseen_idx) unseen.push_back(task.test[static_cast<size_t>(i)]);
    return {std::move(seen), std::move(unseen)};
}

std::string format_labeled_line(const LabeledExample& example, const ContaminationPlan& plan) {
    if (tokenize(example.verbalizer).size() != 1)
        throw ValidationError("verbalizer '" + example.verbalizer + "' is not a single token");
    if (example.text.empty()) {
        std::cerr << "warning: labeled example with empty text, line is the bare verbalizer\n";
        return example.verbalizer;
    }
    return plan.label_format == LabelFormat::text_then_label
               ? example.text + " " + example.verbalizer
               : example.verbalizer + " " + example.text;
}

namespace {

struct SourceLine {
    std::string id;
    std::string text;
};

std::vector<SourceLine> labeled_sources(const TaskSpec& task,
                                        const std::vector<LabeledExample>& seen_test,
                                        const ContaminationPlan& plan) {
    std::vector<SourceLine> out;
    if (plan.include_train_labels)
        for (size_t i = 0; i < task.train.size(); ++i)
            out.push_back({"train:" + std::to_string(i), format_labeled_line(task.train[i], plan)});
    for (size_t i = 0; i < seen_test.size(); ++i)
        out.push_back({"seen:" + std::to_string(i), format_labeled_line(seen_test[i], plan)});
    return out;
}

struct Item {
    bool injected = false;
    int64_t source = 0;  // index into sources (injected) or clean_lines
    int64_t copy = 0;
};

}  // namespace

ContaminatedCorpus inject(const std::vector<std::string>& clean_lines, const TaskSpec& task,
                          const std::vector<LabeledExample>& seen_test,
                          const ContaminationPlan& plan, uint64_t seed) {
    plan.validate();
    if (clean_lines.empty()) throw ValidationError("clean corpus is empty");
    auto sources = labeled_sources(task, seen_test, plan);
    if (plan.copies > 0 && sources.empty())
        throw ValidationError("copies > 0 but no labeled instances to inject");

    std::vector<Item> injected;
    for (int64_t k = 0; k < plan.copies; ++k)
        for (size_t s = 0; s < sources.size(); ++s)
            injected.push_back({true, static_cast<int64_t>(s), k});
    int64_t n_clean = static_cast<int64_t>(clean_lines.size());
    int64_t n_total = n_clean + static_cast<int64_t>(injected.size());

    Rng rng(seed);
    std::vector<Item> order;
    order.reserve(static_cast<size_t>(n_total));
    ContaminationManifest manifest;
    manifest.plan = plan;
    manifest.seed = seed;
    manifest.clean_line_count = n_clean;
    manifest.total_line_count = n_total;

    if (plan.placement == Placement::shuffled) {
        for (int64_t i = 0; i < n_clean; ++i) order.push_back({false, i, 0});
        order.insert(order.end(), injected.begin(), injected.end());
        rng.shuffle(order);
    } else {
        // Three equal (+-1) sections; contaminated lines confined to one,
        // each section shuffled individually.
        int64_t base = n_total / 3, rem = n_total % 3;
        std::array<int64_t, 3> sizes{base + (rem > 0 ? 1 : 0), base + (rem > 1 ? 1 : 0), base};
        int32_t target = plan.placement == Placement::stage_first  ? 0
                         : plan.placement == Placement::stage_middle ? 1
                                                                     : 2;
        if (static_cast<int64_t>(injected.size()) > sizes[static_cast<size_t>(target)])
            throw ValidationError("contaminated lines do not fit in one corpus section");
        manifest.section_bounds = {0, sizes[0], sizes[0] + sizes[1], n_total};
        int64_t clean_next = 0;
        for (int32_t sec = 0; sec < 3; ++sec) {
            std::vector<Item> section;
            if (sec == target) section = injected;
            while (static_cast<int64_t>(section.size()) < sizes[static_cast<size_t>(sec)])
                section.push_back({false, clean_next++, 0});
            Rng sec_rng = rng.fork(static_cast<uint64_t>(sec));
            sec_rng.shuffle(section);
            order.insert(order.end(), section.begin(), section.end());
        }
    }

    ContaminatedCorpus out;
    out.lines.reserve(static_cast<size_t>(n_total));
    for (int64_t idx = 0; idx < n_total; ++idx) {
        const Item& it = order[static_cast<size_t>(idx)];
        if (it.injected) {
            const SourceLine& src = sources[static_cast<size_t>(it.source)];
            out.lines.push_back(src.text);
            InjectedLineRecord rec;
            rec.source_id = src.id;
            rec.copy_index = it.copy;
            rec.corpus_index = idx;
            if (plan.placement != Placement::shuffled) {
                rec.section = idx < manifest.section_bounds[1]   ? 0
                              : idx < manifest.section_bounds[2] ? 1
                                                                 : 2;
            }
            manifest.lines.push_back(std::move(rec));
        } else {
            out.lines.push_back(clean_lines[static_cast<size_t>(it.source)]);
        }
    }
    for (const auto& src : sources) manifest.source_lines[src.id] = src.text;
    out.manifest = std::move(manifest);
    return out;
}

VerifyReport verify_manifest(const std::vector<std::string>& corpus_lines,
                             const ContaminationManifest& manifest,
                             const std::vector<std::string>& clean_lines) {
    VerifyReport report;
    auto fail = [&](const std::string& msg) {
        report.pass = false;
        report.failures.push_back(msg);
    };

    int64_t n_sources = static_cast<int64_t>(manifest.source_lines.size());
    int64_t expected_injected = manifest.plan.copies * n_sources;
    if (static_cast<int64_t>(manifest.lines.size()) != expected_injected)
        fail("injected-line count " + std::to_string(manifest.lines.size()) + " != copies x sources " +
             std::to_string(expected_injected));
    if (static_cast<int64_t>(corpus_lines.size()) != manifest.total_line_count)
        fail("corpus has " + std::to_string(corpus_lines.size()) + " lines, manifest expects " +
             std::to_string(manifest.total_line_count));
    if (manifest.clean_line_count != static_cast<int64_t>(clean_lines.size()))
        fail("clean-line count mismatch");

    std::vector<bool> is_injected(corpus_lines.size(), false);
    for (const auto& rec : manifest.lines) {
        if (rec.corpus_index < 0 || rec.corpus_index >= static_cast<int64_t>(corpus_lines.size())) {
            fail("record " + rec.source_id + " index out of range");
            continue;
        }
        if (is_injected[static_cast<size_t>(rec.corpus_index)])
            fail("two records claim corpus index " + std::to_string(rec.corpus_index));
        is_injected[static_cast<size_t>(rec.corpus_index)] = true;
        auto it = manifest.source_lines.find(rec.source_id);
        if (it == manifest.source_lines.end()) {
            fail("record references unknown source " + rec.source_id);
            continue;
        }
        if (corpus_lines[static_cast<size_t>(rec.corpus_index)] != it->second)
            fail("corpus line " + std::to_string(rec.corpus_index) +
                 " does not match injected text for " + rec.source_id);
        if (manifest.plan.placement != Placement::shuffled) {
            int32_t target = manifest.plan.placement == Placement::stage_first    ? 0
                             : manifest.plan.placement == Placement::stage_middle ? 1
                                                                                  : 2;
            int64_t lo = manifest.section_bounds[static_cast<size_t>(target)];
            int64_t hi = manifest.section_bounds[static_cast<size_t>(target) + 1];
            if (rec.corpus_index < lo || rec.corpus_index >= hi)
                fail("record at index " + std::to_string(rec.corpus_index) +
                     " escapes section " + std::to_string(target));
        }
        if (report.failures.size() > 50) return report;  // first violations suffice
    }

    // Multiset conservation: corpus minus injected lines == clean lines.
    std::multiset<std::string> residual;
    for (size_t i = 0; i < corpus_lines.size(); ++i)
        if (!is_injected[i]) residual.insert(corpus_lines[i]);
    std::multiset<std::string> clean(clean_lines.begin(), clean_lines.end());
    if (residual != clean) fail("clean-line multiset not conserved");
    return report;
}

ContaminatedCorpus ratio_build(const TaskSpec& task, const std::vector<LabeledExample>& seen_test,
                               double ratio, int64_t target_total_instances,
                               const std::vector<std::string>& clean_source,
                               const ContaminationPlan& plan, uint64_t seed) {
    if (ratio <= 0 || ratio >= 1) throw ValidationError("ratio must be in (0, 1)");
    if (target_total_instances < 2) throw ValidationError("target total too small");
    ContaminationPlan p = plan;
    int64_t labeled =
        static_cast<int64_t>((p.include_train_labels ? task.train.size() : 0) + seen_test.size());
    if (labeled == 0) throw ValidationError("no labeled instances for ratio_build");
    double want = ratio * static_cast<double>(target_total_instances);
    p.copies = static_cast<int64_t>(std::llround(want / static_cast<double>(labeled)));
    if (p.copies < 1) p.copies = 1;
    int64_t contaminated = p.copies * labeled;
    if (std::abs(static_cast<double>(contaminated) - want) > 1.0)
        throw ValidationError("requested ratio not achievable within one instance (labeled set " +
                              std::to_string(labeled) + ", want " + std::to_string(want) + ")");
    int64_t n_clean = target_total_instances - contaminated;
    if (n_clean < 1) throw ValidationError("ratio leaves no room for clean lines");
    if (n_clean > static_cast<int64_t>(clean_source.size()))
        throw ValidationError("insufficient clean source lines: need " + std::to_string(n_clean) +
                              ", have " + std::to_string(clean_source.size()));
    std::vector<std::string> clean(clean_source.begin(), clean_source.begin() + n_clean);
    return inject(clean, task, seen_test, p, seed);
}

}  // namespace contamlab
