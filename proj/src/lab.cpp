#include "contamlab/lab.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <numeric>
#include <set>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "contamlab/common.hpp"
#include "contamlab/rng.hpp"

namespace contamlab {

using nlohmann::json;

namespace {

json lab_config_json(const LabConfig& cfg) {
    json j;
    j["base_seed"] = cfg.base_seed;
    j["clean_corpus_lines"] = cfg.clean_corpus_lines;
    j["corpus_word_list"] = cfg.corpus_word_list;
    j["zipf_exponent"] = cfg.zipf_exponent;
    j["task"] = {{"seed", cfg.task.seed},
                 {"num_classes", cfg.task.num_classes},
                 {"num_train", cfg.task.num_train},
                 {"num_test", cfg.task.num_test},
                 {"signal_strength", cfg.task.signal_strength}};
    j["seen_fraction"] = cfg.seen_fraction;
    j["plan"] = json::parse(cfg.plan.to_json());
    j["ratio"] = cfg.ratio;
    j["ratio_total"] = cfg.ratio_total;
    j["model"] = json::parse(model_config_to_json(cfg.model));
    j["pretrain"] = json::parse(cfg.pretrain.to_json());
    j["finetune"] = {{"epochs", cfg.finetune.epochs},
                     {"batch_size", cfg.finetune.batch_size},
                     {"lr", cfg.finetune.lr},
                     {"weight_decay", cfg.finetune.weight_decay},
                     {"train_subset_size", cfg.finetune.train_subset_size}};
    j["cloze_finetune"] = cfg.cloze_finetune;
    j["second_stage"] = cfg.second_stage;
    return j;
}

std::string digest_of(const std::string& text) { return hex_digest(fnv1a64(text)); }

}  // namespace

std::string LabConfig::to_json() const { return lab_config_json(*this).dump(); }

void ExperimentSpec::validate() const {
    if (cells.empty()) throw ValidationError("sweep axis is empty");
    if (num_trials < 1) throw ValidationError("num_trials must be >= 1");
    if (preset.empty()) throw ValidationError("sweep needs a preset name");
    std::set<std::string> labels;
    for (const auto& c : cells)
        if (!labels.insert(c.label).second)
            throw ValidationError("duplicate sweep cell label " + c.label);
}

std::string RunRecord::to_json() const {
    json j;
    j["preset"] = preset;
    j["cell_label"] = cell_label;
    j["axis_value"] = axis_value;
    j["trial"] = trial;
    j["data_seed"] = data_seed;
    j["pretrain_seed"] = pretrain_seed;
    j["finetune_seed"] = finetune_seed;
    j["mem"] = mem;
    j["expl"] = expl;
    j["probe_acc_seen"] = probe_acc_seen;
    j["probe_acc_unseen"] = probe_acc_unseen;
    j["task_acc_seen"] = task_acc_seen;
    j["task_acc_unseen"] = task_acc_unseen;
    j["wall_time_sec"] = wall_time_sec;
    j["fingerprint"] = fingerprint;
    j["manifest_digest"] = manifest_digest;
    j["trace_digest"] = trace_digest;
    j["failed"] = failed;
    j["fail_reason"] = fail_reason;
    return j.dump();
}

RunRecord RunRecord::from_json(const std::string& json_text) {
    json j = json::parse(json_text);
    RunRecord r;
    r.preset = j.at("preset").get<std::string>();
    r.cell_label = j.at("cell_label").get<std::string>();
    r.axis_value = j.at("axis_value").get<double>();
    r.trial = j.at("trial").get<int64_t>();
    r.data_seed = j.at("data_seed").get<uint64_t>();
    r.pretrain_seed = j.at("pretrain_seed").get<uint64_t>();
    r.finetune_seed = j.at("finetune_seed").get<uint64_t>();
    r.mem = j.at("mem").get<double>();
    r.expl = j.at("expl").get<double>();
    r.probe_acc_seen = j.at("probe_acc_seen").get<double>();
    r.probe_acc_unseen = j.at("probe_acc_unseen").get<double>();
    r.task_acc_seen = j.at("task_acc_seen").get<double>();
    r.task_acc_unseen = j.at("task_acc_unseen").get<double>();
    r.wall_time_sec = j.at("wall_time_sec").get<double>();
    r.fingerprint = j.at("fingerprint").get<std::string>();
    r.manifest_digest = j.at("manifest_digest").get<std::string>();
    r.trace_digest = j.value("trace_digest", "");
    r.failed = j.at("failed").get<bool>();
    r.fail_reason = j.at("fail_reason").get<std::string>();
    return r;
}

namespace {

LabConfig toy_base() {
    LabConfig cfg;
    cfg.task.num_classes = 5;
    cfg.task.num_train = 1000;
    cfg.task.num_test = 500;
    cfg.plan.seen_fraction = cfg.seen_fraction;
    return cfg;
}

SweepCell make_cell(const std::string& label, double axis_value, LabConfig cfg) {
    SweepCell c;
    c.label = label;
    c.axis_value = axis_value;
    c.config = std::move(cfg);
    return c;
}

}  // namespace

std::vector<std::string> preset_names() {
    return {"copies_sweep",  "label_mask_sweep", "corpus_size_sweep",
            "model_size_sweep", "stage_sweep",   "batch_sweep",
            "appears_vs_seen",  "ratio_sweep",   "baseline"};
}

ExperimentSpec preset(const std::string& name) {
    ExperimentSpec spec;
    spec.preset = name;
    LabConfig base = toy_base();
    if (name == "copies_sweep") {
        spec.axis_name = "copies";
        spec.num_trials = 5;
        for (int64_t k : {0, 25, 100, 400}) {
            LabConfig cfg = base;
            cfg.plan.copies = k;
            spec.cells.push_back(make_cell("copies=" + std::to_string(k), double(k), cfg));
        }
        spec.paper_notes =
            "At full scale, both measures grow with duplicate count, reaching 60% Mem "
            "when an instance appears 200 times (paper-scale, not reproduced here).";
    } else if (name == "label_mask_sweep") {
        spec.axis_name = "label_mask_prob";
        spec.num_trials = 5;
        for (double q : {0.0, 0.15, 0.5, 1.0}) {
            LabConfig cfg = base;
            cfg.plan.copies = 100;
            cfg.pretrain.label_mask_prob = q;
            std::ostringstream lab;
            lab << "q=" << q;
            spec.cells.push_back(make_cell(lab.str(), q, cfg));
        }
        spec.paper_notes =
            "At full scale, the higher the label-masking probability during pretraining, "
            "the higher both Mem and Expl (paper-scale, not reproduced here).";
    } else if (name == "corpus_size_sweep") {
        spec.axis_name = "clean_lines";
        spec.num_trials = 3;
        for (int64_t n : {5000, 10000, 20000, 40000}) {
            LabConfig cfg = base;
            cfg.plan.copies = 100;
            cfg.clean_corpus_lines = n;
            spec.cells.push_back(make_cell("clean_lines=" + std::to_string(n), double(n), cfg));
        }
        spec.paper_notes =
            "At full scale, exploitation depends on model and corpus size; smaller corpora "
            "concentrate the duplicates (paper-scale, not reproduced here).";
    } else if (name == "model_size_sweep") {
        spec.axis_name = "hidden_dim";
        spec.num_trials = 3;
        for (int64_t h : {32, 64, 128}) {
            LabConfig cfg = base;
            cfg.plan.copies = 100;
            cfg.model.hidden_dim = h;
            cfg.model.ffn_dim = 4 * h;
            cfg.model.num_heads = std::max<int64_t>(1, h / 16);
            spec.cells.push_back(make_cell("hidden=" + std::to_string(h), double(h), cfg));
        }
        spec.paper_notes =
            "At full scale, larger models memorize and exploit contamination more "
            "(paper-scale, not reproduced here).";
    } else if (name == "stage_sweep") {
        spec.axis_name = "stage_x_lr";
        spec.num_trials = 3;
        int64_t axis = 0;
        for (Placement p : {Placement::stage_first, Placement::stage_middle, Placement::stage_last})
            for (LrPolicy lr : {LrPolicy::linear_warmup_decay, LrPolicy::constant}) {
                LabConfig cfg = base;
                cfg.plan.copies = 100;
                cfg.plan.placement = p;
                cfg.pretrain.schedule.policy = lr;
                std::string stage = p == Placement::stage_first    ? "first"
                                    : p == Placement::stage_middle ? "middle"
                                                                   : "last";
                std::string label =
                    stage + std::string("/") + (lr == LrPolicy::constant ? "constant" : "decay");
                spec.cells.push_back(make_cell(label, double(axis++), cfg));
            }
        spec.paper_notes =
            "At full scale, with LR decay, late contamination leads to no Expl; with a "
            "constant LR of 2.77e-5 the stage effect flattens (paper-scale, not "
            "reproduced here).";
    } else if (name == "batch_sweep") {
        spec.axis_name = "batch_size";
        spec.num_trials = 3;
        for (int64_t b : {4, 8, 32}) {
            LabConfig cfg = base;
            cfg.plan.copies = 100;
            cfg.pretrain.batch_size = b;
            spec.cells.push_back(make_cell("batch=" + std::to_string(b), double(b), cfg));
        }
        spec.paper_notes =
            "At full scale, with batch size 2 Mem reaches 49% and Expl reaches 14%; large "
            "batches reduce exploitation (paper-scale, not reproduced here).";
    } else if (name == "appears_vs_seen") {
        spec.axis_name = "epochs_x_copies";
        spec.num_trials = 3;
        const std::pair<int64_t, int64_t> cells[] = {{1, 10}, {5, 10}, {1, 50}};
        int64_t axis = 0;
        for (auto [epochs, copies] : cells) {
            LabConfig cfg = base;
            cfg.second_stage = true;
            cfg.plan.copies = copies;
            cfg.pretrain.epochs = epochs;
            std::string label =
                "epochs=" + std::to_string(epochs) + ",copies=" + std::to_string(copies);
            spec.cells.push_back(make_cell(label, double(axis++), cfg));
        }
        spec.paper_notes =
            "At full scale, an instance appearing n times over e epochs is seen n*e times; "
            "Expl was 2.07% / 6.87% / 7.73% across the three cells (paper-scale, not "
            "reproduced here).";
    } else if (name == "ratio_sweep") {
        spec.axis_name = "total_instances";
        spec.num_trials = 3;
        for (int64_t total : {12500, 25000, 50000}) {
            LabConfig cfg = base;
            cfg.ratio = 0.1;
            cfg.ratio_total = total;
            cfg.clean_corpus_lines = total;  // clean source pool; ratio_build trims it
            spec.cells.push_back(make_cell("total=" + std::to_string(total), double(total), cfg));
        }
        spec.paper_notes =
            "At full scale, a constant contaminated:total ratio of 1:10 still yields "
            "different Expl at different absolute sizes (paper-scale, not reproduced here).";
    } else if (name == "baseline") {
        spec.axis_name = "copies";
        spec.num_trials = 10;
        LabConfig cfg = base;
        cfg.plan.copies = 0;
        spec.cells.push_back(make_cell("copies=0", 0, cfg));
        spec.paper_notes =
            "Models pretrained on uncontaminated data show no seen/unseen gap; Mem and "
            "Expl center on zero.";
    } else {
        throw ValidationError("unknown preset: " + name);
    }
    spec.validate();
    return spec;
}

CellArtifacts build_cell(const LabConfig& cfg, uint64_t pretrain_seed) {
    CellArtifacts art;

    TaskGenConfig task_cfg = cfg.task;
    task_cfg.seed = cfg.base_seed + 1;
    art.task = gen_task(task_cfg);

    CorpusGenConfig corpus_cfg;
    corpus_cfg.seed = cfg.base_seed + 2;
    corpus_cfg.num_lines = cfg.clean_corpus_lines;
    corpus_cfg.vocab_size = cfg.corpus_word_list;
    corpus_cfg.zipf_exponent = cfg.zipf_exponent;
    std::vector<std::string> clean = gen_clean_corpus(corpus_cfg);

    auto [seen, unseen] = split_seen_unseen(art.task, cfg.seen_fraction, cfg.base_seed + 3);
    art.seen = std::move(seen);
    art.unseen = std::move(unseen);

    if (cfg.ratio > 0) {
        art.corpus = ratio_build(art.task, art.seen, cfg.ratio, cfg.ratio_total, clean, cfg.plan,
                                 cfg.base_seed + 4);
    } else {
        art.corpus = inject(clean, art.task, art.seen, cfg.plan, cfg.base_seed + 4);
    }

    // Vocabulary from the clean text plus every labeled line, so verbalizers
    // exist even at zero copies.
    std::vector<std::string> vocab_lines = art.corpus.lines;
    for (const auto* pool : {&art.task.train, &art.task.test})
        for (const auto& ex : *pool) vocab_lines.push_back(ex.text + " " + ex.verbalizer);
    art.vocab = build_vocab(vocab_lines, 1);

    ModelConfig model_cfg = cfg.model;
    model_cfg.vocab_size = art.vocab.size();
    model_cfg.validate();

    PretrainConfig pre_cfg = cfg.pretrain;
    pre_cfg.seed = pretrain_seed;
    pre_cfg.validate();

    PretrainResult result;
    if (cfg.second_stage) {
        // Stage one: one epoch on the clean corpus alone.
        ContaminationPlan clean_plan = cfg.plan;
        clean_plan.copies = 0;
        ContaminatedCorpus clean_corpus =
            inject(clean, art.task, art.seen, clean_plan, cfg.base_seed + 5);
        PretrainConfig stage1 = pre_cfg;
        stage1.epochs = 1;
        PretrainResult first =
            pretrain(clean_corpus.lines, clean_corpus.manifest, art.vocab, model_cfg, stage1);
        result = continue_pretrain(first.checkpoint, art.corpus.lines, art.corpus.manifest,
                                   art.vocab, pre_cfg);
    } else {
        result = pretrain(art.corpus.lines, art.corpus.manifest, art.vocab, model_cfg, pre_cfg);
    }
    art.checkpoint = std::move(result.checkpoint);
    art.line_order = std::move(result.line_order);
    std::string trace;
    for (const auto& s : result.log) {
        char buf[64];
        std::snprintf(buf, sizeof(buf), "%lld:%.9g;", static_cast<long long>(s.step), s.loss);
        trace += buf;
    }
    art.trace_digest = digest_of(trace);
    return art;
}

int lab_worker_threads() {
    const char* env = std::getenv("CONTAMLAB_THREADS");
    if (!env || !*env) return 1;
    int v = std::atoi(env);
    if (v < 1) return 1;
    return std::min(v, 64);
}

namespace {

std::string trial_fingerprint(const SweepCell& cell, int64_t trial, uint64_t pretrain_seed,
                              uint64_t finetune_seed) {
    std::ostringstream os;
    os << cell.label << "|" << cell.config.to_json() << "|trial=" << trial
       << "|pre=" << pretrain_seed << "|ft=" << finetune_seed;
    return digest_of(os.str());
}

}  // namespace

std::vector<RunRecord> run_sweep(const ExperimentSpec& spec) {
    spec.validate();
    namespace fs = std::filesystem;
    fs::create_directories(spec.out_dir);
    const std::string records_path = spec.out_dir + "/records.jsonl";

    std::vector<RunRecord> all;
    std::set<std::string> done;
    if (fs::exists(records_path)) {
        all = load_records(records_path);
        for (const auto& r : all) done.insert(r.fingerprint);
    }

    std::ofstream out(records_path, std::ios::app);
    if (!out) throw ValidationError("cannot open " + records_path);
    std::mutex out_mutex;

    for (const auto& cell : spec.cells) {
        // One pretrained model per cell under the default seed policy.
        struct TrialPlan {
            int64_t trial;
            uint64_t pretrain_seed;
            uint64_t finetune_seed;
            std::string fingerprint;
        };
        std::vector<TrialPlan> todo;
        for (int64_t t = 0; t < spec.num_trials; ++t) {
            TrialPlan p;
            p.trial = t;
            p.pretrain_seed = spec.rerandomize_pretrain
                                  ? cell.config.base_seed + 7000 + static_cast<uint64_t>(t)
                                  : cell.config.base_seed + 7000;
            p.finetune_seed = cell.config.base_seed + 9000 + static_cast<uint64_t>(t);
            p.fingerprint = trial_fingerprint(cell, t, p.pretrain_seed, p.finetune_seed);
            if (!done.count(p.fingerprint)) todo.push_back(p);
        }
        if (todo.empty()) continue;

        std::map<uint64_t, CellArtifacts> by_pretrain_seed;
        std::string build_error;
        for (const auto& p : todo) {
            if (by_pretrain_seed.count(p.pretrain_seed) || !build_error.empty()) continue;
            try {
                by_pretrain_seed.emplace(p.pretrain_seed, build_cell(cell.config, p.pretrain_seed));
            } catch (const std::exception& e) {
                build_error = e.what();
            }
        }

        std::vector<RunRecord> trial_records(todo.size());
        std::atomic<size_t> next{0};
        auto worker = [&]() {
            for (size_t i = next.fetch_add(1); i < todo.size(); i = next.fetch_add(1)) {
                const TrialPlan& p = todo[i];
                RunRecord r;
                r.preset = spec.preset;
                r.cell_label = cell.label;
                r.axis_value = cell.axis_value;
                r.trial = p.trial;
                r.data_seed = cell.config.base_seed;
                r.pretrain_seed = p.pretrain_seed;
                r.finetune_seed = p.finetune_seed;
                r.fingerprint = p.fingerprint;
                auto start = std::chrono::steady_clock::now();
                try {
                    if (!build_error.empty()) throw ValidationError(build_error);
                    const CellArtifacts& art = by_pretrain_seed.at(p.pretrain_seed);
                    r.manifest_digest = art.corpus.manifest.digest();
                    r.trace_digest = art.trace_digest;
                    ProbeResult probe = mem_probe(art.checkpoint, art.vocab, art.task, art.seen,
                                                  art.unseen, cell.config.plan.label_format);
                    r.probe_acc_seen = probe.acc_seen;
                    r.probe_acc_unseen = probe.acc_unseen;
                    r.mem = probe.mem;
                    FinetuneConfig ft = cell.config.finetune;
                    ft.seed = p.finetune_seed;
                    if (cell.config.cloze_finetune) ft.cloze_slot = cell.config.plan.label_format;
                    FinetunedModel model = finetune(art.checkpoint, art.vocab, art.task, ft);
                    FinetuneResult fr = expl_score(model, art.vocab, art.seen, art.unseen);
                    r.task_acc_seen = fr.acc_seen;
                    r.task_acc_unseen = fr.acc_unseen;
                    r.expl = fr.expl;
                } catch (const std::exception& e) {
                    r.failed = true;
                    r.fail_reason = e.what();
                }
                r.wall_time_sec =
                    std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
                        .count();
                trial_records[i] = std::move(r);
            }
        };
        int n_threads = std::min<int>(lab_worker_threads(), static_cast<int>(todo.size()));
        if (n_threads <= 1) {
            worker();
        } else {
            std::vector<std::thread> pool;
            for (int i = 0; i < n_threads; ++i) pool.emplace_back(worker);
            for (auto& th : pool) th.join();
        }

        std::lock_guard<std::mutex> lock(out_mutex);
        for (auto& r : trial_records) {
            out << r.to_json() << "\n";
            out.flush();
            all.push_back(std::move(r));
        }
    }
    return all;
}

std::vector<RunRecord> load_records(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open " + path);
    std::vector<RunRecord> records;
    std::string line;
    int64_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        try {
            records.push_back(RunRecord::from_json(line));
        } catch (const std::exception& e) {
            throw ValidationError(path + ":" + std::to_string(lineno) + ": bad record: " +
                                  e.what());
        }
    }
    return records;
}

namespace {

struct Moments {
    int64_t n = 0;
    double mean = 0, sd = 0, sem = 0;
};

Moments moments(const std::vector<double>& xs) {
    Moments m;
    m.n = static_cast<int64_t>(xs.size());
    if (m.n == 0) return m;
    m.mean = std::accumulate(xs.begin(), xs.end(), 0.0) / double(m.n);
    if (m.n > 1) {
        double ss = 0;
        for (double x : xs) ss += (x - m.mean) * (x - m.mean);
        m.sd = std::sqrt(ss / double(m.n - 1));
        m.sem = m.sd / std::sqrt(double(m.n));
    }
    return m;
}

}  // namespace

std::vector<AggregateRow> aggregate(const std::vector<RunRecord>& records) {
    std::vector<std::string> order;
    std::map<std::string, std::vector<const RunRecord*>> groups;
    for (const auto& r : records) {
        if (r.failed) continue;
        if (!groups.count(r.cell_label)) order.push_back(r.cell_label);
        groups[r.cell_label].push_back(&r);
    }
    std::vector<AggregateRow> rows;
    for (const auto& label : order) {
        const auto& group = groups[label];
        AggregateRow row;
        row.cell_label = label;
        row.axis_value = group.front()->axis_value;
        std::vector<double> mem, expl, unseen;
        for (const auto* r : group) {
            mem.push_back(r->mem);
            expl.push_back(r->expl);
            unseen.push_back(100.0 * r->task_acc_unseen);
        }
        Moments mm = moments(mem), me = moments(expl), mu = moments(unseen);
        row.n = mm.n;
        row.sd_defined = mm.n > 1;
        row.mem_mean = mm.mean;
        row.mem_sd = mm.sd;
        row.mem_sem = mm.sem;
        row.expl_mean = me.mean;
        row.expl_sd = me.sd;
        row.expl_sem = me.sem;
        row.unseen_acc_mean = mu.mean;
        row.unseen_acc_sd = mu.sd;
        row.unseen_acc_sem = mu.sem;
        rows.push_back(row);
    }
    return rows;
}

namespace {

// Average ranks (1-based) with ties averaged.
std::vector<double> average_ranks(const std::vector<double>& xs) {
    size_t n = xs.size();
    std::vector<size_t> idx(n);
    std::iota(idx.begin(), idx.end(), size_t{0});
    std::stable_sort(idx.begin(), idx.end(), [&](size_t a, size_t b) { return xs[a] < xs[b]; });
    std::vector<double> ranks(n, 0);
    size_t i = 0;
    while (i < n) {
        size_t j = i;
        while (j + 1 < n && xs[idx[j + 1]] == xs[idx[i]]) ++j;
        double avg = (double(i + 1) + double(j + 1)) / 2.0;
        for (size_t k = i; k <= j; ++k) ranks[idx[k]] = avg;
        i = j + 1;
    }
    return ranks;
}

}  // namespace

double spearman_rank_correlation(const std::vector<double>& xs, const std::vector<double>& ys) {
    if (xs.size() != ys.size() || xs.size() < 2)
        throw ValidationError("rank correlation needs two equal-length series of >= 2");
    std::vector<double> rx = average_ranks(xs), ry = average_ranks(ys);
    double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / double(rx.size());
    double my = std::accumulate(ry.begin(), ry.end(), 0.0) / double(ry.size());
    double sxy = 0, sxx = 0, syy = 0;
    for (size_t i = 0; i < rx.size(); ++i) {
        sxy += (rx[i] - mx) * (ry[i] - my);
        sxx += (rx[i] - mx) * (rx[i] - mx);
        syy += (ry[i] - my) * (ry[i] - my);
    }
    if (sxx == 0 || syy == 0) return 0;
    return sxy / std::sqrt(sxx * syy);
}

SeedTradeoffReport seed_tradeoff(const std::vector<RunRecord>& cell_records) {
    std::vector<const RunRecord*> ok;
    for (const auto& r : cell_records)
        if (!r.failed) ok.push_back(&r);
    if (ok.size() < 6) throw ValidationError("seed_tradeoff needs >= 6 completed trials");
    std::set<std::string> labels;
    for (const auto* r : ok) labels.insert(r->cell_label);
    if (labels.size() != 1)
        throw ValidationError("seed_tradeoff expects records from a single axis point");

    SeedTradeoffReport rep;
    rep.n_trials = static_cast<int64_t>(ok.size());

    std::vector<size_t> by_expl(ok.size()), by_gen(ok.size());
    std::iota(by_expl.begin(), by_expl.end(), size_t{0});
    by_gen = by_expl;
    // Best exploiters first; worst generalizers first. Ties break on trial id
    // so the statistic is deterministic.
    std::stable_sort(by_expl.begin(), by_expl.end(), [&](size_t a, size_t b) {
        if (ok[a]->expl != ok[b]->expl) return ok[a]->expl > ok[b]->expl;
        return ok[a]->trial < ok[b]->trial;
    });
    std::stable_sort(by_gen.begin(), by_gen.end(), [&](size_t a, size_t b) {
        if (ok[a]->task_acc_unseen != ok[b]->task_acc_unseen)
            return ok[a]->task_acc_unseen < ok[b]->task_acc_unseen;
        return ok[a]->trial < ok[b]->trial;
    });
    std::set<size_t> top_expl(by_expl.begin(), by_expl.begin() + 3);
    int64_t overlap = 0;
    for (size_t i = 0; i < 3; ++i)
        if (top_expl.count(by_gen[i])) ++overlap;
    rep.overlap_top3 = overlap;

    std::vector<double> expl, gen;
    for (const auto* r : ok) {
        expl.push_back(r->expl);
        gen.push_back(r->task_acc_unseen);
    }
    rep.rank_correlation = spearman_rank_correlation(expl, gen);
    return rep;
}

}  // namespace contamlab
