// contamlab command-line front end.
//
// Subcommands: gen-data, build-corpus, pretrain, probe, finetune,
// sweep <preset>, report. Global flags: --config <file>, --seed <n>,
// --deterministic, --out <dir>. Exit codes: 0 success, 1 validation error,
// 2 trial failure(s). CONTAMLAB_THREADS caps worker parallelism.

#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "contamlab/common.hpp"
#include "contamlab/contamination.hpp"
#include "contamlab/evaluation.hpp"
#include "contamlab/lab.hpp"
#include "contamlab/report.hpp"
#include "contamlab/textdata.hpp"
#include "contamlab/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace contamlab;

namespace {

struct GlobalOpts {
    std::string config_path;
    std::optional<uint64_t> seed;
    bool deterministic = false;
    std::string out_dir = "out";
};

json load_config(const GlobalOpts& g) {
    if (g.config_path.empty()) return json::object();
    std::ifstream in(g.config_path);
    if (!in) throw ValidationError("cannot open config " + g.config_path);
    json j;
    in >> j;
    return j;
}

// Applies recognized keys of a sweep/run config onto a LabConfig.
void apply_lab_overrides(LabConfig& cfg, const json& j) {
    if (j.contains("base_seed")) cfg.base_seed = j.at("base_seed").get<uint64_t>();
    if (j.contains("clean_corpus_lines"))
        cfg.clean_corpus_lines = j.at("clean_corpus_lines").get<int64_t>();
    if (j.contains("corpus_word_list"))
        cfg.corpus_word_list = j.at("corpus_word_list").get<int64_t>();
    if (j.contains("zipf_exponent")) cfg.zipf_exponent = j.at("zipf_exponent").get<double>();
    if (j.contains("signal_strength"))
        cfg.task.signal_strength = j.at("signal_strength").get<double>();
    if (j.contains("num_classes")) cfg.task.num_classes = j.at("num_classes").get<int32_t>();
    if (j.contains("num_train")) cfg.task.num_train = j.at("num_train").get<int64_t>();
    if (j.contains("num_test")) cfg.task.num_test = j.at("num_test").get<int64_t>();
    if (j.contains("copies")) cfg.plan.copies = j.at("copies").get<int64_t>();
    if (j.contains("placement")) cfg.plan.placement = parse_placement(j.at("placement"));
    if (j.contains("label_format"))
        cfg.plan.label_format = parse_label_format(j.at("label_format"));
    if (j.contains("epochs")) cfg.pretrain.epochs = j.at("epochs").get<int64_t>();
    if (j.contains("batch_size")) cfg.pretrain.batch_size = j.at("batch_size").get<int64_t>();
    if (j.contains("peak_lr")) cfg.pretrain.schedule.peak_lr = j.at("peak_lr").get<double>();
    if (j.contains("lr_policy"))
        cfg.pretrain.schedule.policy = j.at("lr_policy").get<std::string>() == "constant"
                                           ? LrPolicy::constant
                                           : LrPolicy::linear_warmup_decay;
    if (j.contains("mask_prob")) cfg.pretrain.mask_prob = j.at("mask_prob").get<double>();
    if (j.contains("label_mask_prob"))
        cfg.pretrain.label_mask_prob = j.at("label_mask_prob").get<double>();
    if (j.contains("include_train_labels"))
        cfg.plan.include_train_labels = j.at("include_train_labels").get<bool>();
    if (j.contains("grad_clip_norm"))
        cfg.pretrain.grad_clip_norm = j.at("grad_clip_norm").get<double>();
    if (j.contains("background_words"))
        cfg.task.background_words = j.at("background_words").get<int64_t>();
    if (j.contains("num_layers")) cfg.model.num_layers = j.at("num_layers").get<int64_t>();
    if (j.contains("hidden_dim")) cfg.model.hidden_dim = j.at("hidden_dim").get<int64_t>();
    if (j.contains("num_heads")) cfg.model.num_heads = j.at("num_heads").get<int64_t>();
    if (j.contains("ffn_dim")) cfg.model.ffn_dim = j.at("ffn_dim").get<int64_t>();
    if (j.contains("max_seq_len")) cfg.model.max_seq_len = j.at("max_seq_len").get<int64_t>();
    if (j.contains("finetune_epochs")) cfg.finetune.epochs = j.at("finetune_epochs").get<int64_t>();
    if (j.contains("finetune_lr")) cfg.finetune.lr = j.at("finetune_lr").get<double>();
    if (j.contains("cloze_finetune")) cfg.cloze_finetune = j.at("cloze_finetune").get<bool>();
}

void write_task_tsv(const std::string& path, const std::vector<LabeledExample>& examples) {
    std::ofstream out(path);
    if (!out) throw ValidationError("cannot open " + path + " for writing");
    for (const auto& ex : examples) out << ex.text << "\t" << ex.verbalizer << "\n";
}

int cmd_gen_data(const GlobalOpts& g) {
    json cfg = load_config(g);
    LabConfig lab;
    apply_lab_overrides(lab, cfg);
    if (g.seed) lab.base_seed = *g.seed;
    fs::create_directories(g.out_dir);

    CorpusGenConfig corpus_cfg;
    corpus_cfg.seed = lab.base_seed + 2;
    corpus_cfg.num_lines = lab.clean_corpus_lines;
    corpus_cfg.vocab_size = lab.corpus_word_list;
    corpus_cfg.zipf_exponent = lab.zipf_exponent;
    auto clean = gen_clean_corpus(corpus_cfg);
    write_lines(g.out_dir + "/clean.txt", clean);

    TaskGenConfig task_cfg = lab.task;
    task_cfg.seed = lab.base_seed + 1;
    TaskSpec task = gen_task(task_cfg);
    write_task_tsv(g.out_dir + "/train.tsv", task.train);
    write_task_tsv(g.out_dir + "/test.tsv", task.test);
    std::cout << "wrote " << clean.size() << " clean lines, " << task.train.size()
              << " train / " << task.test.size() << " test instances to " << g.out_dir << "\n";
    return 0;
}

ContaminationPlan plan_from_config(const json& cfg) {
    ContaminationPlan plan;
    if (cfg.contains("plan")) return ContaminationPlan::from_json(cfg.at("plan").dump());
    LabConfig lab;
    apply_lab_overrides(lab, cfg);
    return lab.plan;
}

int cmd_build_corpus(const GlobalOpts& g) {
    json cfg = load_config(g);
    std::string data_dir = cfg.value("data_dir", g.out_dir);
    auto clean = read_lines(data_dir + "/clean.txt");
    TaskSpec task = make_task("task", ingest_tsv(data_dir + "/train.tsv"),
                              ingest_tsv(data_dir + "/test.tsv"));
    ContaminationPlan plan = plan_from_config(cfg);
    uint64_t seed = g.seed.value_or(cfg.value("base_seed", uint64_t{1234}));
    auto [seen, unseen] = split_seen_unseen(task, plan.seen_fraction, seed + 3);

    ContaminatedCorpus corpus;
    if (cfg.value("ratio", 0.0) > 0) {
        corpus = ratio_build(task, seen, cfg.at("ratio").get<double>(),
                             cfg.at("ratio_total").get<int64_t>(), clean, plan, seed + 4);
    } else {
        corpus = inject(clean, task, seen, plan, seed + 4);
    }
    fs::create_directories(g.out_dir);
    write_lines(g.out_dir + "/corpus.txt", corpus.lines);
    corpus.manifest.save(g.out_dir + "/manifest.json");
    write_task_tsv(g.out_dir + "/seen.tsv", seen);
    write_task_tsv(g.out_dir + "/unseen.tsv", unseen);

    VerifyReport audit = verify_manifest(corpus.lines, corpus.manifest, clean);
    if (!audit.pass) {
        for (const auto& f : audit.failures) std::cerr << "audit: " << f << "\n";
        throw ValidationError("manifest audit failed");
    }
    std::cout << "wrote " << corpus.lines.size() << " lines (manifest digest "
              << corpus.manifest.digest() << ") to " << g.out_dir << "\n";
    return 0;
}

Vocab corpus_vocab(const std::string& corpus_dir, const std::string& data_dir) {
    auto lines = read_lines(corpus_dir + "/corpus.txt");
    for (const char* name : {"/train.tsv", "/test.tsv"})
        for (const auto& ex : ingest_tsv(data_dir + name))
            lines.push_back(ex.text + " " + ex.verbalizer);
    return build_vocab(lines, 1);
}

int cmd_pretrain(const GlobalOpts& g) {
    json cfg = load_config(g);
    LabConfig lab;
    apply_lab_overrides(lab, cfg);
    std::string corpus_dir = cfg.value("corpus_dir", g.out_dir);
    std::string data_dir = cfg.value("data_dir", corpus_dir);

    auto corpus_lines = read_lines(corpus_dir + "/corpus.txt");
    auto manifest = ContaminationManifest::load(corpus_dir + "/manifest.json");
    Vocab vocab = corpus_vocab(corpus_dir, data_dir);
    vocab.save(g.out_dir + "/vocab.tsv");

    ModelConfig model_cfg = lab.model;
    model_cfg.vocab_size = vocab.size();
    PretrainConfig pre = lab.pretrain;
    pre.seed = g.seed.value_or(lab.base_seed + 7000);
    pre.deterministic = g.deterministic || pre.deterministic;

    PretrainResult result = pretrain(corpus_lines, manifest, vocab, model_cfg, pre);
    fs::create_directories(g.out_dir);
    result.checkpoint.save(g.out_dir + "/checkpoint.bin");
    write_training_log(g.out_dir + "/train_log.jsonl", result.log);
    std::cout << "pretrained " << result.log.size() << " steps; checkpoint "
              << g.out_dir + "/checkpoint.bin" << "\n";
    return 0;
}

struct EvalInputs {
    ModelCheckpoint checkpoint;
    Vocab vocab;
    TaskSpec task;
    std::vector<LabeledExample> seen, unseen;
    LabelFormat label_format = LabelFormat::text_then_label;
};

EvalInputs load_eval_inputs(const GlobalOpts& g, const json& cfg) {
    EvalInputs in;
    std::string run_dir = cfg.value("run_dir", g.out_dir);
    std::string data_dir = cfg.value("data_dir", run_dir);
    std::string corpus_dir = cfg.value("corpus_dir", run_dir);
    in.checkpoint = ModelCheckpoint::load(run_dir + "/checkpoint.bin");
    in.vocab = Vocab::load(run_dir + "/vocab.tsv");
    in.task = make_task("task", ingest_tsv(data_dir + "/train.tsv"),
                        ingest_tsv(data_dir + "/test.tsv"));
    in.seen = ingest_tsv(corpus_dir + "/seen.tsv");
    in.unseen = ingest_tsv(corpus_dir + "/unseen.tsv");
    if (cfg.contains("label_format"))
        in.label_format = parse_label_format(cfg.at("label_format"));
    return in;
}

int cmd_probe(const GlobalOpts& g) {
    json cfg = load_config(g);
    EvalInputs in = load_eval_inputs(g, cfg);
    ProbeResult probe =
        mem_probe(in.checkpoint, in.vocab, in.task, in.seen, in.unseen, in.label_format);
    write_instance_records(g.out_dir + "/probe_records.jsonl", probe.records);
    std::printf("probe acc_seen=%.4f acc_unseen=%.4f mem=%.2f\n", probe.acc_seen,
                probe.acc_unseen, probe.mem);
    return 0;
}

int cmd_finetune(const GlobalOpts& g) {
    json cfg = load_config(g);
    EvalInputs in = load_eval_inputs(g, cfg);
    LabConfig lab;
    apply_lab_overrides(lab, cfg);
    FinetuneConfig ft = lab.finetune;
    ft.seed = g.seed.value_or(lab.base_seed + 9000);
    if (lab.cloze_finetune) ft.cloze_slot = lab.plan.label_format;
    FinetunedModel model = finetune(in.checkpoint, in.vocab, in.task, ft);
    FinetuneResult result = expl_score(model, in.vocab, in.seen, in.unseen);
    write_instance_records(g.out_dir + "/task_records.jsonl", result.records);
    std::printf("task acc_seen=%.4f acc_unseen=%.4f expl=%.2f\n", result.acc_seen,
                result.acc_unseen, result.expl);
    return 0;
}

void emit_all_reports(const ExperimentSpec& spec, const std::vector<RunRecord>& records,
                      const std::string& out_dir) {
    auto rows = aggregate(records);
    if (!rows.empty()) {
        emit_table(rows, TableFormat::csv, out_dir + "/aggregate.csv");
        emit_table(rows, TableFormat::markdown, out_dir + "/aggregate.md");
        if (spec.preset == "appears_vs_seen")
            emit_appears_vs_seen_table(rows, TableFormat::markdown,
                                       out_dir + "/appears_vs_seen.md");
        Series series = series_from_aggregates(spec.preset, spec.axis_name, rows);
        emit_plot_data(series, out_dir + "/plot_data.tsv");
    }
    emit_summary(spec, records, out_dir + "/summary.md");
}

int cmd_sweep(const GlobalOpts& g, const std::string& preset_name) {
    json cfg = load_config(g);
    ExperimentSpec spec = preset(preset_name);
    spec.out_dir = g.out_dir;
    if (cfg.contains("num_trials")) spec.num_trials = cfg.at("num_trials").get<int64_t>();
    if (cfg.contains("rerandomize_pretrain"))
        spec.rerandomize_pretrain = cfg.at("rerandomize_pretrain").get<bool>();
    for (auto& cell : spec.cells) {
        apply_lab_overrides(cell.config, cfg);
        if (g.seed) cell.config.base_seed = *g.seed;
        cell.config.pretrain.deterministic =
            g.deterministic || cell.config.pretrain.deterministic;
    }
    spec.validate();

    std::vector<RunRecord> records = run_sweep(spec);
    emit_all_reports(spec, records, g.out_dir);

    int64_t failures = 0;
    for (const auto& r : records) failures += r.failed ? 1 : 0;
    std::cout << records.size() << " records (" << failures << " failed); reports in "
              << g.out_dir << "\n";
    return failures > 0 ? 2 : 0;
}

int cmd_report(const GlobalOpts& g) {
    json cfg = load_config(g);
    std::string records_path = cfg.value("records", g.out_dir + "/records.jsonl");
    auto records = load_records(records_path);
    ExperimentSpec spec;
    if (!records.empty()) {
        spec = preset(records.front().preset);
    } else {
        spec.preset = "empty";
        spec.axis_name = "axis";
        SweepCell cell;
        cell.label = "none";
        spec.cells.push_back(cell);
    }
    spec.out_dir = g.out_dir;
    emit_all_reports(spec, records, g.out_dir);
    std::cout << "reports written to " << g.out_dir << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Contamination lab: corpus contamination, MLM pretraining, and "
                 "memorization/exploitation measurement"};
    app.require_subcommand(1);

    GlobalOpts g;
    uint64_t seed_arg = 0;
    app.add_option("--config", g.config_path, "JSON config file")->expected(1);
    auto* seed_opt = app.add_option("--seed", seed_arg, "Base seed override");
    app.add_flag("--deterministic", g.deterministic, "Force deterministic mode");
    app.add_option("--out", g.out_dir, "Output directory");

    auto* gen = app.add_subcommand("gen-data", "Generate a clean corpus and a synthetic task");
    auto* build = app.add_subcommand("build-corpus", "Inject labeled lines into a clean corpus");
    auto* pre = app.add_subcommand("pretrain", "MLM-pretrain on a built corpus");
    auto* probe = app.add_subcommand("probe", "Cloze-probe a checkpoint (Mem)");
    auto* ft = app.add_subcommand("finetune", "Fine-tune and score exploitation (Expl)");
    auto* sweep = app.add_subcommand("sweep", "Run a preset experiment sweep");
    std::string preset_name;
    sweep->add_option("preset", preset_name, "Preset name")->required();
    auto* report = app.add_subcommand("report", "Emit tables and plot data from records");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }
    if (*seed_opt) g.seed = seed_arg;

    try {
        if (gen->parsed()) return cmd_gen_data(g);
        if (build->parsed()) return cmd_build_corpus(g);
        if (pre->parsed()) return cmd_pretrain(g);
        if (probe->parsed()) return cmd_probe(g);
        if (ft->parsed()) return cmd_finetune(g);
        if (sweep->parsed()) return cmd_sweep(g, preset_name);
        if (report->parsed()) return cmd_report(g);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 1;
}
