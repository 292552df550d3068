#include "dassl/cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

#include "dassl/bag_store.hpp"
#include "dassl/config.hpp"
#include "dassl/error.hpp"
#include "dassl/eval_harness.hpp"
#include "dassl/synthgen.hpp"
#include "dassl/trainer.hpp"

namespace dassl::cli {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

int exit_code_for(ErrorCode c) { return 9 + static_cast<int>(c); }

struct CommonArgs {
    std::string config_path;
    std::vector<std::string> overrides;
    std::string out_dir;
    int64_t seed = -1;  // -1: keep config value
    std::string test_manifest;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
    cmd->add_option("--config", args.config_path, "experiment config file (TOML)");
    cmd->add_option("--set", args.overrides, "config override, section.key=value")
        ->take_all();
    cmd->add_option("--out-dir", args.out_dir, "output directory");
    cmd->add_option("--seed", args.seed, "seed override");
    cmd->add_option("--test-manifest", args.test_manifest,
                    "held-out manifest for external evaluation");
}

Config resolve_config(const CommonArgs& args, const char* seed_key) {
    Config cfg = args.config_path.empty() ? Config::defaults()
                                          : Config::from_file(args.config_path);
    for (const auto& o : args.overrides) cfg.apply_override(o);
    if (args.seed >= 0) cfg.set(seed_key, std::to_string(args.seed));
    return cfg;
}

void log_resolved(const Config& cfg, const std::string& out_dir, const char* seed_key) {
    char hash_hex[32];
    std::snprintf(hash_hex, sizeof(hash_hex), "%016llx",
                  static_cast<unsigned long long>(cfg.hash()));
    std::cout << "config_hash=" << hash_hex << " seed=" << cfg.get_int(seed_key) << "\n";
    if (!out_dir.empty()) {
        fs::create_directories(out_dir);
        std::ofstream out(fs::path(out_dir) / "config_resolved.toml");
        out << cfg.resolved_text();
    }
}

json aggregate_json(const MetricsReport& report) {
    json folds = json::array();
    auto opt = [](const std::optional<double>& v) {
        return v ? json(*v) : json(nullptr);
    };
    for (size_t f = 0; f < report.folds.size(); ++f) {
        const auto& fm = report.folds[f];
        folds.push_back({{"fold", f},
                         {"auc", fm.auc},
                         {"accuracy", fm.cm.accuracy},
                         {"sensitivity", opt(fm.cm.sensitivity)},
                         {"specificity", opt(fm.cm.specificity)},
                         {"precision", opt(fm.cm.precision)},
                         {"f1", opt(fm.cm.f1)},
                         {"n", fm.n}});
    }
    json agg;
    for (const auto& [name, a] : report.aggregate)
        agg[name] = {{"mean", a.mean}, {"std", a.stdev}, {"n_defined", a.n_defined}};
    return {{"folds", folds}, {"aggregate", agg}};
}

json fold_json(const FoldMetrics& fm) {
    auto opt = [](const std::optional<double>& v) {
        return v ? json(*v) : json(nullptr);
    };
    return {{"auc", fm.auc},
            {"accuracy", fm.cm.accuracy},
            {"sensitivity", opt(fm.cm.sensitivity)},
            {"specificity", opt(fm.cm.specificity)},
            {"precision", opt(fm.cm.precision)},
            {"f1", opt(fm.cm.f1)},
            {"n", fm.n}};
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path);
    require(out.good(), ErrorCode::io_failure, "cannot write " + path.string());
    out << text;
}

int cmd_synth(const CommonArgs& args) {
    require(!args.out_dir.empty(), ErrorCode::bad_argument, "synth requires --out-dir");
    const Config cfg = resolve_config(args, "synthgen.seed");
    log_resolved(cfg, args.out_dir, "synthgen.seed");

    const SynthConfig sc = synth_config_from(cfg);
    const CohortManifest manifest = gen_cohort(sc, args.out_dir);
    int pos = 0;
    std::map<std::string, bool> patients;
    for (const auto& row : manifest.rows) {
        patients[row.patient_id] = true;
        pos += row.target;
    }
    std::cout << "wrote " << manifest.rows.size() << " slides / " << patients.size()
              << " patients (" << pos << " positive slides) under " << args.out_dir << "\n";
    std::cout << "manifest: " << (fs::path(args.out_dir) / "manifest.csv").string() << "\n";
    return 0;
}

void save_train_log(const std::vector<TrainLogEntry>& log, const fs::path& path) {
    std::ofstream out(path);
    require(out.good(), ErrorCode::io_failure, "cannot write " + path.string());
    for (const auto& e : log) {
        json j = {{"epoch", e.epoch},
                  {"phase", e.phase},
                  {"l_simsiam", e.loss.l_simsiam},
                  {"l_cons", e.loss.l_cons},
                  {"l_total", e.loss.l_total},
                  {"l_sup", e.loss.l_sup ? json(*e.loss.l_sup) : json(nullptr)},
                  {"wall_ms", e.wall_ms}};
        out << j.dump() << "\n";
    }
}

int cmd_train(const CommonArgs& args) {
    require(!args.out_dir.empty(), ErrorCode::bad_argument, "train requires --out-dir");
    const Config cfg = resolve_config(args, "train.seed");
    log_resolved(cfg, args.out_dir, "train.seed");

    const std::string manifest_path = cfg.get_string("data.manifest");
    require(!manifest_path.empty(), ErrorCode::bad_config,
            "train requires data.manifest in the config");
    const CohortManifest manifest = load_manifest(manifest_path);

    const PipelineConfig pipeline = pipeline_from_config(cfg);
    const auto bags = load_bags(manifest, pipeline.tumor_filter);
    require(!bags.empty(), ErrorCode::bad_argument, "no bags to train on");

    const fs::path ckpt_dir = fs::path(args.out_dir) / "checkpoints";
    fs::create_directories(ckpt_dir);

    Trainer trainer(pipeline);
    ModelState state = ModelState::init(pipeline, static_cast<int>(bags.front().dim()),
                                        pipeline.train.seed);
    Optimizers opts(pipeline.train);

    auto hook = [&](int completed, const ModelState& s, const Optimizers& o) {
        save_checkpoint(make_checkpoint(s, o, pipeline, completed),
                        (ckpt_dir / ("ckpt_step" + std::to_string(completed) + ".bin"))
                            .string());
    };
    const auto log = trainer.train(bags, state, opts, 0, hook);

    save_checkpoint(make_checkpoint(state, opts, pipeline, trainer.total_steps()),
                    (ckpt_dir / "ckpt_final.bin").string());
    save_train_log(log, fs::path(args.out_dir) / "train_log.jsonl");

    for (const auto& e : log) {
        std::cout << "epoch " << e.epoch << " [" << e.phase << "] total=" << e.loss.l_total;
        if (e.loss.l_sup) std::cout << " sup=" << *e.loss.l_sup;
        std::cout << "\n";
    }
    std::cout << "final checkpoint: " << (ckpt_dir / "ckpt_final.bin").string() << "\n";
    return 0;
}

int cmd_eval(const CommonArgs& args, const std::string& checkpoint_path) {
    require(!checkpoint_path.empty(), ErrorCode::bad_argument, "eval requires --checkpoint");
    const Checkpoint ckpt = load_checkpoint(checkpoint_path);
    RestoredRun run = restore_run(ckpt);

    // overrides can adjust evaluation-time knobs (e.g. the tumor filter);
    // the restored tensors stay as trained
    Config cfg = Config::from_text(ckpt.config_text, "<checkpoint>");
    for (const auto& o : args.overrides) cfg.apply_override(o);
    if (!args.overrides.empty()) run.cfg = pipeline_from_config(cfg);

    std::string manifest_path =
        args.test_manifest.empty() ? cfg.get_string("data.manifest") : args.test_manifest;
    require(!manifest_path.empty(), ErrorCode::bad_argument,
            "eval needs --test-manifest or data.manifest in the checkpoint config");

    const CohortManifest manifest = load_manifest(manifest_path);
    const EvalResult res = evaluate_model(manifest, run.cfg, run.state);

    json j = {{"checkpoint", checkpoint_path},
              {"manifest", manifest_path},
              {"slide_level", fold_json(res.slide_level)},
              {"patient_level", fold_json(res.patient_level)}};
    json slides = json::array();
    for (size_t i = 0; i < res.slide_ids.size(); ++i)
        slides.push_back({{"slide_id", res.slide_ids[i]},
                          {"score", res.slide_scores[i]},
                          {"label", res.slide_labels[i]}});
    j["slides"] = slides;

    std::cout << "slide level:   auc=" << res.slide_level.auc
              << " acc=" << res.slide_level.cm.accuracy << " n=" << res.slide_level.n << "\n";
    std::cout << "patient level: auc=" << res.patient_level.auc
              << " acc=" << res.patient_level.cm.accuracy << " n=" << res.patient_level.n
              << "\n";
    if (!args.out_dir.empty()) {
        fs::create_directories(args.out_dir);
        write_text(fs::path(args.out_dir) / "metrics.json", j.dump(2) + "\n");
    } else {
        std::cout << j.dump(2) << "\n";
    }
    return 0;
}

int cmd_cv(const CommonArgs& args) {
    const Config cfg = resolve_config(args, "train.seed");
    log_resolved(cfg, args.out_dir, "train.seed");

    const std::string manifest_path = cfg.get_string("data.manifest");
    require(!manifest_path.empty(), ErrorCode::bad_config,
            "cv requires data.manifest in the config");
    const CohortManifest manifest = load_manifest(manifest_path);

    const PipelineConfig pipeline = pipeline_from_config(cfg);
    const int k = static_cast<int>(cfg.get_int("cv.k"));
    const auto cv_seed = static_cast<uint64_t>(cfg.get_int("cv.seed"));
    const int jobs = static_cast<int>(cfg.get_int("cv.jobs"));

    const CVResult cv = cross_validate(manifest, pipeline, k, cv_seed, jobs);

    std::cout << metrics_table(cv.slide_level, "slide level") << "\n";
    std::cout << metrics_table(cv.patient_level, "patient level (majority voting)") << "\n";

    json j = {{"config_hash", cfg.hash()},
              {"seed", cfg.get_int("train.seed")},
              {"k", cv.split.k},
              {"slide_level", aggregate_json(cv.slide_level)},
              {"patient_level", aggregate_json(cv.patient_level)}};

    if (!args.test_manifest.empty()) {
        // train on the full development manifest, evaluate the held-out one
        const auto bags = load_bags(manifest, pipeline.tumor_filter);
        Trainer trainer(pipeline);
        ModelState state = ModelState::init(
            pipeline, static_cast<int>(bags.front().dim()), pipeline.train.seed);
        Optimizers opts(pipeline.train);
        trainer.train(bags, state, opts);
        const CohortManifest test_manifest = load_manifest(args.test_manifest);
        const EvalResult ext = evaluate_model(test_manifest, pipeline, state);
        j["external"] = {{"manifest", args.test_manifest},
                         {"slide_level", fold_json(ext.slide_level)},
                         {"patient_level", fold_json(ext.patient_level)}};
        std::cout << "external slide auc=" << ext.slide_level.auc
                  << " patient acc=" << ext.patient_level.cm.accuracy << "\n";
    }

    if (!args.out_dir.empty()) {
        fs::create_directories(args.out_dir);
        write_text(fs::path(args.out_dir) / "metrics.json", j.dump(2) + "\n");
        write_text(fs::path(args.out_dir) / "metrics.csv",
                   "# slide level\n" + metrics_csv(cv.slide_level) + "# patient level\n" +
                       metrics_csv(cv.patient_level));
    }
    return 0;
}

int cmd_inspect(const std::string& bag_path) {
    const FeatureBag bag = read_bag(bag_path);
    int64_t counts[3] = {0, 0, 0};
    for (int8_t c : bag.patch_class) counts[static_cast<size_t>(c)] += 1;
    std::cout << "slide_id=" << bag.slide_id << " patient_id=" << bag.patient_id
              << " center_id=" << bag.center_id << " target=" << bag.target << "\n";
    std::cout << "n=" << bag.n() << " d=" << bag.dim()
              << " dropped_nonfinite_rows=" << bag.removed_rows << "\n";
    std::cout << "patch_class: tumor=" << counts[0] << " normal=" << counts[1]
              << " artifact=" << counts[2] << "\n";
    std::cout << "coords: x=[" << bag.coords.col(0).minCoeff() << ", "
              << bag.coords.col(0).maxCoeff() << "] y=[" << bag.coords.col(1).minCoeff()
              << ", " << bag.coords.col(1).maxCoeff() << "]\n";
    return 0;
}

}  // namespace

int run(int argc, const char* const* argv) {
    CLI::App app{"feature-bag MIL pipeline with self-supervised domain adaptation"};
    app.require_subcommand(1);

    CommonArgs synth_args, train_args, eval_args, cv_args;
    std::string checkpoint_path, inspect_path;

    auto* synth = app.add_subcommand("synth", "generate a synthetic cohort");
    add_common(synth, synth_args);

    auto* train = app.add_subcommand("train", "train on a manifest");
    add_common(train, train_args);

    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a manifest");
    add_common(eval, eval_args);
    eval->add_option("--checkpoint", checkpoint_path, "checkpoint file")->required();

    auto* cv = app.add_subcommand("cv", "stratified patient-grouped cross-validation");
    add_common(cv, cv_args);

    auto* inspect = app.add_subcommand("inspect", "summarize a bag file");
    inspect->add_option("bag", inspect_path, "bag file path")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    try {
        if (synth->parsed()) return cmd_synth(synth_args);
        if (train->parsed()) return cmd_train(train_args);
        if (eval->parsed()) return cmd_eval(eval_args, checkpoint_path);
        if (cv->parsed()) return cmd_cv(cv_args);
        if (inspect->parsed()) return cmd_inspect(inspect_path);
    } catch (const Error& e) {
        std::cerr << "error [" << error_code_name(e.code()) << "]: " << e.what() << "\n";
        return exit_code_for(e.code());
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 1;
}

}  // namespace dassl::cli
