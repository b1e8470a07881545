// bdscan: train, poison, detect and compare on seeded desk-scale experiments.
//
// Exit status: 0 = ran, nothing detected; 2 = attack detected (detect and
// nc-detect only); 1 = error.

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"

#include "bdscan/errors.hpp"
#include "bdscan/experiment.hpp"
#include "bdscan/model_io.hpp"

using namespace bdscan;
namespace fs = std::filesystem;

namespace {

constexpr int kExitDetected = 2;

ExperimentConfig config_or_default(const std::string& path) {
    return path.empty() ? ExperimentConfig{} : load_experiment(path);
}

// Group name or the config's own attack block.
AttackPlan plan_for(const ExperimentConfig& cfg, const std::string& group) {
    return group.empty() ? cfg.attack : group_plan(group, cfg.attack);
}

struct DataArgs {
    std::string dir;
    std::size_t per_class = 25;
    std::uint64_t seed = 1;
    bool relabel = false;
};

Dataset detection_set_from(const DataArgs& a, const Network& net) {
    const DatasetSplits d = load_dataset_dir(a.dir);
    DetectorSpec spec;
    spec.per_class = a.per_class;
    spec.relabel = a.relabel;
    return cell_detection_set(net, d.test, spec, a.seed);
}

void add_data_args(CLI::App* app, DataArgs& a) {
    app->add_option("--data", a.dir, "dataset directory (train.bin, test.bin, meta.json)")->required();
    app->add_option("--per-class", a.per_class, "clean detection images per class")->capture_default_str();
    app->add_option("--seed", a.seed, "cell seed the detection set is drawn for (same draw as the ensemble)")->capture_default_str();
    app->add_flag("--relabel", a.relabel, "label the detection set by the model's own decisions");
}

int cmd_poison(const std::string& config, const std::string& group, std::uint64_t seed, const fs::path& run) {
    const ExperimentConfig cfg = config_or_default(config);
    const AttackPlan plan = plan_for(cfg, group);
    DatasetSplits d = cell_data(cfg.data, seed);
    const auto attack = cell_attack(plan, d.train, seed);
    json out{{"seed", seed}, {"group", group}};
    std::vector<fs::path> written{run / "data" / "train.bin", run / "data" / "test.bin", run / "data" / "meta.json"};
    if (attack) {
        const PoisonResult pr = poison(d.train, *attack);
        save_dataset_dir(run / "data", pr.data, d.test, seed);
        save_pattern(run / "pattern.bspt", attack->pattern);
        out["attack"] = to_json(*attack);
        out["poisoned_indices"] = pr.poisoned_indices;
        out["source_indices"] = pr.source_indices;
        written.push_back(run / "pattern.bspt");
    } else {
        save_dataset_dir(run / "data", d.train, d.test, seed);
        out["attack"] = nullptr;
    }
    out["config_hash"] = config_hash(to_json(cfg));
    write_json(run / "attack.json", out);
    written.push_back(run / "attack.json");
    record_manifest(run, "poison", to_json(cfg), written);
    std::cout << "wrote " << (run / "data").string() << (attack ? " (poisoned)" : " (clean)") << "\n";
    return 0;
}

int cmd_train(const std::string& config, const std::string& group, std::uint64_t seed, const fs::path& run) {
    const ExperimentConfig cfg = config_or_default(config);
    const AttackPlan plan = plan_for(cfg, group);
    const TrainedCell tc = train_cell(cfg, plan, seed);
    fs::create_directories(run);
    save_model(run / "model.bsnn", tc.net);
    json metrics{{"seed", seed},
                 {"clean_accuracy", tc.clean_accuracy},
                 {"epoch_loss", tc.training.epoch_loss},
                 {"config_hash", config_hash(to_json(cfg))}};
    std::vector<fs::path> written{run / "model.bsnn", run / "train.json"};
    if (tc.attack) {
        metrics["attack"] = to_json(*tc.attack);
        metrics["attack_report"] = to_json(*tc.report);
        save_pattern(run / "pattern.bspt", tc.attack->pattern);
        written.push_back(run / "pattern.bspt");
    }
    // The clean test split doubles as the pool detection sets are drawn from.
    const DatasetSplits d = cell_data(cfg.data, seed);
    save_dataset_dir(run / "data", d.train, d.test, seed);
    write_json(run / "train.json", metrics);
    record_manifest(run, "train", to_json(cfg), written);
    std::cout << "clean accuracy " << tc.clean_accuracy;
    if (tc.report) std::cout << ", attack success " << tc.report->success_rate;
    std::cout << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Post-training backdoor detection by minimal group-misclassification perturbations"};
    app.require_subcommand(1);

    std::string config, group;
    std::uint64_t seed = 1;
    std::string run_dir = "run";

    auto* poison_cmd = app.add_subcommand("poison", "build a dataset and plant a backdoor in its training split");
    auto* train_cmd = app.add_subcommand("train", "train a (possibly poisoned) reference model");
    for (auto* c : {poison_cmd, train_cmd}) {
        c->add_option("--config", config, "experiment config (JSON)");
        c->add_option("--group", group, "BD-P-S, BD-G-S, BD-G-M, Clean, MULT or PATCH; default: config attack block");
        c->add_option("--seed", seed, "cell seed")->capture_default_str();
        c->add_option("--run-dir", run_dir, "output directory")->capture_default_str();
    }

    // detect
    auto* detect_cmd = app.add_subcommand("detect", "run the pair sweep and the order-statistic test");
    std::string model_path;
    DataArgs data;
    OptimizerConfig opt{.max_norm = 0.0};
    DetectConfig dc;
    std::string objective = "j", norm = "l2", label = "AD";
    double attack_norm = 0.6;
    detect_cmd->add_option("--model", model_path, "model file")->required();
    add_data_args(detect_cmd, data);
    detect_cmd->add_option("--theta", dc.theta, "significance threshold")->capture_default_str();
    detect_cmd->add_option("--pi", opt.pi, "target misclassification fraction")->capture_default_str();
    detect_cmd->add_option("--objective", objective, "surrogate objective")
        ->check(CLI::IsMember({"j", "jp", "jc", "internal"}))
        ->capture_default_str();
    detect_cmd->add_option("--norm", norm, "perturbation size norm")->check(CLI::IsMember({"l1", "l2"}))->capture_default_str();
    detect_cmd->add_flag("--correct-confusion", dc.correct_confusion, "offset sizes by the natural-confusion estimate");
    detect_cmd->add_option("--order", dc.order, "polynomial order for the confusion correction")->capture_default_str();
    detect_cmd->add_flag("--naive-null", dc.naive_null, "fit the null on all statistics, unconditioned");
    detect_cmd->add_option("--max-norm", opt.max_norm, "size bound; 0 = automatic")->capture_default_str();
    detect_cmd->add_option("--attack-norm", attack_norm, "reference attack norm for the automatic bound")
        ->capture_default_str();
    detect_cmd->add_option("--max-iters", opt.max_iters, "iteration cap per pair")->capture_default_str();
    detect_cmd->add_option("--label", label, "name used for the output files")->capture_default_str();
    detect_cmd->add_option("--run-dir", run_dir, "output directory")->capture_default_str();

    // nc-detect
    auto* nc_cmd = app.add_subcommand("nc-detect", "mask/pattern reverse engineering with the MAD outlier test");
    NCConfig nc;
    double theta_mad = 2.0;
    std::string mask_norm = "l1";
    nc_cmd->add_option("--model", model_path, "model file")->required();
    add_data_args(nc_cmd, data);
    nc_cmd->add_option("--lambda", nc.lambda, "mask-norm weight")->capture_default_str();
    nc_cmd->add_option("--pi", nc.pi, "target misclassification fraction")->capture_default_str();
    nc_cmd->add_option("--theta", theta_mad, "anomaly index threshold")->capture_default_str();
    nc_cmd->add_option("--norm", mask_norm, "mask norm")->check(CLI::IsMember({"l1", "l2"}))->capture_default_str();
    nc_cmd->add_option("--max-iters", nc.max_iters, "iteration cap per class")->capture_default_str();
    nc_cmd->add_option("--run-dir", run_dir, "output directory")->capture_default_str();

    auto* ens_cmd = app.add_subcommand("ensemble", "groups x seeds x detector variants, plus sensitivity studies");
    ens_cmd->add_option("--config", config, "experiment config (JSON)")->required();
    ens_cmd->add_option("--run-dir", run_dir, "output directory; default: the config's output");
    ens_cmd->add_flag("--quiet", "no progress lines");

    auto* report_cmd = app.add_subcommand("report", "write plot-data CSVs from a run directory");
    report_cmd->add_option("--run-dir", run_dir, "run directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (*poison_cmd) return cmd_poison(config, group, seed, run_dir);
        if (*train_cmd) return cmd_train(config, group, seed, run_dir);

        if (*detect_cmd) {
            const Network net = load_model(model_path);
            const Dataset det = detection_set_from(data, net);
            opt.objective = objective_from_string(objective);
            opt.norm = norm_from_string(norm);
            opt = resolve_optimizer(opt, net, det, attack_norm);
            const Detection d = run_detector(net, det, opt, dc);
            const json cfg_json{{"model", model_path}, {"data", data.dir}, {"per_class", data.per_class},
                                {"seed", data.seed}, {"optimizer", to_json(opt)}, {"decision", to_json(dc)}};
            const fs::path out = fs::path(run_dir) / ("detect-" + label + ".json");
            write_json(out, {{"kind", "ad"}, {"variant", label}, {"config_hash", config_hash(cfg_json)},
                             {"verdict", to_json(d.verdict)}, {"sweep", to_json(d.sweep)}});
            const fs::path pat = fs::path(run_dir) / ("estimate-" + label + ".bspt");
            save_pattern(pat, BackdoorPattern{Mechanism::additive, d.verdict.pattern, {}});
            record_manifest(run_dir, "detect", cfg_json, {out, pat});
            std::cout << "p_max " << d.verdict.p_max << " (theta " << dc.theta << "), top pair ("
                      << d.verdict.top_pair.first << "," << d.verdict.top_pair.second << ")"
                      << (d.verdict.detected ? ": attack detected" : ": no detection") << "\n";
            for (const auto& msg : d.verdict.diagnostics) std::cerr << "note: " << msg << "\n";
            return d.verdict.detected ? kExitDetected : 0;
        }

        if (*nc_cmd) {
            const Network net = load_model(model_path);
            const Dataset det = detection_set_from(data, net);
            nc.mask_norm = mask_norm == "l1" ? MaskNorm::l1 : MaskNorm::l2;
            const AnomalyReport r = nc_detect(net, det, nc, theta_mad);
            const json cfg_json{{"model", model_path}, {"data", data.dir}, {"per_class", data.per_class},
                                {"seed", data.seed}, {"nc", to_json(nc)}, {"theta_mad", theta_mad}};
            json doc = to_json(r, theta_mad);
            doc["config_hash"] = config_hash(cfg_json);
            const fs::path out = fs::path(run_dir) / "detect-NC.json";
            write_json(out, doc);
            record_manifest(run_dir, "nc-detect", cfg_json, {out});
            std::cout << "top class " << r.top_class << ", anomaly index " << r.top_index
                      << (r.detected ? ": attack detected" : ": no detection") << "\n";
            for (const auto& msg : r.diagnostics) std::cerr << "note: " << msg << "\n";
            return r.detected ? kExitDetected : 0;
        }

        if (*ens_cmd) {
            const ExperimentConfig cfg = load_experiment(config);
            const fs::path dir = ens_cmd->count("--run-dir") ? fs::path(run_dir) : cfg.output;
            const json doc = run_ensemble(cfg, dir, ens_cmd->count("--quiet") ? nullptr : &std::cerr);
            record_manifest(dir, "ensemble", to_json(cfg), {dir / "ensemble.json", dir / "ensemble.csv"});
            for (const auto& row : doc["table"])
                std::cout << row["group"].get<std::string>() << "\t" << row["variant"].get<std::string>() << "\t"
                          << row["correct"] << "/" << row["total"] << "\n";
            return 0;
        }

        if (*report_cmd) {
            const auto files = write_report(run_dir);
            record_manifest(run_dir, "report", json{{"run_dir", run_dir}}, files);
            for (const auto& f : files) std::cout << f.string() << "\n";
            return 0;
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 1;
}
