#include "bdscan/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <map>
#include <ostream>
#include <set>

#include "bdscan/errors.hpp"
#include "bdscan/model_io.hpp"

namespace bdscan {

namespace fs = std::filesystem;

const std::vector<std::string>& known_groups() {
    static const std::vector<std::string> g{"BD-P-S", "BD-G-S", "BD-G-M", "Clean", "MULT", "PATCH"};
    return g;
}

AttackPlan group_plan(const std::string& group, const AttackPlan& base) {
    AttackPlan p = base;
    if (group == "BD-P-S") {
        p.pattern = "sparse";
        p.sources = "single";
    } else if (group == "BD-G-S") {
        p.pattern = "chessboard";
        p.sources = "single";
    } else if (group == "BD-G-M") {
        p.pattern = "chessboard";
        p.sources = "all";
    } else if (group == "Clean") {
        p.pattern = "none";
    } else if (group == "MULT") {
        p.pattern = "multiplicative";
        p.sources = "single";
    } else if (group == "PATCH") {
        p.pattern = "patch";
        p.sources = "single";
    } else {
        throw ConfigError("unknown group '" + group + "'");
    }
    return p;
}

void ExperimentConfig::validate() const {
    if (seeds.empty()) throw ConfigError("experiment needs at least one seed");
    if (data.kind != "synthetic" && data.kind != "cifar10" && data.kind != "dir")
        throw ConfigError("dataset kind must be synthetic, cifar10 or dir");
    if (data.kind != "synthetic" && !fs::exists(data.path))
        throw ConfigError("dataset path " + data.path.string() + " does not exist");
    if (data.classes < 3) throw ConfigError("need at least three classes");
    for (const auto& g : groups) group_plan(g);
    for (const auto& g : sweep_groups) group_plan(g);
    const std::set<std::string> patterns{"none", "sparse", "chessboard", "multiplicative", "patch"};
    if (!patterns.count(attack.pattern)) throw ConfigError("unknown attack pattern '" + attack.pattern + "'");
    if (attack.sources != "single" && attack.sources != "all")
        throw ConfigError("attack sources must be single or all");
    if (!(attack.poison_fraction >= 0.0 && attack.poison_fraction <= 1.0))
        throw ConfigError("poison_fraction must lie in [0, 1]");
    if (variants.empty()) throw ConfigError("experiment needs at least one detector variant");
    for (const auto& v : variants)
        if (v.kind != "ad" && v.kind != "nc") throw ConfigError("variant kind must be ad or nc");
    if (!(detector.optimizer.max_norm >= 0.0)) throw ConfigError("max_norm must be nonnegative");
    if (detector.per_class == 0) throw ConfigError("detection set needs at least one image per class");
    for (double pi : pi_sweep)
        if (!(pi > 0.0 && pi <= 1.0)) throw ConfigError("pi sweep values must lie in (0, 1]");
    nc.validate();
}

json to_json(const ExperimentConfig& c) {
    json variants = json::array();
    for (const auto& v : c.variants)
        variants.push_back({{"name", v.name}, {"kind", v.kind}, {"objective", to_string(v.objective)}});
    const auto& t = c.model.train;
    return {
        {"data",
         {{"kind", c.data.kind},
          {"path", c.data.path.string()},
          {"classes", c.data.classes},
          {"train_per_class", c.data.train_per_class},
          {"test_per_class", c.data.test_per_class},
          {"height", c.data.height},
          {"width", c.data.width}}},
        {"model",
         {{"epochs", t.epochs},
          {"batch_size", t.batch_size},
          {"learning_rate", t.learning_rate},
          {"optimizer", t.optimizer == OptimizerKind::adam ? "adam" : "sgd"},
          {"augment", t.augment},
          {"cut_index", c.model.cut_index}}},
        {"attack",
         {{"pattern", c.attack.pattern},
          {"sources", c.attack.sources},
          {"l2_norm", c.attack.l2_norm},
          {"n_pixels", c.attack.n_pixels},
          {"factor", c.attack.factor},
          {"patch_side", c.attack.patch_side},
          {"poison_fraction", c.attack.poison_fraction}}},
        {"detector",
         {{"optimizer", to_json(c.detector.optimizer)},
          {"decision", to_json(c.detector.decision)},
          {"per_class", c.detector.per_class},
          {"relabel", c.detector.relabel}}},
        {"nc", to_json(c.nc)},
        {"nc_theta", c.nc_theta},
        {"seeds", c.seeds},
        {"groups", c.groups},
        {"variants", variants},
        {"sweep_groups", c.sweep_groups},
        {"pi_sweep", c.pi_sweep},
        {"clean_set_sweep", c.clean_set_sweep},
        {"naive_null_ablation", c.naive_null_ablation},
        {"norm_sweep", c.norm_sweep},
        {"output", c.output.string()},
    };
}

namespace {

void reject_unknown(const json& j, std::initializer_list<const char*> keys, const std::string& where) {
    if (!j.is_object()) throw ConfigError(where + " must be a JSON object");
    for (const auto& [k, _] : j.items())
        if (std::none_of(keys.begin(), keys.end(), [&](const char* x) { return k == x; }))
            throw ConfigError("unknown key '" + k + "' in " + where);
}

template <class T>
void take(const json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace

ExperimentConfig experiment_from_json(const json& j) {
    ExperimentConfig c;
    try {
        reject_unknown(j,
                       {"data", "model", "attack", "detector", "nc", "nc_theta", "seeds", "groups", "variants",
                        "sweep_groups", "pi_sweep", "clean_set_sweep", "naive_null_ablation", "norm_sweep", "output"},
                       "experiment config");
        if (j.contains("data")) {
            const auto& d = j["data"];
            reject_unknown(d, {"kind", "path", "classes", "train_per_class", "test_per_class", "height", "width"},
                           "data");
            take(d, "kind", c.data.kind);
            if (d.contains("path")) c.data.path = d["path"].get<std::string>();
            take(d, "classes", c.data.classes);
            take(d, "train_per_class", c.data.train_per_class);
            take(d, "test_per_class", c.data.test_per_class);
            take(d, "height", c.data.height);
            take(d, "width", c.data.width);
        }
        if (j.contains("model")) {
            const auto& m = j["model"];
            reject_unknown(m, {"epochs", "batch_size", "learning_rate", "optimizer", "augment", "cut_index"}, "model");
            take(m, "epochs", c.model.train.epochs);
            take(m, "batch_size", c.model.train.batch_size);
            take(m, "learning_rate", c.model.train.learning_rate);
            take(m, "augment", c.model.train.augment);
            take(m, "cut_index", c.model.cut_index);
            if (m.contains("optimizer")) {
                const auto o = m["optimizer"].get<std::string>();
                if (o != "adam" && o != "sgd") throw ConfigError("model optimizer must be adam or sgd");
                c.model.train.optimizer = o == "adam" ? OptimizerKind::adam : OptimizerKind::sgd;
            }
        }
        if (j.contains("attack")) {
            const auto& a = j["attack"];
            reject_unknown(a, {"pattern", "sources", "l2_norm", "n_pixels", "factor", "patch_side", "poison_fraction"},
                           "attack");
            take(a, "pattern", c.attack.pattern);
            take(a, "sources", c.attack.sources);
            take(a, "l2_norm", c.attack.l2_norm);
            take(a, "n_pixels", c.attack.n_pixels);
            take(a, "factor", c.attack.factor);
            take(a, "patch_side", c.attack.patch_side);
            take(a, "poison_fraction", c.attack.poison_fraction);
        }
        if (j.contains("detector")) {
            const auto& d = j["detector"];
            reject_unknown(d, {"optimizer", "decision", "per_class", "relabel"}, "detector");
            if (d.contains("optimizer")) {
                reject_unknown(d["optimizer"], {"pi", "step", "max_norm", "max_step", "max_iters", "objective", "norm"},
                               "detector.optimizer");
                c.detector.optimizer = optimizer_config_from_json(d["optimizer"]);
                if (!d["optimizer"].contains("max_norm")) c.detector.optimizer.max_norm = 0.0;
            }
            if (d.contains("decision")) {
                const auto& x = d["decision"];
                reject_unknown(x, {"theta", "correct_confusion", "order", "naive_null"}, "detector.decision");
                take(x, "theta", c.detector.decision.theta);
                take(x, "correct_confusion", c.detector.decision.correct_confusion);
                take(x, "order", c.detector.decision.order);
                take(x, "naive_null", c.detector.decision.naive_null);
            }
            take(d, "per_class", c.detector.per_class);
            take(d, "relabel", c.detector.relabel);
        }
        if (j.contains("nc")) {
            const auto& n = j["nc"];
            reject_unknown(n, {"lambda", "pi", "max_iters", "mask_norm", "loss", "step", "max_mask_norm"}, "nc");
            take(n, "lambda", c.nc.lambda);
            take(n, "pi", c.nc.pi);
            take(n, "max_iters", c.nc.max_iters);
            take(n, "step", c.nc.step);
            take(n, "max_mask_norm", c.nc.max_mask_norm);
            if (n.contains("mask_norm")) {
                const auto s = n["mask_norm"].get<std::string>();
                if (s != "l1" && s != "l2") throw ConfigError("nc mask_norm must be l1 or l2");
                c.nc.mask_norm = s == "l1" ? MaskNorm::l1 : MaskNorm::l2;
            }
            if (n.contains("loss")) {
                const auto s = n["loss"].get<std::string>();
                if (s != "posterior" && s != "log_posterior")
                    throw ConfigError("nc loss must be posterior or log_posterior");
                c.nc.loss = s == "posterior" ? NCLoss::posterior : NCLoss::log_posterior;
            }
        }
        take(j, "nc_theta", c.nc_theta);
        take(j, "seeds", c.seeds);
        take(j, "groups", c.groups);
        if (j.contains("variants")) {
            c.variants.clear();
            for (const auto& v : j["variants"]) {
                reject_unknown(v, {"name", "kind", "objective"}, "variant");
                Variant x;
                x.kind = v.value("kind", std::string("ad"));
                x.objective = objective_from_string(v.value("objective", std::string("j")));
                x.name = v.value("name", x.kind == "nc" ? std::string("NC") : "AD-" + std::string(to_string(x.objective)));
                c.variants.push_back(x);
            }
        }
        take(j, "sweep_groups", c.sweep_groups);
        take(j, "pi_sweep", c.pi_sweep);
        take(j, "clean_set_sweep", c.clean_set_sweep);
        take(j, "naive_null_ablation", c.naive_null_ablation);
        take(j, "norm_sweep", c.norm_sweep);
        if (j.contains("output")) c.output = j["output"].get<std::string>();
    } catch (const json::exception& e) {
        throw ConfigError(std::string("experiment config: ") + e.what());
    }
    c.validate();
    return c;
}

ExperimentConfig load_experiment(const fs::path& path) { return experiment_from_json(read_json(path)); }

std::size_t cell_source(std::uint64_t seed, std::size_t k) { return std::size_t(seed % k); }
std::size_t cell_target(std::uint64_t seed, std::size_t k) { return std::size_t((seed + 2) % k); }

DatasetSplits cell_data(const DataSpec& spec, std::uint64_t seed) {
    if (spec.kind == "synthetic") {
        DatasetSplits s;
        s.train = generate_synthetic(spec.classes, spec.train_per_class, spec.height, spec.width, seed * 10 + 1);
        s.test = generate_synthetic(spec.classes, spec.test_per_class, spec.height, spec.width, seed * 10 + 2);
        s.meta = {spec.classes, s.train.shape(), seed};
        return s;
    }
    if (spec.kind == "cifar10") {
        DatasetSplits s;
        s.train = load_cifar10(spec.path, CifarSplit::train);
        s.test = load_cifar10(spec.path, CifarSplit::test);
        s.meta = {s.train.num_classes(), s.train.shape(), 0};
        return s;
    }
    return load_dataset_dir(spec.path);
}

std::optional<AttackSpec> cell_attack(const AttackPlan& plan, const Dataset& train, std::uint64_t seed) {
    if (plan.clean()) return std::nullopt;
    const std::size_t k = train.num_classes();
    AttackSpec spec;
    spec.target = cell_target(seed, k);
    if (plan.sources == "all") {
        for (std::size_t c = 0; c < k; ++c)
            if (c != spec.target) spec.sources.push_back(c);
    } else {
        spec.sources = {cell_source(seed, k)};
    }
    const Shape3 shape = train.shape();
    if (plan.pattern == "sparse")
        spec.pattern = gen_sparse_pattern(shape, plan.n_pixels, plan.l2_norm, seed);
    else if (plan.pattern == "chessboard")
        spec.pattern = gen_chessboard_pattern(shape, plan.l2_norm, seed);
    else if (plan.pattern == "multiplicative")
        spec.pattern = gen_multiplicative_chessboard(shape, plan.factor, seed);
    else if (plan.pattern == "patch")
        spec.pattern = gen_patch_pattern(shape, plan.patch_side, seed);
    else
        throw ConfigError("unknown attack pattern '" + plan.pattern + "'");
    spec.n_poison = std::size_t(std::lround(plan.poison_fraction * double(train.class_size(spec.sources.front()))));
    spec.seed = seed;
    return spec;
}

TrainedCell train_cell(const ExperimentConfig& cfg, const AttackPlan& plan, std::uint64_t seed) {
    TrainedCell cell;
    cell.seed = seed;
    cell.plan = plan;
    DatasetSplits data = cell_data(cfg.data, seed);
    cell.attack = cell_attack(plan, data.train, seed);
    const Dataset train_set = cell.attack ? poison(data.train, *cell.attack).data : data.train;

    cell.net = Network::reference(train_set.shape(), train_set.num_classes());
    cell.net.set_cut_index(cfg.model.cut_index);
    cell.net.init_params(seed);
    TrainConfig tc = cfg.model.train;
    tc.seed = seed;
    cell.training = train(cell.net, train_set, tc);
    cell.clean_accuracy = accuracy(cell.net, data.test);
    if (cell.attack) cell.report = evaluate_attack(cell.net, data.test, *cell.attack);
    cell.test = std::move(data.test);
    return cell;
}

Dataset cell_detection_set(const Network& net, const Dataset& test, const DetectorSpec& spec, std::uint64_t seed) {
    Dataset d = sample_detection_set(test, spec.per_class, seed + 100);
    return spec.relabel ? relabel_by_prediction(net, d) : d;
}

OptimizerConfig resolve_optimizer(OptimizerConfig cfg, const Network& net, const Dataset& detection_set,
                                  double attack_norm) {
    if (cfg.max_norm == 0.0)
        cfg.max_norm = cfg.objective == Objective::internal ? default_feature_max_norm(net, detection_set)
                                                            : 10.0 * attack_norm;
    return cfg;
}

Detection run_detector(const Network& net, const Dataset& detection_set, const OptimizerConfig& opt,
                       const DetectConfig& decision, Exec exec) {
    Detection d;
    d.sweep = sweep_all_pairs(net, detection_set, opt, exec);
    d.verdict = decide(d.sweep, decision);
    return d;
}

bool ad_correct(const Verdict& v, const std::optional<AttackSpec>& attack) {
    if (!attack) return !v.detected;
    return v.detected && v.top_pair.second == attack->target;
}

bool nc_correct(const AnomalyReport& r, const std::optional<AttackSpec>& attack) {
    if (!attack) return !r.detected;
    return r.detected && *r.detected == attack->target;
}

namespace {

struct Tally {
    std::size_t correct = 0, total = 0, errors = 0, detections = 0;
    std::vector<double> scores;  // p_max (ad) or top anomaly index (nc)
};

json tally_json(const Tally& t) {
    return {{"correct", t.correct},
            {"total", t.total},
            {"errors", t.errors},
            {"detections", t.detections},
            {"accuracy", t.total ? double(t.correct) / double(t.total) : 0.0},
            {"scores", t.scores}};
}

std::string cell_dir_name(const std::string& group, std::uint64_t seed) {
    return group + "/seed-" + std::to_string(seed);
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

json detection_doc(const Detection& d, const std::string& hash, const std::string& variant) {
    return {{"kind", "ad"}, {"variant", variant}, {"config_hash", hash}, {"verdict", to_json(d.verdict)},
            {"sweep", to_json(d.sweep)}};
}

}  // namespace

json run_ensemble(const ExperimentConfig& cfg, const fs::path& run_dir, std::ostream* log) {
    cfg.validate();
    const json cfg_json = to_json(cfg);
    const std::string hash = config_hash(cfg_json);
    const fs::path cells_dir = run_dir / "cells";
    fs::create_directories(cells_dir);

    std::map<std::pair<std::string, std::string>, Tally> table;
    std::map<std::string, Tally> naive_table, cond_table;
    json cells = json::array(), collateral = json::array();
    std::map<std::pair<std::string, std::uint64_t>, TrainedCell> kept;
    const std::set<std::string> keep(cfg.sweep_groups.begin(), cfg.sweep_groups.end());
    const auto first_ad = std::find_if(cfg.variants.begin(), cfg.variants.end(), [](auto& v) { return v.kind == "ad"; });

    auto train_logged = [&](const std::string& group, const AttackPlan& plan, std::uint64_t seed) {
        const auto t0 = std::chrono::steady_clock::now();
        TrainedCell c = train_cell(cfg, plan, seed);
        if (log) {
            *log << group << " seed " << seed << ": clean acc " << c.clean_accuracy;
            if (c.report) *log << ", attack success " << c.report->success_rate;
            *log << " (" << seconds_since(t0) << " s)\n";
        }
        return c;
    };

    for (const auto& group : cfg.groups) {
        const AttackPlan plan = group_plan(group, cfg.attack);
        for (auto seed : cfg.seeds) {
            const fs::path dir = cells_dir / cell_dir_name(group, seed);
            json cell{{"group", group}, {"seed", seed}};
            try {
                TrainedCell tc = train_logged(group, plan, seed);
                fs::create_directories(dir);
                save_model(dir / "model.bsnn", tc.net);
                cell["clean_accuracy"] = tc.clean_accuracy;
                if (tc.attack) {
                    cell["attack"] = to_json(*tc.attack);
                    cell["attack_report"] = to_json(*tc.report);
                    for (std::size_t c = 0; c < tc.report->collateral.size(); ++c)
                        if (tc.report->collateral[c] >= 0.0)
                            collateral.push_back({{"group", group}, {"seed", seed}, {"class", c},
                                                  {"rate", tc.report->collateral[c]}});
                }
                const Dataset det = cell_detection_set(tc.net, tc.test, cfg.detector, seed);
                json results = json::object();
                for (const auto& v : cfg.variants) {
                    Tally& t = table[{group, v.name}];
                    try {
                        if (v.kind == "nc") {
                            const AnomalyReport r = nc_detect(tc.net, det, cfg.nc, cfg.nc_theta);
                            const bool ok = nc_correct(r, tc.attack);
                            t.correct += ok;
                            t.detections += r.detected.has_value();
                            t.scores.push_back(r.top_index);
                            json doc = to_json(r, cfg.nc_theta);
                            doc["config_hash"] = hash;
                            write_json(dir / ("detect-" + v.name + ".json"), doc);
                            results[v.name] = {{"correct", ok}, {"detected", r.detected.has_value()},
                                               {"top_index", r.top_index}};
                        } else {
                            OptimizerConfig oc = cfg.detector.optimizer;
                            oc.objective = v.objective;
                            oc = resolve_optimizer(oc, tc.net, det, plan.l2_norm);
                            const Detection d = run_detector(tc.net, det, oc, cfg.detector.decision);
                            const bool ok = ad_correct(d.verdict, tc.attack);
                            t.correct += ok;
                            t.detections += d.verdict.detected;
                            t.scores.push_back(d.verdict.p_max);
                            write_json(dir / ("detect-" + v.name + ".json"), detection_doc(d, hash, v.name));
                            results[v.name] = {{"correct", ok}, {"detected", d.verdict.detected},
                                               {"p_max", d.verdict.p_max},
                                               {"top_pair", {d.verdict.top_pair.first, d.verdict.top_pair.second}}};
                            if (cfg.naive_null_ablation && &v == &*first_ad) {
                                DetectConfig naive = cfg.detector.decision;
                                naive.naive_null = true;
                                naive_table[group].total++;
                                cond_table[group].total++;
                                cond_table[group].correct += ok;
                                try {
                                    const Verdict nv = decide(d.sweep, naive);
                                    naive_table[group].correct += ad_correct(nv, tc.attack);
                                    naive_table[group].scores.push_back(nv.p_max);
                                } catch (const std::exception&) {
                                    naive_table[group].errors++;
                                }
                                cond_table[group].scores.push_back(d.verdict.p_max);
                            }
                        }
                        t.total++;
                        if (log) *log << "  " << v.name << ": " << results[v.name].dump() << "\n";
                    } catch (const std::exception& e) {
                        t.errors++;
                        results[v.name] = {{"error", e.what()}};
                        if (log) *log << "  " << v.name << " failed: " << e.what() << "\n";
                    }
                }
                cell["results"] = results;
                if (keep.count(group)) kept.emplace(std::make_pair(group, seed), std::move(tc));
            } catch (const std::exception& e) {
                cell["error"] = e.what();
                for (const auto& v : cfg.variants) table[{group, v.name}].errors++;
                if (log) *log << group << " seed " << seed << " failed: " << e.what() << "\n";
            }
            write_json(dir / "cell.json", cell);
            cells.push_back(cell);
        }
    }

    json doc{{"config_hash", hash}, {"config", cfg_json}, {"cells", cells}, {"collateral", collateral}};
    json rows = json::array();
    std::ofstream csv(run_dir / "ensemble.csv");
    csv << "group,variant,correct,total,errors,accuracy\n";
    for (const auto& group : cfg.groups)
        for (const auto& v : cfg.variants) {
            const Tally& t = table[{group, v.name}];
            json row = tally_json(t);
            row["group"] = group;
            row["variant"] = v.name;
            rows.push_back(row);
            csv << group << "," << v.name << "," << t.correct << "," << t.total << "," << t.errors << ","
                << row["accuracy"].get<double>() << "\n";
        }
    doc["table"] = rows;

    if (cfg.naive_null_ablation && first_ad != cfg.variants.end()) {
        json ab = json::array();
        for (const auto& group : cfg.groups)
            ab.push_back({{"group", group},
                          {"variant", first_ad->name},
                          {"conditional", tally_json(cond_table[group])},
                          {"naive", tally_json(naive_table[group])}});
        doc["naive_null"] = ab;
    }

    // Sensitivity studies reuse the trained cells of the sweep groups.
    if (first_ad != cfg.variants.end() && (!cfg.pi_sweep.empty() || !cfg.clean_set_sweep.empty())) {
        json pis = json::array(), sizes = json::array();
        for (const auto& group : cfg.sweep_groups) {
            const AttackPlan plan = group_plan(group, cfg.attack);
            for (auto seed : cfg.seeds) {
                auto it = kept.find({group, seed});
                if (it == kept.end()) {
                    try {
                        it = kept.emplace(std::make_pair(group, seed), train_logged(group, plan, seed)).first;
                    } catch (const std::exception& e) {
                        if (log) *log << group << " seed " << seed << " failed: " << e.what() << "\n";
                        continue;
                    }
                }
                const TrainedCell& tc = it->second;
                const Dataset det = cell_detection_set(tc.net, tc.test, cfg.detector, seed);
                for (double pi : cfg.pi_sweep) {
                    json row{{"group", group}, {"seed", seed}, {"pi", pi}};
                    try {
                        OptimizerConfig oc = cfg.detector.optimizer;
                        oc.objective = first_ad->objective;
                        oc.pi = pi;
                        oc = resolve_optimizer(oc, tc.net, det, plan.l2_norm);
                        const Detection d = run_detector(tc.net, det, oc, cfg.detector.decision);
                        row["p_max"] = d.verdict.p_max;
                        row["detected"] = d.verdict.detected;
                        row["correct"] = ad_correct(d.verdict, tc.attack);
                    } catch (const std::exception& e) {
                        row["error"] = e.what();
                    }
                    if (log) *log << "  pi sweep " << row.dump() << "\n";
                    pis.push_back(row);
                }
                for (std::size_t n : cfg.clean_set_sweep) {
                    json row{{"group", group}, {"seed", seed}, {"per_class", n}};
                    try {
                        DetectorSpec ds = cfg.detector;
                        ds.per_class = n;
                        const Dataset small = cell_detection_set(tc.net, tc.test, ds, seed);
                        OptimizerConfig oc = cfg.detector.optimizer;
                        oc.objective = first_ad->objective;
                        oc = resolve_optimizer(oc, tc.net, small, plan.l2_norm);
                        const Detection d = run_detector(tc.net, small, oc, cfg.detector.decision);
                        row["p_max"] = d.verdict.p_max;
                        row["detected"] = d.verdict.detected;
                        row["correct"] = ad_correct(d.verdict, tc.attack);
                    } catch (const std::exception& e) {
                        row["error"] = e.what();
                    }
                    if (log) *log << "  clean-set sweep " << row.dump() << "\n";
                    sizes.push_back(row);
                }
            }
        }
        if (!cfg.pi_sweep.empty()) doc["pi_sweep"] = pis;
        if (!cfg.clean_set_sweep.empty()) doc["clean_set_sweep"] = sizes;
    }

    if (!cfg.norm_sweep.empty()) {
        json rows_n = json::array();
        for (double norm : cfg.norm_sweep)
            for (auto seed : cfg.seeds) {
                AttackPlan plan = group_plan("BD-G-S", cfg.attack);
                plan.l2_norm = norm;
                json row{{"l2_norm", norm}, {"seed", seed}};
                try {
                    const TrainedCell tc = train_cell(cfg, plan, seed);
                    row["success_rate"] = tc.report->success_rate;
                    row["clean_accuracy"] = tc.clean_accuracy;
                } catch (const std::exception& e) {
                    row["error"] = e.what();
                }
                if (log) *log << "  norm sweep " << row.dump() << "\n";
                rows_n.push_back(row);
            }
        doc["norm_sweep"] = rows_n;
    }

    write_json(run_dir / "ensemble.json", doc);
    return doc;
}

namespace {

template <class F>
void write_csv(const fs::path& path, const std::string& header, F&& body, std::vector<fs::path>& written) {
    std::ofstream os(path);
    if (!os) throw FormatError("cannot write " + path.string());
    os << header << "\n";
    body(os);
    written.push_back(path);
}

std::string field(const json& row, const char* key) {
    if (!row.contains(key) || row[key].is_null()) return "";
    const auto& v = row[key];
    if (v.is_boolean()) return v.get<bool>() ? "1" : "0";
    if (v.is_string()) return v.get<std::string>();
    return v.dump();
}

}  // namespace

std::vector<fs::path> write_report(const fs::path& run_dir) {
    if (!fs::is_directory(run_dir)) throw ConfigError("run directory " + run_dir.string() + " does not exist");
    std::vector<fs::path> docs;
    for (const auto& e : fs::recursive_directory_iterator(run_dir)) {
        const auto name = e.path().filename().string();
        if (e.is_regular_file() && name.rfind("detect-", 0) == 0 && e.path().extension() == ".json")
            docs.push_back(e.path());
    }
    std::sort(docs.begin(), docs.end());
    const bool has_ensemble = fs::exists(run_dir / "ensemble.json");
    if (docs.empty() && !has_ensemble) throw ConfigError("run directory " + run_dir.string() + " holds no artifacts");

    const fs::path out = run_dir / "report";
    fs::create_directories(out);
    std::vector<fs::path> written;

    std::vector<std::pair<std::string, json>> ad_docs, nc_docs;
    for (const auto& p : docs) {
        json j = read_json(p);
        const std::string model = fs::relative(p.parent_path(), run_dir).generic_string();
        const std::string label = (model == "." ? std::string() : model + "/") + p.stem().string().substr(7);
        (j.value("kind", std::string()) == "nc" ? nc_docs : ad_docs).emplace_back(label, std::move(j));
    }

    write_csv(out / "reciprocals.csv", "model,s,t,d,d0,r,excluded,status", [&](std::ostream& os) {
        for (const auto& [label, j] : ad_docs)
            for (const auto& st : j.at("verdict").at("statistics"))
                os << label << "," << st["s"] << "," << st["t"] << "," << st["d"] << "," << field(st, "d0") << ","
                   << field(st, "r") << "," << (st.value("excluded", false) ? 1 : 0) << ","
                   << st["status"].get<std::string>() << "\n";
    }, written);

    write_csv(out / "verdicts.csv", "model,p_max,detected,top_s,top_t,k,scale,r_min", [&](std::ostream& os) {
        for (const auto& [label, j] : ad_docs) {
            const auto& v = j.at("verdict");
            os << label << "," << v["p_max"] << "," << field(v, "detected") << "," << v["top_pair"][0] << ","
               << v["top_pair"][1] << "," << v["null"]["k"] << "," << v["null"]["scale"] << ","
               << field(v["null"], "r_min") << "\n";
        }
    }, written);

    // Iterates of the top pair of every model.
    write_csv(out / "traces.csv", "model,s,t,tau,d,rho", [&](std::ostream& os) {
        for (const auto& [label, j] : ad_docs) {
            const auto top = j.at("verdict").at("top_pair");
            for (const auto& p : j.at("sweep").at("pairs")) {
                if (p["s"] != top[0] || p["t"] != top[1]) continue;
                const auto& d = p["d"];
                const auto& rho = p["rho"];
                for (std::size_t i = 0; i < d.size(); ++i)
                    os << label << "," << p["s"] << "," << p["t"] << "," << i << "," << d[i] << "," << rho[i] << "\n";
            }
        }
    }, written);

    if (!nc_docs.empty())
        write_csv(out / "nc_indices.csv", "model,class,mask_norm,index,converged", [&](std::ostream& os) {
            for (const auto& [label, j] : nc_docs)
                for (const auto& c : j.at("classes"))
                    os << label << "," << c["class"] << "," << c["mask_norm"] << "," << field(c, "index") << ","
                       << field(c, "converged") << "\n";
        }, written);

    if (has_ensemble) {
        const json e = read_json(run_dir / "ensemble.json");
        if (e.contains("pi_sweep"))
            write_csv(out / "pi_sweep.csv", "group,seed,pi,p_max,detected,correct", [&](std::ostream& os) {
                for (const auto& r : e["pi_sweep"])
                    os << field(r, "group") << "," << r["seed"] << "," << r["pi"] << "," << field(r, "p_max") << ","
                       << field(r, "detected") << "," << field(r, "correct") << "\n";
            }, written);
        if (e.contains("clean_set_sweep"))
            write_csv(out / "clean_set_sweep.csv", "group,seed,per_class,p_max,detected,correct", [&](std::ostream& os) {
                for (const auto& r : e["clean_set_sweep"])
                    os << field(r, "group") << "," << r["seed"] << "," << r["per_class"] << "," << field(r, "p_max")
                       << "," << field(r, "detected") << "," << field(r, "correct") << "\n";
            }, written);
        if (e.contains("norm_sweep"))
            write_csv(out / "norm_sweep.csv", "l2_norm,seed,success_rate,clean_accuracy", [&](std::ostream& os) {
                for (const auto& r : e["norm_sweep"])
                    os << r["l2_norm"] << "," << r["seed"] << "," << field(r, "success_rate") << ","
                       << field(r, "clean_accuracy") << "\n";
            }, written);
        if (e.contains("naive_null"))
            write_csv(out / "naive_null.csv", "group,variant,conditional_accuracy,naive_accuracy", [&](std::ostream& os) {
                for (const auto& r : e["naive_null"])
                    os << field(r, "group") << "," << field(r, "variant") << "," << r["conditional"]["accuracy"] << ","
                       << r["naive"]["accuracy"] << "\n";
            }, written);
        if (e.contains("collateral") && !e["collateral"].empty())
            write_csv(out / "collateral.csv", "group,seed,class,rate", [&](std::ostream& os) {
                for (const auto& r : e["collateral"])
                    os << field(r, "group") << "," << r["seed"] << "," << r["class"] << "," << r["rate"] << "\n";
            }, written);
    }
    return written;
}

void record_manifest(const fs::path& run_dir, const std::string& command, const json& config,
                     const std::vector<fs::path>& outputs) {
    const fs::path path = run_dir / "manifest.json";
    json m = fs::exists(path) ? read_json(path) : json{{"tool", "bdscan"}, {"entries", json::array()}};
    json outs = json::array();
    for (const auto& p : outputs) outs.push_back(fs::relative(p, run_dir).generic_string());
    m["entries"].push_back({{"command", command}, {"config_hash", config_hash(config)}, {"config", config},
                            {"outputs", outs}});
    write_json(path, m);
}

}  // namespace bdscan
