#pragma once

// Seeded experiment cells: build data, poison, train, detect. Everything a
// cell does is a function of the experiment config and the cell seed.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "bdscan/attack.hpp"
#include "bdscan/data_io.hpp"
#include "bdscan/inference.hpp"
#include "bdscan/json_io.hpp"
#include "bdscan/nc.hpp"
#include "bdscan/perturb.hpp"
#include "bdscan/train.hpp"

namespace bdscan {

struct DataSpec {
    std::string kind = "synthetic";  // synthetic | cifar10 | dir
    std::filesystem::path path;      // cifar10 / dir only
    std::size_t classes = 5;
    std::size_t train_per_class = 500;
    std::size_t test_per_class = 100;
    std::size_t height = 16;
    std::size_t width = 16;
};

struct ModelSpec {
    TrainConfig train{.augment = false};
    std::size_t cut_index = 1;
};

// What to plant. pattern: none | sparse | chessboard | multiplicative | patch.
// sources: single (class seed % K) or all (every class but the target).
struct AttackPlan {
    std::string pattern = "chessboard";
    std::string sources = "single";
    double l2_norm = 0.6;
    std::size_t n_pixels = 4;
    double factor = 1.02;
    std::size_t patch_side = 3;
    double poison_fraction = 0.2;  // of one source class, split across sources

    bool clean() const { return pattern == "none"; }
};

// Named groups: BD-P-S, BD-G-S, BD-G-M, Clean, MULT, PATCH.
AttackPlan group_plan(const std::string& group, const AttackPlan& base = {});
const std::vector<std::string>& known_groups();

struct DetectorSpec {
    // max_norm 0 picks 10x the attack norm in image space and 10x the median
    // clean feature norm for the internal objective.
    OptimizerConfig optimizer{.max_norm = 0.0};
    DetectConfig decision;
    std::size_t per_class = 25;
    bool relabel = false;  // label the detection set by the model's own decisions
};

// One column of the ensemble table.
struct Variant {
    std::string name;
    std::string kind = "ad";  // ad | nc
    Objective objective = Objective::j;
};

struct ExperimentConfig {
    DataSpec data;
    ModelSpec model;
    AttackPlan attack;
    DetectorSpec detector;
    NCConfig nc;
    double nc_theta = 2.0;
    std::vector<std::uint64_t> seeds{1};
    std::vector<std::string> groups{"BD-G-S", "Clean"};
    std::vector<Variant> variants{{"AD-J", "ad", Objective::j}};
    // Sensitivity studies, run on `sweep_groups` with the first AD variant.
    std::vector<std::string> sweep_groups;
    std::vector<double> pi_sweep;
    std::vector<std::size_t> clean_set_sweep;
    bool naive_null_ablation = true;
    // Attack strength study: success rate per chessboard norm.
    std::vector<double> norm_sweep;
    std::filesystem::path output = "run";

    void validate() const;
};

json to_json(const ExperimentConfig& cfg);
// Missing keys keep their defaults; unknown keys are rejected.
ExperimentConfig experiment_from_json(const json& j);
ExperimentConfig load_experiment(const std::filesystem::path& path);

// Per-seed derived choices.
std::size_t cell_source(std::uint64_t seed, std::size_t k);
std::size_t cell_target(std::uint64_t seed, std::size_t k);

// Clean train/test splits for a cell.
DatasetSplits cell_data(const DataSpec& spec, std::uint64_t seed);
std::optional<AttackSpec> cell_attack(const AttackPlan& plan, const Dataset& train, std::uint64_t seed);

struct TrainedCell {
    std::uint64_t seed = 0;
    AttackPlan plan;
    Network net;
    Dataset test;
    std::optional<AttackSpec> attack;
    std::optional<AttackReport> report;
    double clean_accuracy = 0.0;
    TrainReport training;
};

TrainedCell train_cell(const ExperimentConfig& cfg, const AttackPlan& plan, std::uint64_t seed);

Dataset cell_detection_set(const Network& net, const Dataset& test, const DetectorSpec& spec, std::uint64_t seed);

// Fills in max_norm when it is left at 0.
OptimizerConfig resolve_optimizer(OptimizerConfig cfg, const Network& net, const Dataset& detection_set,
                                  double attack_norm);

struct Detection {
    PairSweepResult sweep;
    Verdict verdict;
};
Detection run_detector(const Network& net, const Dataset& detection_set, const OptimizerConfig& opt,
                       const DetectConfig& decision, Exec exec = Exec::parallel);

// Detected with the right target for attacked cells, not detected for clean.
bool ad_correct(const Verdict& v, const std::optional<AttackSpec>& attack);
bool nc_correct(const AnomalyReport& r, const std::optional<AttackSpec>& attack);

// Runs the group x seed x variant grid plus the configured sensitivity
// studies. Writes cells/, ensemble.csv and ensemble.json under run_dir and
// returns the ensemble document. Progress goes to `log` when given.
json run_ensemble(const ExperimentConfig& cfg, const std::filesystem::path& run_dir, std::ostream* log = nullptr);

// Plot data from a run directory: reciprocals.csv, traces.csv and one CSV
// per sensitivity study present. Returns the files written.
std::vector<std::filesystem::path> write_report(const std::filesystem::path& run_dir);

// Appends an entry to run_dir/manifest.json.
void record_manifest(const std::filesystem::path& run_dir, const std::string& command, const json& config,
                     const std::vector<std::filesystem::path>& outputs);

}  // namespace bdscan
