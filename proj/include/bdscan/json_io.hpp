#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "json.hpp"

#include "bdscan/attack.hpp"
#include "bdscan/inference.hpp"
#include "bdscan/nc.hpp"
#include "bdscan/perturb.hpp"

namespace bdscan {

using json = nlohmann::json;

json to_json(const AttackReport& r);
json to_json(const AttackSpec& spec, bool with_pattern = false);
json to_json(const OptimizerConfig& cfg);
json to_json(const DetectConfig& cfg);
json to_json(const NullModel& null);
json to_json(const PerturbationTrace& tr, bool with_iterates = true);
json to_json(const PairSweepResult& sweep);
// Verdict schema: p_max, theta, detected, pair, null{k, scale, r_min},
// statistics[], correction{enabled, M, d0 per pair}.
json to_json(const Verdict& v);
json to_json(const NCConfig& cfg);
json to_json(const AnomalyReport& r, double theta);

OptimizerConfig optimizer_config_from_json(const json& j);
// Rebuilds a sweep from its JSON form. Final perturbations are not stored
// in the document, so the traces come back with empty `v`.
PairSweepResult sweep_from_json(const json& j);

// 64-bit FNV-1a of the compact dump (object keys are sorted, so equal
// documents hash equally). Rendered as 16 hex digits.
std::string config_hash(const json& j);

json read_json(const std::filesystem::path& path);
// Writes to a sibling temporary file and renames it into place.
void write_json(const std::filesystem::path& path, const json& j);

}  // namespace bdscan
