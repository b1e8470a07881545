#include "bdscan/json_io.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

#include "bdscan/errors.hpp"

namespace bdscan {

namespace {

// JSON has no infinity; unbounded thresholds are written as null.
json number_or_null(double x) { return std::isfinite(x) ? json(x) : json(nullptr); }

PairStatus status_from_string(const std::string& s) {
    for (auto st : {PairStatus::converged, PairStatus::initially_confused, PairStatus::norm_bound,
                    PairStatus::iteration_cap, PairStatus::stalled, PairStatus::aborted})
        if (s == to_string(st)) return st;
    throw FormatError("unknown pair status '" + s + "'");
}

}  // namespace

json to_json(const AttackReport& r) {
    json collateral = json::object();
    for (std::size_t c = 0; c < r.collateral.size(); ++c)
        if (r.collateral[c] >= 0.0) collateral[std::to_string(c)] = r.collateral[c];
    return {{"success_rate", r.success_rate}, {"clean_accuracy", r.clean_accuracy}, {"collateral", collateral}};
}

json to_json(const AttackSpec& spec, bool with_pattern) {
    json j{{"sources", spec.sources},
           {"target", spec.target},
           {"mechanism", to_string(spec.pattern.mechanism)},
           {"n_poison", spec.n_poison},
           {"seed", spec.seed}};
    if (spec.pattern.mechanism == Mechanism::additive) j["l2_norm"] = spec.pattern.values.l2_norm();
    if (with_pattern) j["pattern"] = spec.pattern.values.raw();
    return j;
}

json to_json(const OptimizerConfig& cfg) {
    return {{"pi", cfg.pi},
            {"step", cfg.step},
            {"max_norm", cfg.max_norm},
            {"max_step", cfg.step_cap()},
            {"max_iters", cfg.max_iters},
            {"objective", to_string(cfg.objective)},
            {"norm", to_string(cfg.norm)}};
}

json to_json(const DetectConfig& cfg) {
    return {{"theta", cfg.theta},
            {"correct_confusion", cfg.correct_confusion},
            {"order", cfg.order},
            {"naive_null", cfg.naive_null}};
}

json to_json(const NullModel& null) {
    return {{"k", null.shape},
            {"scale", null.scale},
            {"r_min", number_or_null(null.r_min)},
            {"log_likelihood", null.log_likelihood},
            {"n_fit", null.n_fit},
            {"iterations", null.iterations},
            {"converged", null.converged}};
}

json to_json(const PerturbationTrace& tr, bool with_iterates) {
    json j{{"s", tr.source},
           {"t", tr.target},
           {"d_final", tr.d_final()},
           {"rho0", tr.rho0()},
           {"rho_final", tr.rho.empty() ? 0.0 : tr.rho.back()},
           {"converged", tr.converged()},
           {"status", to_string(tr.status)},
           {"step", tr.step},
           {"iterations", tr.d.empty() ? 0 : tr.d.size() - 1}};
    if (!tr.diagnostic.empty()) j["diagnostic"] = tr.diagnostic;
    if (with_iterates) {
        j["d"] = tr.d;
        j["rho"] = tr.rho;
    }
    return j;
}

json to_json(const PairSweepResult& sweep) {
    json pairs = json::array();
    for (const auto& tr : sweep.traces) pairs.push_back(to_json(tr));
    return {{"num_classes", sweep.num_classes}, {"config", to_json(sweep.config)}, {"pairs", pairs}};
}

json to_json(const Verdict& v) {
    json stats = json::array(), d0 = json::array();
    for (const auto& st : v.statistics) {
        json s{{"s", st.source}, {"t", st.target}, {"d", st.d}, {"status", to_string(st.status)}};
        if (st.excluded) {
            s["excluded"] = true;
        } else {
            s["r"] = st.r;
            s["d0"] = st.d0;
        }
        stats.push_back(s);
        if (v.config.correct_confusion && !st.excluded) d0.push_back({{"s", st.source}, {"t", st.target}, {"d0", st.d0}});
    }
    json j{{"kind", "ad"},
           {"p_max", v.p_max},
           {"theta", v.theta},
           {"detected", v.detected},
           {"pair", v.pair ? json{v.pair->first, v.pair->second} : json(nullptr)},
           {"top_pair", {v.top_pair.first, v.top_pair.second}},
           {"r_max", v.r_max},
           {"null", to_json(v.null)},
           {"naive_null", v.config.naive_null},
           {"statistics", stats},
           {"correction", {{"enabled", v.config.correct_confusion}, {"M", v.config.order}, {"d0", d0}}},
           {"diagnostics", v.diagnostics}};
    return j;
}

json to_json(const NCConfig& cfg) {
    return {{"lambda", cfg.lambda},
            {"pi", cfg.pi},
            {"max_iters", cfg.max_iters},
            {"mask_norm", cfg.mask_norm == MaskNorm::l1 ? "l1" : "l2"},
            {"loss", cfg.loss == NCLoss::posterior ? "posterior" : "log_posterior"},
            {"step", cfg.step},
            {"max_mask_norm", cfg.max_mask_norm}};
}

json to_json(const AnomalyReport& r, double theta) {
    json classes = json::array();
    for (std::size_t c = 0; c < r.results.size(); ++c) {
        const auto& res = r.results[c];
        classes.push_back({{"class", c},
                           {"mask_norm", res.mask_norm},
                           {"index", number_or_null(r.indices.empty() ? NAN : r.indices[c])},
                           {"converged", res.converged},
                           {"bound_hit", res.bound_hit},
                           {"rho", res.rho},
                           {"iterations", res.iterations}});
    }
    return {{"kind", "nc"},
            {"theta_mad", theta},
            {"detected", r.detected.has_value()},
            {"detected_class", r.detected ? json(*r.detected) : json(nullptr)},
            {"top_class", r.top_class},
            {"top_index", r.top_index},
            {"median", r.median},
            {"mad_fallback", r.fallback},
            {"discarded", r.discarded},
            {"classes", classes},
            {"diagnostics", r.diagnostics}};
}

OptimizerConfig optimizer_config_from_json(const json& j) {
    OptimizerConfig c;
    c.pi = j.value("pi", c.pi);
    c.step = j.value("step", c.step);
    c.max_norm = j.value("max_norm", c.max_norm);
    c.max_step = j.value("max_step", c.max_step);
    c.max_iters = j.value("max_iters", c.max_iters);
    c.objective = objective_from_string(j.value("objective", std::string("j")));
    c.norm = norm_from_string(j.value("norm", std::string("l2")));
    return c;
}

PairSweepResult sweep_from_json(const json& j) {
    try {
        PairSweepResult s;
        s.num_classes = j.at("num_classes").get<std::size_t>();
        s.config = optimizer_config_from_json(j.at("config"));
        for (const auto& p : j.at("pairs")) {
            PerturbationTrace tr;
            tr.source = p.at("s").get<std::size_t>();
            tr.target = p.at("t").get<std::size_t>();
            tr.d = p.at("d").get<std::vector<double>>();
            tr.rho = p.at("rho").get<std::vector<double>>();
            tr.step = p.value("step", 0.0);
            tr.status = status_from_string(p.at("status").get<std::string>());
            tr.diagnostic = p.value("diagnostic", std::string());
            s.traces.push_back(std::move(tr));
        }
        if (s.traces.size() != s.num_classes * (s.num_classes - 1))
            throw FormatError("sweep document does not hold K(K-1) pairs");
        return s;
    } catch (const json::exception& e) {
        throw FormatError(std::string("malformed sweep document: ") + e.what());
    }
}

std::string config_hash(const json& j) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char ch : j.dump()) {
        h ^= ch;
        h *= 1099511628211ull;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

json read_json(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw FormatError("cannot open " + path.string());
    try {
        return json::parse(is);
    } catch (const json::exception& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

void write_json(const std::filesystem::path& path, const json& j) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream os(tmp);
        if (!os) throw FormatError("cannot open " + tmp.string() + " for writing");
        os << j.dump(2) << "\n";
        if (!os) throw FormatError("write failed for " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

}  // namespace bdscan
