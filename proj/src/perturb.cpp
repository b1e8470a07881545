#include "bdscan/perturb.hpp"

#include <algorithm>
#include <cmath>

#include "bdscan/errors.hpp"

namespace bdscan {

const char* to_string(Objective o) {
    switch (o) {
        case Objective::j: return "j";
        case Objective::jp: return "jp";
        case Objective::jc: return "jc";
        case Objective::internal: return "internal";
    }
    return "?";
}

Objective objective_from_string(const std::string& s) {
    if (s == "j") return Objective::j;
    if (s == "jp") return Objective::jp;
    if (s == "jc") return Objective::jc;
    if (s == "internal") return Objective::internal;
    throw ConfigError("unknown objective '" + s + "' (expected j, jp, jc or internal)");
}

const char* to_string(NormKind n) { return n == NormKind::l1 ? "l1" : "l2"; }

NormKind norm_from_string(const std::string& s) {
    if (s == "l1") return NormKind::l1;
    if (s == "l2") return NormKind::l2;
    throw ConfigError("unknown norm '" + s + "' (expected l1 or l2)");
}

const char* to_string(PairStatus s) {
    switch (s) {
        case PairStatus::converged: return "converged";
        case PairStatus::initially_confused: return "initially_confused";
        case PairStatus::norm_bound: return "norm_bound";
        case PairStatus::iteration_cap: return "iteration_cap";
        case PairStatus::stalled: return "stalled";
        case PairStatus::aborted: return "aborted";
    }
    return "?";
}

void OptimizerConfig::validate() const {
    if (!(pi > 0.0 && pi <= 1.0)) throw ConfigError("pi must lie in (0, 1]");
    if (step < 0.0 || !std::isfinite(step)) throw ConfigError("step size must be positive (or 0 for line search)");
    if (!(max_norm > 0.0) || !std::isfinite(max_norm)) throw ConfigError("max_norm must be positive");
    if (max_step < 0.0) throw ConfigError("max_step must be nonnegative");
}

double perturbation_size(const Tensor& v, NormKind norm) { return norm == NormKind::l1 ? v.l1_norm() : v.l2_norm(); }

const PerturbationTrace& PairSweepResult::at(std::size_t s, std::size_t t) const {
    if (s == t || s >= num_classes || t >= num_classes) throw ConfigError("no trace for that class pair");
    return traces.at(s * (num_classes - 1) + (t < s ? t : t - 1));
}

PairProblem::PairProblem(const Network& net, const Tensor& images, std::size_t source, Objective objective,
                         Exec exec)
    : net_(&net), source_(source), objective_(objective), exec_(exec) {
    if (images.rank() != 4 || images.dim(0) == 0) throw ConfigError("source set must be a nonempty image batch");
    if (source >= net.num_classes()) throw ConfigError("source class out of range");
    if (objective == Objective::internal) {
        if (!net.cut_index()) throw ConfigError("internal objective needs a network cut index");
        begin_ = *net.cut_index();
        inputs_ = features(net, images, begin_, exec);
    } else {
        inputs_ = images;
    }
    vshape_ = net.activation_shape(begin_);
    const Tensor post = forward_from(net, inputs_, begin_, exec);
    for (std::size_t i = 0; i < post.dim(0); ++i)
        if (argmax(post.sample(i)) == source) clean_correct_.push_back(i);
}

Tensor PairProblem::perturbed(const Tensor& v) const {
    const std::size_t m = vshape_.size();
    if (v.size() != m) throw ConfigError("perturbation shape does not match the problem");
    Tensor out = inputs_;
    auto& raw = out.raw();
    const bool clip = objective_ != Objective::internal;
    for (std::size_t i = 0; i < raw.size(); i += m)
        for (std::size_t j = 0; j < m; ++j) {
            const double z = raw[i + j] + v[j];
            raw[i + j] = clip ? std::clamp(z, 0.0, 1.0) : z;
        }
    return out;
}

double misclass_fraction(const PairProblem& prob, const Tensor& v, std::size_t target) {
    const Tensor post = forward_from(prob.network(), prob.perturbed(v), prob.begin_layer(), Exec::serial);
    std::size_t hits = 0;
    for (std::size_t i = 0; i < post.dim(0); ++i) hits += argmax(post.sample(i)) == target;
    return double(hits) / double(post.dim(0));
}

ObjectiveValue evaluate_objective(const PairProblem& prob, const Tensor& v, std::size_t target) {
    const std::size_t n = prob.size();
    const std::size_t m = prob.perturbation_shape().size();
    if (prob.objective() == Objective::jc && prob.clean_correct().empty())
        throw DegenerateData("no source sample is classified correctly; jc is undefined");

    // Unit-weight rows g_i = d(-p_t)/d(input_i); the surrogate reweights them.
    const std::vector<double> ones(n, 1.0);
    const TargetObjective unit =
        target_objective(prob.network(), prob.perturbed(v), prob.begin_layer(), target, ones, Exec::serial);

    std::vector<char> hit(n);
    std::size_t hits = 0;
    for (std::size_t i = 0; i < n; ++i) {
        hit[i] = argmax(unit.posteriors.sample(i)) == target;
        hits += hit[i];
    }

    std::vector<double> w(n, 0.0);
    ObjectiveValue out;
    switch (prob.objective()) {
        case Objective::j:
        case Objective::internal:
            std::fill(w.begin(), w.end(), 1.0);
            out.active = n;
            break;
        case Objective::jp:
            for (std::size_t i = 0; i < n; ++i) w[i] = hit[i] ? 0.0 : 1.0;
            out.active = n - hits;
            break;
        case Objective::jc:
            for (auto i : prob.clean_correct()) w[i] = 1.0;
            out.active = prob.clean_correct().size();
            break;
    }
    if (out.active > 0)
        for (double& x : w) x /= double(out.active);

    out.rho = double(hits) / double(n);
    out.gradient = Tensor(prob.perturbation_shape());
    const bool clip = prob.objective() != Objective::internal;
    const auto& in = prob.inputs().raw();
    for (std::size_t i = 0; i < n; ++i) {
        if (w[i] == 0.0) continue;
        out.value -= w[i] * unit.posteriors.sample(i)[target];
        const auto g = unit.gradient.sample(i);
        for (std::size_t j = 0; j < m; ++j) {
            if (clip) {
                const double z = in[i * m + j] + v[j];
                if (z < 0.0 || z > 1.0) continue;
            }
            out.gradient[j] += w[i] * g[j];
        }
    }
    return out;
}

namespace {

// Largest step (halving from the length cap) that does not increase the
// surrogate at v = 0.
double line_search_step(const PairProblem& prob, std::size_t target, const ObjectiveValue& at0, double cap) {
    const double gnorm = at0.gradient.l2_norm();
    double delta = cap / gnorm;
    for (int k = 0; k < 30; ++k, delta *= 0.5) {
        Tensor trial = at0.gradient;
        for (double& x : trial.raw()) x *= -delta;
        if (evaluate_objective(prob, trial, target).value <= at0.value) return delta;
    }
    return delta;
}

}  // namespace

PerturbationTrace optimize_pair(const PairProblem& prob, std::size_t target, const OptimizerConfig& cfg) {
    cfg.validate();
    if (target == prob.source()) throw ConfigError("optimize_pair: source and target must differ");
    if (target >= prob.network().num_classes()) throw ConfigError("optimize_pair: target out of range");

    PerturbationTrace tr;
    tr.source = prob.source();
    tr.target = target;
    tr.step = cfg.step;
    Tensor v(prob.perturbation_shape());
    const double cap = cfg.step_cap();

    for (std::size_t tau = 0;; ++tau) {
        ObjectiveValue ov;
        try {
            ov = evaluate_objective(prob, v, target);
        } catch (const DegenerateData& e) {
            tr.d.push_back(perturbation_size(v, cfg.norm));
            tr.rho.push_back(misclass_fraction(prob, v, target));
            tr.status = PairStatus::aborted;
            tr.diagnostic = e.what();
            break;
        }
        const double d = perturbation_size(v, cfg.norm);
        tr.d.push_back(d);
        tr.rho.push_back(ov.rho);
        if (ov.rho >= cfg.pi) {
            tr.status = tau == 0 ? PairStatus::initially_confused : PairStatus::converged;
            break;
        }
        if (d > cfg.max_norm) {
            tr.status = PairStatus::norm_bound;
            break;
        }
        if (tau == cfg.max_iters) {
            tr.status = PairStatus::iteration_cap;
            break;
        }
        if (!ov.gradient.all_finite()) {
            tr.status = PairStatus::aborted;
            tr.diagnostic = "non-finite gradient at iteration " + std::to_string(tau);
            break;
        }
        const double gnorm = ov.gradient.l2_norm();
        if (gnorm == 0.0) {
            tr.status = PairStatus::stalled;
            tr.diagnostic = "zero gradient at iteration " + std::to_string(tau);
            break;
        }
        if (tr.step == 0.0) tr.step = line_search_step(prob, target, ov, cap);
        const double scale = std::min(tr.step, cap / gnorm);
        for (std::size_t j = 0; j < v.size(); ++j) v[j] -= scale * ov.gradient[j];
    }
    tr.v = std::move(v);
    return tr;
}

PairSweepResult sweep_all_pairs(const Network& net, const Dataset& detection_set, const OptimizerConfig& cfg,
                                Exec exec) {
    cfg.validate();
    const std::size_t k = net.num_classes();
    if (detection_set.num_classes() != k) throw ConfigError("detection set and network disagree on K");
    std::vector<PairProblem> problems;
    problems.reserve(k);
    for (std::size_t s = 0; s < k; ++s) {
        if (detection_set.class_size(s) == 0)
            throw ConfigError("detection set has no images of class " + std::to_string(s));
        problems.emplace_back(net, detection_set.class_batch(s), s, cfg.objective, exec);
    }

    PairSweepResult res;
    res.num_classes = k;
    res.config = cfg;
    res.traces.resize(k * (k - 1));
    auto run = [&](std::size_t idx) {
        const std::size_t s = idx / (k - 1);
        const std::size_t r = idx % (k - 1);
        const std::size_t t = r < s ? r : r + 1;
        res.traces[idx] = optimize_pair(problems[s], t, cfg);
    };
    const std::size_t n = res.traces.size();
    if (exec == Exec::serial) {
        for (std::size_t i = 0; i < n; ++i) run(i);
    } else {
#pragma omp parallel for schedule(dynamic)
        for (std::ptrdiff_t i = 0; i < std::ptrdiff_t(n); ++i) run(std::size_t(i));
    }
    return res;
}

double default_feature_max_norm(const Network& net, const Dataset& detection_set) {
    if (!net.cut_index()) throw ConfigError("network has no cut index");
    const Tensor f = features(net, detection_set.batch(), *net.cut_index());
    std::vector<double> norms(f.dim(0));
    for (std::size_t i = 0; i < norms.size(); ++i) {
        double s = 0.0;
        for (double x : f.sample(i)) s += x * x;
        norms[i] = std::sqrt(s);
    }
    if (norms.empty()) throw ConfigError("empty detection set");
    std::nth_element(norms.begin(), norms.begin() + std::ptrdiff_t(norms.size() / 2), norms.end());
    return 10.0 * norms[norms.size() / 2];
}

}  // namespace bdscan
