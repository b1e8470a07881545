#include "bdscan/nc.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "bdscan/errors.hpp"

namespace bdscan {

void NCConfig::validate() const {
    if (!(lambda > 0.0)) throw ConfigError("NC lambda must be positive");
    if (!(pi > 0.0 && pi <= 1.0)) throw ConfigError("pi must lie in (0, 1]");
    if (!(step > 0.0)) throw ConfigError("NC step must be positive");
    if (!(max_mask_norm > 0.0)) throw ConfigError("NC mask bound must be positive");
}

namespace {

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

struct Adam {
    std::vector<double> m, v;
    double lr;
    std::size_t t = 0;

    Adam(std::size_t n, double lr) : m(n, 0.0), v(n, 0.0), lr(lr) {}

    void step(std::vector<double>& x, const std::vector<double>& g) {
        constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
        ++t;
        const double c1 = 1.0 - std::pow(b1, double(t)), c2 = 1.0 - std::pow(b2, double(t));
        for (std::size_t i = 0; i < x.size(); ++i) {
            m[i] = b1 * m[i] + (1 - b1) * g[i];
            v[i] = b2 * v[i] + (1 - b2) * g[i] * g[i];
            x[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps);
        }
    }
};

}  // namespace

NCResult nc_optimize(const Network& net, const Dataset& detection_set, std::size_t target, const NCConfig& cfg,
                     Exec exec) {
    cfg.validate();
    const std::size_t k = net.num_classes();
    if (target >= k) throw ConfigError("NC target class out of range");
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < detection_set.size(); ++i)
        if (detection_set[i].label != target) idx.push_back(i);
    if (idx.empty()) throw ConfigError("NC needs images from classes other than the target");
    const Tensor x = detection_set.batch_of(idx);
    const Shape3 s = net.input_shape();
    const std::size_t hw = s.h * s.w, n = idx.size();

    std::vector<double> a(hw, cfg.init_mask_logit), b(hw * s.c, 0.0);
    Adam opt_a(hw, cfg.step), opt_b(hw * s.c, cfg.step);
    std::vector<double> ga(hw), gb(hw * s.c);
    const std::vector<double> w(n, 1.0 / double(n));

    NCResult res;
    res.target = target;
    Tensor mask(Shape3{s.h, s.w, 1}), pattern(s);
    for (std::size_t it = 0;; ++it) {
        for (std::size_t p = 0; p < hw; ++p) mask[p] = sigmoid(a[p]);
        for (std::size_t j = 0; j < b.size(); ++j) pattern[j] = sigmoid(b[j]);

        Tensor xp = x;
        for (std::size_t i = 0; i < n; ++i) {
            auto row = xp.sample(i);
            for (std::size_t j = 0; j < row.size(); ++j) {
                const double m = mask[j / s.c];
                row[j] = row[j] * (1.0 - m) + pattern[j] * m;
            }
        }
        TargetObjective obj = target_objective(net, xp, 0, target, w, exec);
        if (cfg.loss == NCLoss::log_posterior) {
            // d(-log p)/dx = d(-p)/dx / p
            obj.value = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                const double pt = std::max(obj.posteriors.sample(i)[target], 1e-300);
                obj.value -= w[i] * std::log(pt);
                for (double& g : obj.gradient.sample(i)) g /= pt;
            }
        }
        double l1 = 0.0, l2 = 0.0;
        for (std::size_t p = 0; p < hw; ++p) {
            l1 += mask[p];
            l2 += mask[p] * mask[p];
        }
        l2 = std::sqrt(l2);
        const double penalty = cfg.mask_norm == MaskNorm::l1 ? cfg.lambda * l1 / double(hw)
                                                             : cfg.lambda * l2 / std::sqrt(double(hw));
        if (!std::isfinite(obj.value + penalty))
            throw TrainingDivergence(it, "NC loss became non-finite for target " + std::to_string(target));

        std::size_t hits = 0;
        for (std::size_t i = 0; i < n; ++i) hits += argmax(obj.posteriors.sample(i)) == target;
        res.rho = double(hits) / double(n);
        res.mask_norm = cfg.mask_norm == MaskNorm::l1 ? l1 : l2;
        res.iterations = it;
        if (res.rho >= cfg.pi) {
            res.converged = true;
            break;
        }
        if (res.mask_norm > cfg.max_mask_norm) {
            res.bound_hit = true;
            break;
        }
        if (it == cfg.max_iters) break;

        std::fill(ga.begin(), ga.end(), 0.0);
        std::fill(gb.begin(), gb.end(), 0.0);
        for (std::size_t i = 0; i < n; ++i) {
            const auto g = obj.gradient.sample(i);
            const auto xi = x.sample(i);
            for (std::size_t j = 0; j < g.size(); ++j) {
                const std::size_t p = j / s.c;
                ga[p] += g[j] * (pattern[j] - xi[j]);
                gb[j] += g[j] * mask[p];
            }
        }
        for (std::size_t p = 0; p < hw; ++p) {
            const double dpen = cfg.mask_norm == MaskNorm::l1
                                    ? cfg.lambda / double(hw)
                                    : (l2 > 0.0 ? cfg.lambda * mask[p] / (l2 * std::sqrt(double(hw))) : 0.0);
            ga[p] = (ga[p] + dpen) * mask[p] * (1.0 - mask[p]);
        }
        for (std::size_t j = 0; j < gb.size(); ++j) gb[j] *= pattern[j] * (1.0 - pattern[j]);
        opt_a.step(a, ga);
        opt_b.step(b, gb);
    }
    res.estimate = {pattern, mask};
    return res;
}

MadResult mad_index(std::span<const double> norms) {
    if (norms.size() < 3) throw DegenerateData("MAD index needs at least three norms");
    for (double x : norms)
        if (!std::isfinite(x)) throw DegenerateData("MAD index needs finite norms");
    auto median_of = [](std::vector<double> v) {
        std::sort(v.begin(), v.end());
        const std::size_t h = v.size() / 2;
        return v.size() % 2 ? v[h] : 0.5 * (v[h - 1] + v[h]);
    };
    MadResult r;
    r.median = median_of({norms.begin(), norms.end()});
    std::vector<double> dev(norms.size());
    for (std::size_t i = 0; i < norms.size(); ++i) dev[i] = std::abs(norms[i] - r.median);
    double spread = median_of(dev);
    if (spread == 0.0) {
        double sum = 0.0;
        for (double d : dev) sum += d;
        spread = sum / double(dev.size());
        r.fallback = true;
        if (spread == 0.0) throw DegenerateData("all norms are equal; the MAD anomaly index is undefined");
    }
    r.scale = 1.4826 * spread;
    r.indices.resize(norms.size());
    for (std::size_t i = 0; i < norms.size(); ++i) r.indices[i] = dev[i] / r.scale;
    return r;
}

std::optional<std::size_t> nc_decide(const AnomalyReport& report, double theta) {
    std::optional<std::size_t> best;
    double best_index = theta;
    for (std::size_t c = 0; c < report.indices.size(); ++c) {
        const double x = report.indices[c];
        if (std::isnan(x) || !(report.norms[c] < report.median)) continue;
        if (x > best_index) {
            best_index = x;
            best = c;
        }
    }
    return best;
}

AnomalyReport nc_detect(const Network& net, const Dataset& detection_set, const NCConfig& cfg, double theta,
                        Exec exec) {
    const std::size_t k = net.num_classes();
    AnomalyReport rep;
    rep.results.resize(k);
    if (exec == Exec::serial) {
        for (std::size_t t = 0; t < k; ++t) rep.results[t] = nc_optimize(net, detection_set, t, cfg);
    } else {
#pragma omp parallel for schedule(dynamic)
        for (std::ptrdiff_t t = 0; t < std::ptrdiff_t(k); ++t)
            rep.results[std::size_t(t)] = nc_optimize(net, detection_set, std::size_t(t), cfg);
    }

    const double nan = std::numeric_limits<double>::quiet_NaN();
    rep.norms.assign(k, nan);
    rep.indices.assign(k, nan);
    std::vector<double> kept;
    std::vector<std::size_t> kept_class;
    for (std::size_t t = 0; t < k; ++t) {
        if (!rep.results[t].converged) {
            rep.discarded.push_back(t);
            continue;
        }
        rep.norms[t] = rep.results[t].mask_norm;
        kept.push_back(rep.results[t].mask_norm);
        kept_class.push_back(t);
    }
    if (kept.size() < 3) {
        rep.diagnostics.push_back("fewer than three classes converged; no anomaly index");
        return rep;
    }
    try {
        const MadResult m = mad_index(kept);
        rep.median = m.median;
        rep.fallback = m.fallback;
        if (m.fallback) rep.diagnostics.push_back("MAD is zero; mean absolute deviation used instead");
        for (std::size_t i = 0; i < kept.size(); ++i) {
            rep.indices[kept_class[i]] = m.indices[i];
            if (kept[i] < m.median && m.indices[i] > rep.top_index) {
                rep.top_index = m.indices[i];
                rep.top_class = kept_class[i];
            }
        }
    } catch (const DegenerateData& e) {
        rep.diagnostics.push_back(e.what());
        return rep;
    }
    rep.detected = nc_decide(rep, theta);
    return rep;
}

}  // namespace bdscan
