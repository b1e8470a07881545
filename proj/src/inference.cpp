#include "bdscan/inference.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Dense>
#include <boost/math/tools/minima.hpp>
#include <gsl/gsl_errno.h>
#include <gsl/gsl_multimin.h>

#include "bdscan/errors.hpp"

namespace bdscan {

namespace {

constexpr double kEps = 1e-16;
constexpr int kMaxTerms = 100000;

// P(k, x) by its power series; accurate for x < k + 1.
double lower_series(double k, double x) {
    double term = 1.0 / k, sum = term;
    for (int n = 1; n < kMaxTerms; ++n) {
        term *= x / (k + n);
        sum += term;
        if (std::abs(term) < std::abs(sum) * kEps) break;
    }
    return sum * std::exp(-x + k * std::log(x) - std::lgamma(k));
}

// Q(k, x) by the modified Lentz continued fraction; accurate for x >= k + 1.
double upper_fraction(double k, double x) {
    constexpr double tiny = 1e-300;
    double b = x + 1.0 - k;
    double c = 1.0 / tiny;
    double d = 1.0 / b;
    double h = d;
    for (int i = 1; i < kMaxTerms; ++i) {
        const double an = -i * (i - k);
        b += 2.0;
        d = an * d + b;
        if (std::abs(d) < tiny) d = tiny;
        c = b + an / c;
        if (std::abs(c) < tiny) c = tiny;
        d = 1.0 / d;
        const double delta = d * c;
        h *= delta;
        if (std::abs(delta - 1.0) < kEps) break;
    }
    return std::exp(-x + k * std::log(x) - std::lgamma(k)) * h;
}

void check_params(double k, double scale) {
    if (!(k > 0.0) || !(scale > 0.0)) throw ConfigError("gamma shape and scale must be positive");
}

}  // namespace

double gamma_cdf(double r, double k, double scale) {
    check_params(k, scale);
    if (!(r > 0.0)) return 0.0;
    if (std::isinf(r)) return 1.0;
    const double x = r / scale;
    return x < k + 1.0 ? lower_series(k, x) : 1.0 - upper_fraction(k, x);
}

double gamma_sf(double r, double k, double scale) {
    check_params(k, scale);
    if (!(r > 0.0)) return 1.0;
    if (std::isinf(r)) return 0.0;
    const double x = r / scale;
    return x < k + 1.0 ? 1.0 - lower_series(k, x) : upper_fraction(k, x);
}

double gamma_log_pdf(double r, double k, double scale) {
    check_params(k, scale);
    if (!(r > 0.0)) return -std::numeric_limits<double>::infinity();
    return (k - 1.0) * std::log(r) - r / scale - std::lgamma(k) - k * std::log(scale);
}

// ---------------------------------------------------------------------------
// Conditional maximum likelihood

namespace {

struct FitData {
    std::span<const double> sample;
    double sum_log = 0.0;
    double sum = 0.0;
    double r_min = 0.0;
};

double negative_log_likelihood(const gsl_vector* p, void* raw) {
    const auto* f = static_cast<const FitData*>(raw);
    const double lk = gsl_vector_get(p, 0), ls = gsl_vector_get(p, 1);
    if (std::abs(lk) > 30.0 || std::abs(ls) > 30.0) return 1e300;
    const double k = std::exp(lk), scale = std::exp(ls);
    const double n = double(f->sample.size());
    double ll = (k - 1.0) * f->sum_log - f->sum / scale - n * (std::lgamma(k) + k * ls);
    if (std::isfinite(f->r_min)) {
        const double mass = gamma_cdf(f->r_min, k, scale);
        if (!(mass > 0.0)) return 1e300;
        ll -= n * std::log(mass);
    }
    return std::isfinite(ll) ? -ll : 1e300;
}

}  // namespace

NullModel fit_gamma(std::span<const double> sample, double r_min) {
    if (sample.size() < 2) throw DegenerateData("gamma fit needs at least two statistics");
    for (double r : sample)
        if (!(r > 0.0) || !std::isfinite(r)) throw DegenerateData("gamma fit needs positive finite statistics");
    const auto [lo, hi] = std::minmax_element(sample.begin(), sample.end());
    if (*lo == *hi) throw DegenerateData("all statistics are identical; the null density is degenerate");

    FitData data{sample, 0.0, 0.0, r_min};
    for (double r : sample) {
        data.sum_log += std::log(r);
        data.sum += r;
    }
    const double n = double(sample.size());
    const double mean = data.sum / n;
    double var = 0.0;
    for (double r : sample) var += (r - mean) * (r - mean);
    var /= n;

    gsl_multimin_function fn{&negative_log_likelihood, 2, &data};
    gsl_vector* x = gsl_vector_alloc(2);
    gsl_vector* step = gsl_vector_alloc(2);
    gsl_vector_set(x, 0, std::log(mean * mean / var));
    gsl_vector_set(x, 1, std::log(var / mean));
    gsl_vector_set_all(step, 0.5);
    gsl_multimin_fminimizer* s = gsl_multimin_fminimizer_alloc(gsl_multimin_fminimizer_nmsimplex2, 2);
    gsl_multimin_fminimizer_set(s, &fn, x, step);

    NullModel out;
    out.r_min = r_min;
    out.n_fit = sample.size();
    double prev = s->fval;
    int stable = 0;
    for (std::size_t it = 1; it <= 5000; ++it) {
        out.iterations = it;
        if (gsl_multimin_fminimizer_iterate(s) != GSL_SUCCESS) break;
        // Stop once the best log-likelihood has moved by less than 1e-8 over
        // several iterations and the simplex has collapsed.
        stable = std::abs(prev - s->fval) < 1e-8 ? stable + 1 : 0;
        prev = s->fval;
        if (stable >= 10 && gsl_multimin_test_size(gsl_multimin_fminimizer_size(s), 1e-6) == GSL_SUCCESS) {
            out.converged = true;
            break;
        }
    }
    out.shape = std::exp(gsl_vector_get(s->x, 0));
    out.scale = std::exp(gsl_vector_get(s->x, 1));
    out.log_likelihood = -s->fval;
    gsl_multimin_fminimizer_free(s);
    gsl_vector_free(step);
    gsl_vector_free(x);
    return out;
}

NullModel fit_conditional_gamma(std::span<const double> stats, std::size_t num_classes) {
    if (num_classes < 2) throw ConfigError("need at least two classes");
    const std::size_t top = num_classes - 1;
    if (stats.size() < top + 2)
        throw DegenerateData("too few statistics (" + std::to_string(stats.size()) + ") for a conditional fit");
    std::vector<double> sorted(stats.begin(), stats.end());
    std::sort(sorted.begin(), sorted.end());
    const std::size_t n_fit = sorted.size() - top;
    const double r_min = sorted[n_fit];
    return fit_gamma(std::span<const double>(sorted.data(), n_fit), r_min);
}

NullModel fit_naive_gamma(std::span<const double> stats) { return fit_gamma(stats); }

double order_statistic_pvalue(const NullModel& null, double r_max, std::size_t n_stats) {
    if (!(r_max > 0.0)) return 1.0;
    if (n_stats == 0) throw ConfigError("order statistic needs at least one draw");
    const double cdf = gamma_cdf(r_max, null.shape, null.scale);
    if (cdf <= 0.0) return 1.0;
    // 1 - G^n evaluated as -expm1(n log G), with log G from the tail when G is near 1.
    const double log_g = cdf > 0.5 ? std::log1p(-gamma_sf(r_max, null.shape, null.scale)) : std::log(cdf);
    return std::clamp(-std::expm1(double(n_stats) * log_g), 0.0, 1.0);
}

// ---------------------------------------------------------------------------
// Confusion correction

double correction_residual(std::span<const double> d, std::span<const double> rho, double d0, std::size_t order) {
    const std::size_t n = d.size();
    Eigen::MatrixXd x(n, order);
    Eigen::VectorXd y(n);
    for (std::size_t i = 0; i < n; ++i) {
        double p = 1.0;
        for (std::size_t m = 0; m < order; ++m) {
            p *= d[i] + d0;
            x(Eigen::Index(i), Eigen::Index(m)) = p;
        }
        y(Eigen::Index(i)) = rho[i];
    }
    const Eigen::VectorXd a = x.colPivHouseholderQr().solve(y);
    return (x * a - y).squaredNorm();
}

CorrectionResult confusion_correction(std::span<const double> d, std::span<const double> rho, std::size_t order) {
    if (d.size() != rho.size()) throw ConfigError("trace size and fraction lists differ in length");
    if (order == 0) throw ConfigError("polynomial order must be at least 1");
    CorrectionResult res;
    res.order = order;
    if (d.empty() || rho.front() <= 0.0) return res;
    if (d.size() < order + 1) {
        res.order = d.size() > 1 ? d.size() - 1 : 1;
        res.order_reduced = true;
    }
    if (d.size() < 2) return res;

    const double d_end = *std::max_element(d.begin(), d.end());
    const double hi = 10.0 * std::max(d_end, 1e-12);
    auto f = [&](double d0) { return correction_residual(d, rho, d0, res.order); };

    // Coarse grid, then Brent inside the bracket around the best grid point.
    constexpr int grid = 400;
    int best = 0;
    double best_val = f(0.0);
    for (int i = 1; i <= grid; ++i) {
        const double v = f(hi * i / grid);
        if (v < best_val) {
            best_val = v;
            best = i;
        }
    }
    const double a = hi * std::max(best - 1, 0) / grid;
    const double b = hi * std::min(best + 1, grid) / grid;
    const auto [x, fx] = boost::math::tools::brent_find_minima(f, a, b, 52);
    res.d0 = fx <= best_val ? x : hi * best / grid;
    return res;
}

CorrectionResult confusion_correction(const PerturbationTrace& trace, std::size_t order) {
    return confusion_correction(trace.d, trace.rho, order);
}

// ---------------------------------------------------------------------------

Verdict decide(const PairSweepResult& sweep, const DetectConfig& cfg) {
    if (!(cfg.theta > 0.0) || cfg.theta > 1.0) throw ConfigError("theta must lie in (0, 1]");
    const std::size_t k = sweep.num_classes;
    if (sweep.traces.size() != k * (k - 1)) throw ConfigError("sweep does not cover every ordered class pair");

    Verdict v;
    v.theta = cfg.theta;
    v.config = cfg;
    std::vector<double> rs;
    std::size_t top = 0;
    for (std::size_t i = 0; i < sweep.traces.size(); ++i) {
        const auto& tr = sweep.traces[i];
        PairStatistic st;
        st.source = tr.source;
        st.target = tr.target;
        st.status = tr.status;
        st.d = tr.d_final();
        if (tr.status == PairStatus::initially_confused) {
            st.excluded = true;
            v.diagnostics.push_back("pair (" + std::to_string(tr.source) + "," + std::to_string(tr.target) +
                                    ") already misclassified at rate " + std::to_string(tr.rho0()) +
                                    " >= pi; no statistic");
            v.statistics.push_back(st);
            continue;
        }
        if (tr.status == PairStatus::stalled || tr.status == PairStatus::aborted) {
            // No usable minimum was found; treat it as reaching the bound.
            st.d = std::max(st.d, sweep.config.max_norm);
            v.diagnostics.push_back("pair (" + std::to_string(tr.source) + "," + std::to_string(tr.target) +
                                    ") " + to_string(tr.status) + ": " + tr.diagnostic);
        }
        if (cfg.correct_confusion && tr.rho0() > 0.0) {
            const auto c = confusion_correction(tr, cfg.order);
            st.d0 = c.d0;
            if (c.order_reduced)
                v.diagnostics.push_back("pair (" + std::to_string(tr.source) + "," + std::to_string(tr.target) +
                                        ") correction order reduced to " + std::to_string(c.order));
        }
        st.r = 1.0 / (st.d + st.d0);
        if (rs.empty() || st.r > v.r_max) {
            v.r_max = st.r;
            top = i;
        }
        rs.push_back(st.r);
        v.statistics.push_back(st);
    }
    if (rs.empty()) throw DegenerateData("every class pair was excluded; nothing to test");

    v.null = cfg.naive_null ? fit_naive_gamma(rs) : fit_conditional_gamma(rs, k);
    if (!v.null.converged) v.diagnostics.push_back("null fit stopped before converging; best iterate used");
    v.p_max = order_statistic_pvalue(v.null, v.r_max, k * (k - 1));
    v.detected = v.p_max < cfg.theta;
    v.top_pair = {sweep.traces[top].source, sweep.traces[top].target};
    if (v.detected) v.pair = v.top_pair;
    v.pattern = sweep.traces[top].v;
    return v;
}

}  // namespace bdscan
