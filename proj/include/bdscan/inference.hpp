#pragma once

#include <cstddef>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "bdscan/perturb.hpp"
#include "bdscan/tensor.hpp"

namespace bdscan {

// Regularized lower incomplete gamma P(k, r / scale), and its complement.
double gamma_cdf(double r, double k, double scale);
double gamma_sf(double r, double k, double scale);
double gamma_log_pdf(double r, double k, double scale);

struct NullModel {
    double shape = 1.0;
    double scale = 1.0;
    // Conditioning threshold; +inf for an unconditional fit.
    double r_min = std::numeric_limits<double>::infinity();
    double log_likelihood = 0.0;
    std::size_t n_fit = 0;
    std::size_t iterations = 0;
    bool converged = false;
};

// Gamma MLE on `sample`, conditioned on every value being <= r_min.
// Derivative-free simplex search over (log shape, log scale) started from
// the method-of-moments estimate. Throws DegenerateData on fewer than two
// distinct values.
NullModel fit_gamma(std::span<const double> sample,
                    double r_min = std::numeric_limits<double>::infinity());

// r_min is the (K-1)-th largest statistic; the fit reads only the values
// ranked below it (ties at the boundary are kept in the fit set).
NullModel fit_conditional_gamma(std::span<const double> stats, std::size_t num_classes);
// All statistics, no conditioning.
NullModel fit_naive_gamma(std::span<const double> stats);

// Probability that the largest of n_stats null draws exceeds r_max.
double order_statistic_pvalue(const NullModel& null, double r_max, std::size_t n_stats);

struct CorrectionResult {
    double d0 = 0.0;
    std::size_t order = 0;  // polynomial order actually used
    bool order_reduced = false;
};

// Sum of squared residuals of the best origin-anchored polynomial of order M
// in (d + d0) through the trace points.
double correction_residual(std::span<const double> d, std::span<const double> rho, double d0, std::size_t order);

// Offset d0 >= 0 whose polynomial fit best explains the trace. Zero when the
// initial confusion is zero.
CorrectionResult confusion_correction(std::span<const double> d, std::span<const double> rho, std::size_t order);
CorrectionResult confusion_correction(const PerturbationTrace& trace, std::size_t order);

struct DetectConfig {
    double theta = 0.05;
    bool correct_confusion = false;
    std::size_t order = 3;
    bool naive_null = false;
};

struct PairStatistic {
    std::size_t source = 0;
    std::size_t target = 0;
    double d = 0.0;
    double d0 = 0.0;
    double r = 0.0;
    bool excluded = false;  // rho already >= pi at v = 0
    PairStatus status = PairStatus::converged;
};

struct Verdict {
    double p_max = 1.0;
    double theta = 0.05;
    bool detected = false;
    std::optional<std::pair<std::size_t, std::size_t>> pair;  // argmax-r pair, set when detected
    std::pair<std::size_t, std::size_t> top_pair{0, 0};       // argmax-r pair regardless of verdict
    double r_max = 0.0;
    NullModel null;
    DetectConfig config;
    std::vector<PairStatistic> statistics;
    std::vector<std::string> diagnostics;
    Tensor pattern;  // final perturbation of the top pair
};

Verdict decide(const PairSweepResult& sweep, const DetectConfig& cfg);

}  // namespace bdscan
