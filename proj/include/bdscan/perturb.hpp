#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "bdscan/dataset.hpp"
#include "bdscan/kernels.hpp"
#include "bdscan/network.hpp"
#include "bdscan/tensor.hpp"

namespace bdscan {

// j: mean target posterior over D_s; jp: over the samples not yet sent to t;
// jc: over the samples the clean classifier gets right; internal: j on
// cut-layer features without clipping.
enum class Objective { j, jp, jc, internal };
enum class NormKind { l1, l2 };

const char* to_string(Objective o);
Objective objective_from_string(const std::string& s);
const char* to_string(NormKind n);
NormKind norm_from_string(const std::string& s);

struct OptimizerConfig {
    double pi = 0.8;
    // Fixed step size; 0 picks one per pair by a line search at v = 0.
    double step = 0.0;
    double max_norm = 1.0;
    // Cap on the L2 length of a single update; 0 means max_norm / 500.
    double max_step = 0.0;
    std::size_t max_iters = 1000;
    Objective objective = Objective::j;
    NormKind norm = NormKind::l2;

    void validate() const;
    double step_cap() const { return max_step > 0.0 ? max_step : max_norm / 500.0; }
};

double perturbation_size(const Tensor& v, NormKind norm);

enum class PairStatus {
    converged,            // rho reached pi
    initially_confused,   // rho >= pi already at v = 0
    norm_bound,           // d(v) exceeded max_norm
    iteration_cap,        // max_iters reached
    stalled,              // zero gradient, no progress possible
    aborted,              // non-finite gradient or empty surrogate subset
};
const char* to_string(PairStatus s);

struct PerturbationTrace {
    std::size_t source = 0;
    std::size_t target = 0;
    std::vector<double> d;    // d(v^(tau)), d[0] = 0
    std::vector<double> rho;  // rho^(tau)
    Tensor v;                 // final perturbation
    double step = 0.0;        // step size used
    PairStatus status = PairStatus::aborted;
    std::string diagnostic;

    bool converged() const { return status == PairStatus::converged || status == PairStatus::initially_confused; }
    double d_final() const { return d.empty() ? 0.0 : d.back(); }
    double rho0() const { return rho.empty() ? 0.0 : rho.front(); }
};

struct PairSweepResult {
    std::size_t num_classes = 0;
    OptimizerConfig config;
    std::vector<PerturbationTrace> traces;  // s-major, t-minor, s != t

    const PerturbationTrace& at(std::size_t s, std::size_t t) const;
};

// The images of one source class prepared for a given objective: image
// batches for the image-space objectives, cut-layer features for internal.
class PairProblem {
public:
    PairProblem(const Network& net, const Tensor& images, std::size_t source, Objective objective,
                Exec exec = Exec::serial);

    const Network& network() const { return *net_; }
    std::size_t source() const { return source_; }
    Objective objective() const { return objective_; }
    std::size_t begin_layer() const { return begin_; }
    const Tensor& inputs() const { return inputs_; }
    // Shape of the perturbation v.
    const Shape3& perturbation_shape() const { return vshape_; }
    std::size_t size() const { return inputs_.dim(0); }
    // Indices correctly classified as the source class at v = 0.
    const std::vector<std::size_t>& clean_correct() const { return clean_correct_; }

    // x + v, clipped to [0, 1] in image space.
    Tensor perturbed(const Tensor& v) const;

private:
    const Network* net_;
    std::size_t source_;
    Objective objective_;
    std::size_t begin_ = 0;
    Tensor inputs_;
    Shape3 vshape_;
    std::vector<std::size_t> clean_correct_;
    Exec exec_;
};

struct ObjectiveValue {
    double value = 0.0;
    Tensor gradient;      // d value / d v, shaped like v
    double rho = 0.0;     // fraction of the whole source set sent to t
    std::size_t active = 0;  // samples the surrogate sums over
};

// Fraction of D_s classified t after perturbing by v.
double misclass_fraction(const PairProblem& prob, const Tensor& v, std::size_t target);

// The surrogate selected by prob.objective(). Throws DegenerateData when jc
// has no correctly classified samples. For jp an empty active set gives
// active == 0, value 0 and a zero gradient.
ObjectiveValue evaluate_objective(const PairProblem& prob, const Tensor& v, std::size_t target);

PerturbationTrace optimize_pair(const PairProblem& prob, std::size_t target, const OptimizerConfig& cfg);

// All K(K-1) ordered pairs, in parallel over pairs unless exec is serial.
// Per-pair results do not depend on exec.
PairSweepResult sweep_all_pairs(const Network& net, const Dataset& detection_set, const OptimizerConfig& cfg,
                                Exec exec = Exec::parallel);

// 10x the median L2 norm of the clean cut-layer features.
double default_feature_max_norm(const Network& net, const Dataset& detection_set);

}  // namespace bdscan
