#pragma once

// Batch-level drivers over the per-sample network kernels. Every driver has
// a serial reference path and an OpenMP path that splits the batch across
// threads; per-sample results land in fixed slots and reductions run in
// sample order, so both paths produce bit-identical output.

#include <cstddef>
#include <optional>
#include <span>

#include "bdscan/network.hpp"
#include "bdscan/tensor.hpp"

namespace bdscan {

enum class Exec { serial, parallel };

// Posterior rows (N x K) for a batch of images (N x H x W x C).
Tensor forward(const Network& net, const Tensor& batch, Exec exec = Exec::parallel);

// Runs layers [begin, end) on a batch of activations entering layer `begin`.
Tensor forward_from(const Network& net, const Tensor& inputs, std::size_t begin, Exec exec = Exec::parallel);

// Activations entering layer `end` (that is, f1 when end is the cut index).
Tensor features(const Network& net, const Tensor& batch, std::size_t end, Exec exec = Exec::parallel);

std::size_t argmax(std::span<const double> row);

// Weighted target-posterior objective on activations entering layer `begin`:
//   value = -sum_i w_i p(target | x_i)
// `gradient` holds d value / d x_i in per-sample rows (same shape as inputs).
struct TargetObjective {
    double value = 0.0;
    Tensor gradient;
    Tensor posteriors;
};

TargetObjective target_objective(const Network& net, const Tensor& inputs, std::size_t begin, std::size_t target,
                                 std::span<const double> weights, Exec exec = Exec::parallel);

// Gradient of -mean_i p(target | x_i) with respect to each image, or, when
// from_layer is given (it must equal the network's cut index), with respect
// to the cut-layer features f1(x_i).
Tensor input_gradient(const Network& net, const Tensor& batch, std::size_t target,
                      std::optional<std::size_t> from_layer = {}, Exec exec = Exec::parallel);

// d(-p_t)/d logits for a posterior row, written into `out`.
void target_logit_gradient(std::span<const double> posterior, std::size_t target, double weight,
                           std::span<double> out);

}  // namespace bdscan
