#include "bdscan/kernels.hpp"

#include <algorithm>
#include <vector>

#include "bdscan/errors.hpp"

namespace bdscan {

namespace {

std::size_t batch_size_of(const Tensor& t, const Shape3& expected, const char* what) {
    if (t.rank() != 4 || t.image_shape() != expected)
        throw ConfigError(std::string(what) + ": batch shape " + shape_string(t.shape()) + " does not match " +
                          expected.str());
    return t.dim(0);
}

// Calls fn(i, workspace) for every sample, serially or split across threads.
template <class Fn>
void for_each_sample(const Evaluator& ev, std::size_t n, Exec exec, Fn&& fn) {
    if (exec == Exec::serial) {
        auto ws = ev.make_workspace();
        for (std::size_t i = 0; i < n; ++i) fn(i, ws);
        return;
    }
#pragma omp parallel
    {
        auto ws = ev.make_workspace();
#pragma omp for schedule(static)
        for (std::ptrdiff_t i = 0; i < std::ptrdiff_t(n); ++i) fn(std::size_t(i), ws);
    }
}

}  // namespace

std::size_t argmax(std::span<const double> row) {
    return std::size_t(std::max_element(row.begin(), row.end()) - row.begin());
}

Tensor forward_from(const Network& net, const Tensor& inputs, std::size_t begin, Exec exec) {
    if (begin >= net.layer_count()) throw ConfigError("forward_from: start layer out of range");
    const std::size_t n = batch_size_of(inputs, net.activation_shape(begin), "forward");
    if (!inputs.all_finite()) throw ConfigError("forward: batch contains non-finite values");
    const std::size_t k = net.num_classes();
    Tensor out({n, k});
    Evaluator ev(net);
    for_each_sample(ev, n, exec, [&](std::size_t i, Evaluator::Workspace& ws) {
        ev.forward(inputs.sample(i), begin, ws);
        auto p = ev.posterior(ws);
        std::copy(p.begin(), p.end(), out.sample(i).begin());
    });
    return out;
}

Tensor forward(const Network& net, const Tensor& batch, Exec exec) { return forward_from(net, batch, 0, exec); }

Tensor features(const Network& net, const Tensor& batch, std::size_t end, Exec exec) {
    if (end > net.layer_count()) throw ConfigError("features: end layer out of range");
    const std::size_t n = batch_size_of(batch, net.input_shape(), "features");
    const Shape3& fs = net.activation_shape(end);
    Tensor out({n, fs.h, fs.w, fs.c});
    if (end == 0) return batch;
    Evaluator ev(net);
    for_each_sample(ev, n, exec, [&](std::size_t i, Evaluator::Workspace& ws) {
        ev.forward(batch.sample(i), 0, ws, end);
        const auto& a = ws.acts[end];
        std::copy(a.begin(), a.end(), out.sample(i).begin());
    });
    return out;
}

void target_logit_gradient(std::span<const double> posterior, std::size_t target, double weight,
                           std::span<double> out) {
    // d p_t / d z_j = p_t (1[j = t] - p_j)
    const double pt = posterior[target];
    for (std::size_t j = 0; j < posterior.size(); ++j)
        out[j] = -weight * pt * ((j == target ? 1.0 : 0.0) - posterior[j]);
}

TargetObjective target_objective(const Network& net, const Tensor& inputs, std::size_t begin, std::size_t target,
                                 std::span<const double> weights, Exec exec) {
    if (begin >= net.layer_count()) throw ConfigError("target_objective: start layer out of range");
    const std::size_t n = batch_size_of(inputs, net.activation_shape(begin), "target_objective");
    const std::size_t k = net.num_classes();
    if (target >= k) throw ConfigError("target class " + std::to_string(target) + " out of range");
    if (weights.size() != n) throw ConfigError("target_objective: one weight per sample required");

    TargetObjective res;
    res.gradient = Tensor(inputs.shape());
    res.posteriors = Tensor({n, k});
    Evaluator ev(net);
    for_each_sample(ev, n, exec, [&](std::size_t i, Evaluator::Workspace& ws) {
        ev.forward(inputs.sample(i), begin, ws);
        auto p = ev.posterior(ws);
        std::copy(p.begin(), p.end(), res.posteriors.sample(i).begin());
        if (weights[i] == 0.0) return;  // gradient row stays zero
        std::vector<double> dz(k);
        target_logit_gradient(p, target, weights[i], dz);
        ev.backward(ws, dz, begin, res.gradient.sample(i), nullptr);
    });
    for (std::size_t i = 0; i < n; ++i) res.value -= weights[i] * res.posteriors.sample(i)[target];
    return res;
}

Tensor input_gradient(const Network& net, const Tensor& batch, std::size_t target,
                      std::optional<std::size_t> from_layer, Exec exec) {
    std::size_t begin = 0;
    Tensor inputs;
    if (from_layer) {
        if (!net.cut_index()) throw ConfigError("input_gradient: from_layer given but network has no cut index");
        if (*from_layer != *net.cut_index())
            throw ConfigError("input_gradient: from_layer must equal the network cut index");
        begin = *from_layer;
        inputs = features(net, batch, begin, exec);
    } else {
        inputs = batch;
    }
    const std::size_t n = batch_size_of(batch, net.input_shape(), "input_gradient");
    if (n == 0) throw ConfigError("input_gradient: empty batch");
    std::vector<double> w(n, 1.0 / double(n));
    return target_objective(net, inputs, begin, target, w, exec).gradient;
}

}  // namespace bdscan
