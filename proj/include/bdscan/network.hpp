#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "bdscan/tensor.hpp"

namespace bdscan {

enum class LayerKind : std::uint32_t { dense = 0, conv2d = 1, relu = 2, flatten = 3, softmax = 4 };

const char* to_string(LayerKind kind);

struct LayerSpec {
    LayerKind kind = LayerKind::relu;
    std::uint32_t units = 0;    // dense
    std::uint32_t filters = 0;  // conv2d
    std::uint32_t kernel = 0;   // conv2d, square
    std::uint32_t stride = 1;   // conv2d
    std::uint32_t pad = 0;      // conv2d, zero padding on every side

    static LayerSpec dense(std::uint32_t units);
    static LayerSpec conv(std::uint32_t filters, std::uint32_t kernel, std::uint32_t stride = 1,
                          std::uint32_t pad = 0);
    static LayerSpec relu();
    static LayerSpec flatten();
    static LayerSpec softmax();

    bool operator==(const LayerSpec&) const = default;
};

// Ordered layer stack ending in a softmax over K classes. Parameters are kept
// in single precision; evaluation promotes them to double.
//
// When a cut index is set the network splits as f = f2(f1(x)) where f1 runs
// layers [0, cut) and f2 runs layers [cut, end).
class Network {
public:
    Network() = default;
    Network(Shape3 input, std::vector<LayerSpec> layers, std::optional<std::size_t> cut_index = {});

    // conv(8,3x3,pad 1) -> relu -> conv(16,3x3,stride 2,pad 1) -> relu -> flatten -> dense(K) -> softmax,
    // cut after the first convolution.
    static Network reference(Shape3 input, std::size_t classes);

    const Shape3& input_shape() const { return input_; }
    const std::vector<LayerSpec>& layers() const { return layers_; }
    std::size_t layer_count() const { return layers_.size(); }
    // Shape of the activation entering layer i; i == layer_count() gives the output.
    const Shape3& activation_shape(std::size_t i) const { return shapes_.at(i); }
    std::size_t num_classes() const { return shapes_.back().size(); }

    std::optional<std::size_t> cut_index() const { return cut_; }
    void set_cut_index(std::optional<std::size_t> cut);
    // Shape of the activation entering f2; requires a cut index.
    const Shape3& cut_shape() const;

    std::vector<std::vector<float>>& params() { return params_; }
    const std::vector<std::vector<float>>& params() const { return params_; }
    std::size_t param_count() const;

    // Uniform fan-in initialisation; biases start at zero.
    void init_params(std::uint64_t seed);

    bool operator==(const Network&) const = default;

private:
    Shape3 input_;
    std::vector<LayerSpec> layers_;
    std::vector<Shape3> shapes_;
    std::vector<std::vector<float>> params_;
    std::optional<std::size_t> cut_;
};

// Number of parameters owned by a layer given its input shape.
std::size_t layer_param_count(const LayerSpec& spec, const Shape3& in);
Shape3 layer_output_shape(const LayerSpec& spec, const Shape3& in);

// Per-layer parameter gradients laid out like Network::params().
using ParamGrads = std::vector<std::vector<double>>;

// Double-precision view of a network, the thing that actually runs the
// per-sample kernels. Cheap to build; read-only afterwards and safe to share
// between threads as long as each thread owns its Workspace.
class Evaluator {
public:
    explicit Evaluator(const Network& net);

    struct Workspace {
        // acts[i] is the activation entering layer i; acts.back() the posterior.
        std::vector<std::vector<double>> acts;
        std::vector<double> grad_a;
        std::vector<double> grad_b;
    };

    const Network& network() const { return *net_; }
    Workspace make_workspace() const;

    // Runs layers [begin, end) on an activation that enters layer `begin`;
    // end defaults to the full stack.
    void forward(std::span<const double> input, std::size_t begin, Workspace& ws,
                 std::size_t end = static_cast<std::size_t>(-1)) const;
    std::span<const double> posterior(const Workspace& ws) const { return ws.acts.back(); }
    std::span<const double> logits(const Workspace& ws) const { return ws.acts[net_->layer_count() - 1]; }

    // Back-propagates a gradient given with respect to the softmax input
    // (logits) down to the activation entering layer `begin`. Writes that
    // gradient to `dinput` when it is non-empty and accumulates parameter
    // gradients into `pgrad` when it is non-null.
    void backward(Workspace& ws, std::span<const double> dlogits, std::size_t begin, std::span<double> dinput,
                  ParamGrads* pgrad) const;

    ParamGrads zero_grads() const;

private:
    const Network* net_;
    std::vector<std::vector<double>> weights_;
};

}  // namespace bdscan
