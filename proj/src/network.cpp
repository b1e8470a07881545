#include "bdscan/network.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "bdscan/errors.hpp"

namespace bdscan {

const char* to_string(LayerKind kind) {
    switch (kind) {
        case LayerKind::dense: return "dense";
        case LayerKind::conv2d: return "conv2d";
        case LayerKind::relu: return "relu";
        case LayerKind::flatten: return "flatten";
        case LayerKind::softmax: return "softmax";
    }
    return "unknown";
}

LayerSpec LayerSpec::dense(std::uint32_t units) {
    LayerSpec s;
    s.kind = LayerKind::dense;
    s.units = units;
    return s;
}

LayerSpec LayerSpec::conv(std::uint32_t filters, std::uint32_t kernel, std::uint32_t stride, std::uint32_t pad) {
    LayerSpec s;
    s.kind = LayerKind::conv2d;
    s.filters = filters;
    s.kernel = kernel;
    s.stride = stride;
    s.pad = pad;
    return s;
}

LayerSpec LayerSpec::relu() { return LayerSpec{LayerKind::relu}; }
LayerSpec LayerSpec::flatten() { return LayerSpec{LayerKind::flatten}; }
LayerSpec LayerSpec::softmax() { return LayerSpec{LayerKind::softmax}; }

Shape3 layer_output_shape(const LayerSpec& spec, const Shape3& in) {
    switch (spec.kind) {
        case LayerKind::dense:
            if (spec.units == 0) throw ConfigError("dense layer needs at least one unit");
            return {1, 1, spec.units};
        case LayerKind::conv2d: {
            if (spec.filters == 0 || spec.kernel == 0 || spec.stride == 0)
                throw ConfigError("conv2d needs positive filters, kernel and stride");
            const std::size_t ph = in.h + 2 * spec.pad;
            const std::size_t pw = in.w + 2 * spec.pad;
            if (ph < spec.kernel || pw < spec.kernel)
                throw ConfigError("conv2d kernel larger than padded input " + in.str());
            return {(ph - spec.kernel) / spec.stride + 1, (pw - spec.kernel) / spec.stride + 1, spec.filters};
        }
        case LayerKind::flatten: return {1, 1, in.size()};
        case LayerKind::relu:
        case LayerKind::softmax: return in;
    }
    throw ConfigError("unknown layer kind");
}

std::size_t layer_param_count(const LayerSpec& spec, const Shape3& in) {
    switch (spec.kind) {
        case LayerKind::dense: return std::size_t(spec.units) * in.size() + spec.units;
        case LayerKind::conv2d:
            return std::size_t(spec.kernel) * spec.kernel * in.c * spec.filters + spec.filters;
        default: return 0;
    }
}

Network::Network(Shape3 input, std::vector<LayerSpec> layers, std::optional<std::size_t> cut_index)
    : input_(input), layers_(std::move(layers)) {
    if (input_.size() == 0) throw ConfigError("network input shape must be nonempty");
    if (layers_.empty() || layers_.back().kind != LayerKind::softmax)
        throw ConfigError("network must end with a softmax layer");
    shapes_.push_back(input_);
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        if (layers_[i].kind == LayerKind::softmax && i + 1 != layers_.size())
            throw ConfigError("softmax is only allowed as the final layer");
        shapes_.push_back(layer_output_shape(layers_[i], shapes_.back()));
        params_.emplace_back(layer_param_count(layers_[i], shapes_[i]), 0.0f);
    }
    if (num_classes() < 2) throw ConfigError("network must output at least two classes");
    set_cut_index(cut_index);
}

Network Network::reference(Shape3 input, std::size_t classes) {
    return Network(input,
                   {LayerSpec::conv(8, 3, 1, 1), LayerSpec::relu(), LayerSpec::conv(16, 3, 2, 1), LayerSpec::relu(),
                    LayerSpec::flatten(), LayerSpec::dense(static_cast<std::uint32_t>(classes)), LayerSpec::softmax()},
                   1);
}

void Network::set_cut_index(std::optional<std::size_t> cut) {
    if (cut && *cut >= layers_.size())
        throw ConfigError("cut index " + std::to_string(*cut) + " out of range for " +
                          std::to_string(layers_.size()) + " layers");
    cut_ = cut;
}

const Shape3& Network::cut_shape() const {
    if (!cut_) throw ConfigError("network has no cut index");
    return shapes_[*cut_];
}

std::size_t Network::param_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.size();
    return n;
}

void Network::init_params(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        const auto& spec = layers_[i];
        if (params_[i].empty()) continue;
        const std::size_t fan_in = spec.kind == LayerKind::dense
                                       ? shapes_[i].size()
                                       : std::size_t(spec.kernel) * spec.kernel * shapes_[i].c;
        const std::size_t n_bias = spec.kind == LayerKind::dense ? spec.units : spec.filters;
        const bool feeds_relu = i + 1 < layers_.size() && layers_[i + 1].kind == LayerKind::relu;
        const double limit = feeds_relu ? std::sqrt(6.0 / double(fan_in)) : 1.0 / std::sqrt(double(fan_in));
        std::uniform_real_distribution<double> dist(-limit, limit);
        auto& p = params_[i];
        const std::size_t n_weights = p.size() - n_bias;
        for (std::size_t k = 0; k < n_weights; ++k) p[k] = static_cast<float>(dist(rng));
        std::fill(p.begin() + static_cast<std::ptrdiff_t>(n_weights), p.end(), 0.0f);
    }
}

// ---------------------------------------------------------------------------
// Per-sample kernels

namespace {

struct ConvGeom {
    std::size_t h, w, c, oh, ow, f, k, stride, pad;
};

ConvGeom conv_geom(const LayerSpec& s, const Shape3& in, const Shape3& out) {
    return {in.h, in.w, in.c, out.h, out.w, out.c, s.kernel, s.stride, s.pad};
}

void conv_forward(const ConvGeom& g, const double* in, const double* wt, double* out) {
    const double* bias = wt + g.k * g.k * g.c * g.f;
    for (std::size_t oy = 0; oy < g.oh; ++oy) {
        for (std::size_t ox = 0; ox < g.ow; ++ox) {
            double* o = out + (oy * g.ow + ox) * g.f;
            for (std::size_t f = 0; f < g.f; ++f) o[f] = bias[f];
            for (std::size_t ky = 0; ky < g.k; ++ky) {
                const std::ptrdiff_t iy = std::ptrdiff_t(oy * g.stride + ky) - std::ptrdiff_t(g.pad);
                if (iy < 0 || iy >= std::ptrdiff_t(g.h)) continue;
                for (std::size_t kx = 0; kx < g.k; ++kx) {
                    const std::ptrdiff_t ix = std::ptrdiff_t(ox * g.stride + kx) - std::ptrdiff_t(g.pad);
                    if (ix < 0 || ix >= std::ptrdiff_t(g.w)) continue;
                    const double* px = in + (std::size_t(iy) * g.w + std::size_t(ix)) * g.c;
                    const double* wk = wt + (ky * g.k + kx) * g.c * g.f;
                    for (std::size_t c = 0; c < g.c; ++c) {
                        const double xv = px[c];
                        const double* wr = wk + c * g.f;
                        for (std::size_t f = 0; f < g.f; ++f) o[f] += xv * wr[f];
                    }
                }
            }
        }
    }
}

// din (optional) receives the input gradient; dwt (optional) accumulates
// weight and bias gradients.
void conv_backward(const ConvGeom& g, const double* in, const double* wt, const double* dout, double* din,
                   double* dwt) {
    if (din) std::fill(din, din + g.h * g.w * g.c, 0.0);
    double* dbias = dwt ? dwt + g.k * g.k * g.c * g.f : nullptr;
    for (std::size_t oy = 0; oy < g.oh; ++oy) {
        for (std::size_t ox = 0; ox < g.ow; ++ox) {
            const double* go = dout + (oy * g.ow + ox) * g.f;
            if (dbias)
                for (std::size_t f = 0; f < g.f; ++f) dbias[f] += go[f];
            for (std::size_t ky = 0; ky < g.k; ++ky) {
                const std::ptrdiff_t iy = std::ptrdiff_t(oy * g.stride + ky) - std::ptrdiff_t(g.pad);
                if (iy < 0 || iy >= std::ptrdiff_t(g.h)) continue;
                for (std::size_t kx = 0; kx < g.k; ++kx) {
                    const std::ptrdiff_t ix = std::ptrdiff_t(ox * g.stride + kx) - std::ptrdiff_t(g.pad);
                    if (ix < 0 || ix >= std::ptrdiff_t(g.w)) continue;
                    const std::size_t pix = (std::size_t(iy) * g.w + std::size_t(ix)) * g.c;
                    const std::size_t woff = (ky * g.k + kx) * g.c * g.f;
                    for (std::size_t c = 0; c < g.c; ++c) {
                        const double* wr = wt + woff + c * g.f;
                        if (din) {
                            double acc = 0.0;
                            for (std::size_t f = 0; f < g.f; ++f) acc += go[f] * wr[f];
                            din[pix + c] += acc;
                        }
                        if (dwt) {
                            const double xv = in[pix + c];
                            double* dwr = dwt + woff + c * g.f;
                            for (std::size_t f = 0; f < g.f; ++f) dwr[f] += xv * go[f];
                        }
                    }
                }
            }
        }
    }
}

void dense_forward(std::size_t n, std::size_t units, const double* in, const double* wt, double* out) {
    const double* bias = wt + units * n;
    for (std::size_t u = 0; u < units; ++u) {
        const double* wr = wt + u * n;
        double acc = 0.0;
        for (std::size_t i = 0; i < n; ++i) acc += wr[i] * in[i];
        out[u] = acc + bias[u];
    }
}

void dense_backward(std::size_t n, std::size_t units, const double* in, const double* wt, const double* dout,
                    double* din, double* dwt) {
    if (din) {
        std::fill(din, din + n, 0.0);
        for (std::size_t u = 0; u < units; ++u) {
            const double g = dout[u];
            const double* wr = wt + u * n;
            for (std::size_t i = 0; i < n; ++i) din[i] += g * wr[i];
        }
    }
    if (dwt) {
        for (std::size_t u = 0; u < units; ++u) {
            const double g = dout[u];
            double* dwr = dwt + u * n;
            for (std::size_t i = 0; i < n; ++i) dwr[i] += g * in[i];
            dwt[units * n + u] += g;
        }
    }
}

void softmax_forward(std::size_t n, const double* in, double* out) {
    double mx = in[0];
    for (std::size_t i = 1; i < n; ++i) mx = std::max(mx, in[i]);
    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        out[i] = std::exp(in[i] - mx);
        sum += out[i];
    }
    for (std::size_t i = 0; i < n; ++i) out[i] /= sum;
}

}  // namespace

Evaluator::Evaluator(const Network& net) : net_(&net) {
    weights_.reserve(net.params().size());
    for (const auto& p : net.params()) weights_.emplace_back(p.begin(), p.end());
}

Evaluator::Workspace Evaluator::make_workspace() const {
    Workspace ws;
    std::size_t largest = 0;
    for (std::size_t i = 0; i <= net_->layer_count(); ++i) {
        ws.acts.emplace_back(net_->activation_shape(i).size(), 0.0);
        largest = std::max(largest, net_->activation_shape(i).size());
    }
    ws.grad_a.resize(largest);
    ws.grad_b.resize(largest);
    return ws;
}

ParamGrads Evaluator::zero_grads() const {
    ParamGrads g;
    for (const auto& p : net_->params()) g.emplace_back(p.size(), 0.0);
    return g;
}

void Evaluator::forward(std::span<const double> input, std::size_t begin, Workspace& ws, std::size_t end) const {
    const auto& layers = net_->layers();
    end = std::min(end, layers.size());
    if (begin >= layers.size()) throw ConfigError("forward: start layer out of range");
    if (input.size() != net_->activation_shape(begin).size())
        throw ConfigError("forward: input has " + std::to_string(input.size()) + " values, layer " +
                          std::to_string(begin) + " expects " + net_->activation_shape(begin).str());
    std::copy(input.begin(), input.end(), ws.acts[begin].begin());
    for (std::size_t i = begin; i < end; ++i) {
        const auto& spec = layers[i];
        const Shape3& in_s = net_->activation_shape(i);
        const Shape3& out_s = net_->activation_shape(i + 1);
        const double* in = ws.acts[i].data();
        double* out = ws.acts[i + 1].data();
        switch (spec.kind) {
            case LayerKind::conv2d: conv_forward(conv_geom(spec, in_s, out_s), in, weights_[i].data(), out); break;
            case LayerKind::dense: dense_forward(in_s.size(), spec.units, in, weights_[i].data(), out); break;
            case LayerKind::relu:
                for (std::size_t k = 0; k < in_s.size(); ++k) out[k] = in[k] > 0.0 ? in[k] : 0.0;
                break;
            case LayerKind::flatten: std::copy(in, in + in_s.size(), out); break;
            case LayerKind::softmax: softmax_forward(in_s.size(), in, out); break;
        }
    }
}

void Evaluator::backward(Workspace& ws, std::span<const double> dlogits, std::size_t begin,
                         std::span<double> dinput, ParamGrads* pgrad) const {
    const auto& layers = net_->layers();
    const std::size_t last = layers.size() - 1;  // softmax
    if (begin > last) throw ConfigError("backward: start layer out of range");
    if (dlogits.size() != net_->activation_shape(last).size()) throw ConfigError("backward: logit size mismatch");
    std::copy(dlogits.begin(), dlogits.end(), ws.grad_a.begin());
    double* g = ws.grad_a.data();
    double* next = ws.grad_b.data();
    for (std::size_t i = last; i-- > begin;) {
        const auto& spec = layers[i];
        const Shape3& in_s = net_->activation_shape(i);
        const Shape3& out_s = net_->activation_shape(i + 1);
        const double* in = ws.acts[i].data();
        // The input gradient of the first visited layer is only needed when
        // the caller asked for it.
        const bool need_din = i > begin || !dinput.empty();
        double* dw = pgrad ? (*pgrad)[i].data() : nullptr;
        switch (spec.kind) {
            case LayerKind::conv2d:
                conv_backward(conv_geom(spec, in_s, out_s), in, weights_[i].data(), g, need_din ? next : nullptr,
                              dw);
                break;
            case LayerKind::dense:
                dense_backward(in_s.size(), spec.units, in, weights_[i].data(), g, need_din ? next : nullptr, dw);
                break;
            case LayerKind::relu:
                for (std::size_t k = 0; k < in_s.size(); ++k) next[k] = in[k] > 0.0 ? g[k] : 0.0;
                break;
            case LayerKind::flatten: std::copy(g, g + in_s.size(), next); break;
            case LayerKind::softmax: throw ConfigError("backward: softmax must be the final layer");
        }
        std::swap(g, next);
    }
    if (!dinput.empty()) {
        const std::size_t n = net_->activation_shape(begin).size();
        if (dinput.size() != n) throw ConfigError("backward: input gradient buffer has wrong size");
        std::copy(g, g + n, dinput.begin());
    }
}

}  // namespace bdscan
