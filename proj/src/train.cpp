#include "bdscan/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "bdscan/errors.hpp"
#include "bdscan/kernels.hpp"

namespace bdscan {

namespace {

void flip_horizontal(std::span<const double> src, std::span<double> dst, const Shape3& s) {
    for (std::size_t y = 0; y < s.h; ++y)
        for (std::size_t x = 0; x < s.w; ++x)
            for (std::size_t c = 0; c < s.c; ++c)
                dst[(y * s.w + x) * s.c + c] = src[(y * s.w + (s.w - 1 - x)) * s.c + c];
}

struct AdamState {
    std::vector<std::vector<double>> m, v;
    std::size_t step = 0;
};

}  // namespace

TrainReport train(Network& net, const Dataset& data, const TrainConfig& cfg) {
    if (cfg.batch_size == 0 || !(cfg.learning_rate > 0.0)) throw ConfigError("train: batch size and learning rate must be positive");
    if (data.shape() != net.input_shape())
        throw ConfigError("train: dataset shape " + data.shape().str() + " does not match network input " +
                          net.input_shape().str());
    if (data.num_classes() != net.num_classes()) throw ConfigError("train: class count mismatch");

    TrainReport report;
    if (cfg.epochs == 0 || data.empty()) return report;

    // Double-precision master copy; the network keeps the float32 rounding.
    std::vector<std::vector<double>> master;
    for (const auto& p : net.params()) master.emplace_back(p.begin(), p.end());
    AdamState adam;
    for (const auto& p : master) {
        adam.m.emplace_back(p.size(), 0.0);
        adam.v.emplace_back(p.size(), 0.0);
    }
    constexpr double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;

    std::mt19937_64 rng(cfg.seed);
    std::bernoulli_distribution coin(0.5);
    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    const Shape3 shape = net.input_shape();
    const std::size_t k = net.num_classes();
    std::vector<double> flipped(shape.size());
    std::vector<double> dz(k);

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        double loss_sum = 0.0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::size_t end = std::min(order.size(), start + cfg.batch_size);
            const double scale = 1.0 / double(end - start);
            Evaluator ev(net);
            auto ws = ev.make_workspace();
            ParamGrads grads = ev.zero_grads();
            for (std::size_t b = start; b < end; ++b) {
                const auto& item = data[order[b]];
                std::span<const double> x = item.image.values();
                if (cfg.augment && coin(rng)) {
                    flip_horizontal(x, flipped, shape);
                    x = flipped;
                }
                ev.forward(x, 0, ws);
                auto p = ev.posterior(ws);
                const double py = std::max(p[item.label], 1e-300);
                loss_sum += -std::log(py);
                for (std::size_t j = 0; j < k; ++j) dz[j] = scale * (p[j] - (j == item.label ? 1.0 : 0.0));
                ev.backward(ws, dz, 0, {}, &grads);
            }
            if (!std::isfinite(loss_sum))
                throw TrainingDivergence(epoch, "training diverged: non-finite loss in epoch " + std::to_string(epoch));

            ++adam.step;
            const double bc1 = 1.0 - std::pow(beta1, double(adam.step));
            const double bc2 = 1.0 - std::pow(beta2, double(adam.step));
            for (std::size_t l = 0; l < master.size(); ++l) {
                auto& w = master[l];
                const auto& g = grads[l];
                for (std::size_t i = 0; i < w.size(); ++i) {
                    if (cfg.optimizer == OptimizerKind::sgd) {
                        w[i] -= cfg.learning_rate * g[i];
                    } else {
                        adam.m[l][i] = beta1 * adam.m[l][i] + (1.0 - beta1) * g[i];
                        adam.v[l][i] = beta2 * adam.v[l][i] + (1.0 - beta2) * g[i] * g[i];
                        const double mhat = adam.m[l][i] / bc1;
                        const double vhat = adam.v[l][i] / bc2;
                        w[i] -= cfg.learning_rate * mhat / (std::sqrt(vhat) + eps);
                    }
                }
                auto& dst = net.params()[l];
                for (std::size_t i = 0; i < w.size(); ++i) dst[i] = static_cast<float>(w[i]);
            }
        }
        const double mean_loss = loss_sum / double(order.size());
        if (!std::isfinite(mean_loss))
            throw TrainingDivergence(epoch, "training diverged: non-finite loss in epoch " + std::to_string(epoch));
        report.epoch_loss.push_back(mean_loss);
    }
    return report;
}

double accuracy(const Network& net, const Dataset& data) {
    if (data.empty()) return 0.0;
    const Tensor post = forward(net, data.batch());
    std::size_t correct = 0;
    for (std::size_t i = 0; i < data.size(); ++i)
        if (argmax(post.sample(i)) == data[i].label) ++correct;
    return double(correct) / double(data.size());
}

}  // namespace bdscan
