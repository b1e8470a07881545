#pragma once

#include <cstdint>
#include <random>

#include "bdscan/attack.hpp"
#include "bdscan/data_io.hpp"
#include "bdscan/dataset.hpp"
#include "bdscan/network.hpp"
#include "bdscan/train.hpp"

namespace fixture {

using namespace bdscan;

inline Tensor random_batch(std::size_t n, Shape3 s, std::uint64_t seed, double lo = 0.0, double hi = 1.0) {
    Tensor t({n, s.h, s.w, s.c});
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(lo, hi);
    for (auto& x : t.raw()) x = u(rng);
    return t;
}

inline Tensor random_tensor(Shape3 s, std::uint64_t seed, double lo, double hi) {
    Tensor t(s);
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(lo, hi);
    for (auto& x : t.raw()) x = u(rng);
    return t;
}

// Reference architecture with seeded random weights, scaled up so the
// posteriors are far from uniform.
inline Network random_reference(Shape3 s, std::size_t k, std::uint64_t seed, float gain = 3.0f) {
    Network net = Network::reference(s, k);
    net.init_params(seed);
    for (auto& layer : net.params())
        for (auto& w : layer) w *= gain;
    return net;
}

struct Trained {
    Dataset train, test;
    Network net;
};

// Clean reference model on the desk synthetic data (K=5, 16x16).
inline const Trained& clean_desk_model() {
    static const Trained t = [] {
        Trained x;
        x.train = generate_synthetic(5, 500, 16, 16, 11);
        x.test = generate_synthetic(5, 100, 16, 16, 12);
        x.net = Network::reference({16, 16, 3}, 5);
        x.net.init_params(1);
        TrainConfig cfg;
        cfg.augment = false;
        train(x.net, x.train, cfg);
        return x;
    }();
    return t;
}

}  // namespace fixture
