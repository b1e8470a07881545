#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "bdscan/dataset.hpp"
#include "bdscan/network.hpp"

namespace bdscan {

enum class OptimizerKind { sgd, adam };

struct TrainConfig {
    std::size_t epochs = 12;
    std::size_t batch_size = 32;
    double learning_rate = 2e-3;
    OptimizerKind optimizer = OptimizerKind::adam;
    std::uint64_t seed = 1;
    bool augment = true;  // random horizontal flip
};

struct TrainReport {
    std::vector<double> epoch_loss;  // mean cross-entropy per epoch
};

// Mini-batch cross-entropy training. Single-threaded and bit-reproducible for
// a fixed seed. Throws TrainingDivergence on a non-finite loss.
TrainReport train(Network& net, const Dataset& data, const TrainConfig& cfg);

// Fraction of items whose argmax posterior equals the label.
double accuracy(const Network& net, const Dataset& data);

}  // namespace bdscan
