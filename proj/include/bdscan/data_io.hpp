#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>

#include "bdscan/dataset.hpp"
#include "bdscan/network.hpp"

namespace bdscan {

// Binary record files in the CIFAR-10 layout: each record is one label byte
// followed by C planes of H x W pixel bytes (channel-major). Pixels are
// scaled by 1/255 on load.
Dataset read_records(const std::filesystem::path& file, Shape3 shape, std::size_t num_classes);
void append_records(const std::filesystem::path& file, const Dataset& data, std::size_t first_item = 0);
void write_records(const std::filesystem::path& file, const Dataset& data);

enum class CifarSplit { train, test };

// data_batch_1..5.bin (train) or test_batch.bin (test) from a CIFAR-10
// binary distribution directory.
Dataset load_cifar10(const std::filesystem::path& dir, CifarSplit split = CifarSplit::train);

// Colored geometric shapes on noisy backgrounds, one shape and hue per
// class. Pixels are quantized to multiples of 1/255 so the record format
// stores them exactly.
Dataset generate_synthetic(std::size_t num_classes, std::size_t n_per_class, std::size_t height, std::size_t width,
                           std::uint64_t seed);

struct DatasetMeta {
    std::size_t num_classes = 0;
    Shape3 shape;
    std::uint64_t seed = 0;
};

// A dataset directory holds train.bin / test.bin in record format plus a
// meta.json sidecar with the class count, image shape and seed.
void save_dataset_dir(const std::filesystem::path& dir, const Dataset& train, const Dataset& test,
                      std::uint64_t seed);
struct DatasetSplits {
    DatasetMeta meta;
    Dataset train;
    Dataset test;
};
DatasetSplits load_dataset_dir(const std::filesystem::path& dir);

// Exactly n_per_class items of every class, drawn without replacement.
Dataset sample_detection_set(const Dataset& data, std::size_t n_per_class, std::uint64_t seed);

// Replace labels by the classifier's decisions, for unlabeled clean sets.
Dataset relabel_by_prediction(const Network& net, const Dataset& data);

}  // namespace bdscan
