#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "bdscan/dataset.hpp"
#include "bdscan/network.hpp"
#include "bdscan/tensor.hpp"

namespace bdscan {

enum class Mechanism : std::uint32_t { additive = 0, multiplicative = 1, patch = 2 };

const char* to_string(Mechanism m);
Mechanism mechanism_from_string(const std::string& s);

// additive:       values = v*, image shaped, entries in [-1, 1]
// multiplicative: values = u*, image shaped, entries > 0
// patch:          values = v* in [0, 1], mask = m* (H x W x 1) in [0, 1]
struct BackdoorPattern {
    Mechanism mechanism = Mechanism::additive;
    Tensor values;
    Tensor mask;

    Shape3 shape() const { return values.image_shape(); }
    void validate() const;
};

BackdoorPattern gen_sparse_pattern(Shape3 shape, std::size_t n_pixels, double l2_target, std::uint64_t seed);
BackdoorPattern gen_chessboard_pattern(Shape3 shape, double l2_target, std::uint64_t seed);
// Factor `factor` on the chessboard cells of every channel, 1 elsewhere.
BackdoorPattern gen_multiplicative_chessboard(Shape3 shape, double factor, std::uint64_t seed);
// side x side square at a random location, filled with one random color.
BackdoorPattern gen_patch_pattern(Shape3 shape, std::size_t side, std::uint64_t seed);

// Multiplies an additive pattern by s (the norm scales by exactly s).
BackdoorPattern scaled(const BackdoorPattern& p, double s);

Tensor embed(const Tensor& x, const BackdoorPattern& p);
// embed applied to every image of a batch.
Tensor embed_batch(const Tensor& batch, const BackdoorPattern& p);

struct AttackSpec {
    std::vector<std::size_t> sources;
    std::size_t target = 0;
    BackdoorPattern pattern;
    std::size_t n_poison = 0;
    std::uint64_t seed = 0;

    void validate(std::size_t num_classes) const;
};

struct PoisonResult {
    Dataset data;
    // Indices into data of the appended items, and the source items they came from.
    std::vector<std::size_t> poisoned_indices;
    std::vector<std::size_t> source_indices;
};

// Samples n_poison source images (split evenly across the sources), embeds
// the pattern, relabels them to the target and appends them.
PoisonResult poison(const Dataset& ds, const AttackSpec& spec);

struct AttackReport {
    double success_rate = 0.0;
    double clean_accuracy = 0.0;
    // collateral[c] for c outside sources and target; -1 for excluded classes.
    std::vector<double> collateral;
};

AttackReport evaluate_attack(const Network& net, const Dataset& test, const AttackSpec& spec);

// Pattern container: "BSPT" | u32 version | u32 mechanism | values | mask,
// each tensor as u32 rank, u64 dims, f64 data.
inline constexpr std::uint32_t kPatternFormatVersion = 1;
void save_pattern(const std::filesystem::path& path, const BackdoorPattern& p);
BackdoorPattern load_pattern(const std::filesystem::path& path);

}  // namespace bdscan
