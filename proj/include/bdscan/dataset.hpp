#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "bdscan/tensor.hpp"

namespace bdscan {

struct LabeledImage {
    Tensor image;  // H x W x C, values in [0,1]
    std::size_t label = 0;
};

// Labeled image collection with its per-class partition D_c.
class Dataset {
public:
    Dataset() = default;
    Dataset(Shape3 shape, std::size_t num_classes);
    Dataset(Shape3 shape, std::size_t num_classes, std::vector<LabeledImage> items);

    const Shape3& shape() const { return shape_; }
    std::size_t num_classes() const { return k_; }
    std::size_t size() const { return items_.size(); }
    bool empty() const { return items_.empty(); }

    const std::vector<LabeledImage>& items() const { return items_; }
    const LabeledImage& operator[](std::size_t i) const { return items_[i]; }
    // Indices of the items labeled c.
    const std::vector<std::size_t>& class_indices(std::size_t c) const { return by_class_.at(c); }
    std::size_t class_size(std::size_t c) const { return by_class_.at(c).size(); }

    void add(LabeledImage item);

    // Batch tensors (N x H x W x C) for all items, for a class, or a subset.
    Tensor batch() const;
    Tensor class_batch(std::size_t c) const;
    Tensor batch_of(std::span<const std::size_t> indices) const;
    std::vector<std::size_t> labels() const;

    // New dataset restricted to the given items, in order.
    Dataset subset(std::span<const std::size_t> indices) const;

private:
    Shape3 shape_;
    std::size_t k_ = 0;
    std::vector<LabeledImage> items_;
    std::vector<std::vector<std::size_t>> by_class_;
};

}  // namespace bdscan
