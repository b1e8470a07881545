#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace bdscan {

// Height x width x channels extent of a single activation map. Dense
// activations use 1 x 1 x units.
struct Shape3 {
    std::size_t h = 0;
    std::size_t w = 0;
    std::size_t c = 0;

    std::size_t size() const { return h * w * c; }
    bool operator==(const Shape3&) const = default;
    std::string str() const;
};

// Dense row-major array of doubles. Images are stored H x W x C, batches as
// N x H x W x C.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<std::size_t> shape, double fill = 0.0);
    Tensor(std::initializer_list<std::size_t> shape, double fill = 0.0)
        : Tensor(std::vector<std::size_t>(shape), fill) {}
    Tensor(std::vector<std::size_t> shape, std::vector<double> data);
    explicit Tensor(const Shape3& s, double fill = 0.0) : Tensor(std::vector<std::size_t>{s.h, s.w, s.c}, fill) {}

    const std::vector<std::size_t>& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t dim(std::size_t i) const { return shape_.at(i); }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    std::span<double> values() { return data_; }
    std::span<const double> values() const { return data_; }
    std::vector<double>& raw() { return data_; }
    const std::vector<double>& raw() const { return data_; }

    // Interprets the trailing three dimensions as an image shape.
    Shape3 image_shape() const;
    // Slice i of a batch tensor (leading dimension).
    std::span<const double> sample(std::size_t i) const;
    std::span<double> sample(std::size_t i);

    bool all_finite() const;
    double l2_norm() const;
    double l1_norm() const;

    bool operator==(const Tensor&) const = default;

private:
    std::vector<std::size_t> shape_;
    std::vector<double> data_;
};

std::size_t shape_product(const std::vector<std::size_t>& shape);
std::string shape_string(const std::vector<std::size_t>& shape);

// Stack equally shaped tensors into a batch with a new leading dimension.
Tensor stack(std::span<const Tensor> items);

}  // namespace bdscan
