#include "bdscan/tensor.hpp"

#include <cmath>
#include <sstream>

#include "bdscan/errors.hpp"

namespace bdscan {

std::string Shape3::str() const {
    std::ostringstream os;
    os << h << "x" << w << "x" << c;
    return os.str();
}

std::size_t shape_product(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    return n;
}

std::string shape_string(const std::vector<std::size_t>& shape) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << "]";
    return os.str();
}

Tensor::Tensor(std::vector<std::size_t> shape, double fill)
    : shape_(std::move(shape)), data_(shape_product(shape_), fill) {}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != shape_product(shape_))
        throw ConfigError("tensor data length " + std::to_string(data_.size()) +
                          " does not match shape " + shape_string(shape_));
}

Shape3 Tensor::image_shape() const {
    if (shape_.size() < 3) throw ConfigError("tensor of rank " + std::to_string(rank()) + " is not an image");
    auto n = shape_.size();
    return {shape_[n - 3], shape_[n - 2], shape_[n - 1]};
}

std::span<const double> Tensor::sample(std::size_t i) const {
    const std::size_t stride = data_.size() / shape_.at(0);
    return std::span<const double>(data_).subspan(i * stride, stride);
}

std::span<double> Tensor::sample(std::size_t i) {
    const std::size_t stride = data_.size() / shape_.at(0);
    return std::span<double>(data_).subspan(i * stride, stride);
}

bool Tensor::all_finite() const {
    for (double x : data_)
        if (!std::isfinite(x)) return false;
    return true;
}

double Tensor::l2_norm() const {
    double s = 0.0;
    for (double x : data_) s += x * x;
    return std::sqrt(s);
}

double Tensor::l1_norm() const {
    double s = 0.0;
    for (double x : data_) s += std::abs(x);
    return s;
}

Tensor stack(std::span<const Tensor> items) {
    if (items.empty()) throw ConfigError("cannot stack an empty list");
    std::vector<std::size_t> shape{items.size()};
    shape.insert(shape.end(), items[0].shape().begin(), items[0].shape().end());
    std::vector<double> data;
    data.reserve(shape_product(shape));
    for (const auto& t : items) {
        if (t.shape() != items[0].shape()) throw ConfigError("stack: inconsistent shapes");
        data.insert(data.end(), t.raw().begin(), t.raw().end());
    }
    return Tensor(std::move(shape), std::move(data));
}

}  // namespace bdscan
