#include "bdscan/dataset.hpp"

#include <algorithm>

#include "bdscan/errors.hpp"

namespace bdscan {

Dataset::Dataset(Shape3 shape, std::size_t num_classes) : shape_(shape), k_(num_classes), by_class_(num_classes) {
    if (num_classes == 0) throw ConfigError("dataset needs at least one class");
}

Dataset::Dataset(Shape3 shape, std::size_t num_classes, std::vector<LabeledImage> items)
    : Dataset(shape, num_classes) {
    items_.reserve(items.size());
    for (auto& it : items) add(std::move(it));
}

void Dataset::add(LabeledImage item) {
    if (item.label >= k_)
        throw ConfigError("label " + std::to_string(item.label) + " outside 0.." + std::to_string(k_ - 1));
    if (item.image.rank() != 3 || item.image.image_shape() != shape_)
        throw ConfigError("image shape " + shape_string(item.image.shape()) + " does not match dataset " +
                          shape_.str());
    by_class_[item.label].push_back(items_.size());
    items_.push_back(std::move(item));
}

Tensor Dataset::batch_of(std::span<const std::size_t> indices) const {
    const std::size_t per = shape_.size();
    std::vector<double> data(indices.size() * per);
    for (std::size_t i = 0; i < indices.size(); ++i) {
        const auto& img = items_.at(indices[i]).image.raw();
        std::copy(img.begin(), img.end(), data.begin() + std::ptrdiff_t(i * per));
    }
    return Tensor({indices.size(), shape_.h, shape_.w, shape_.c}, std::move(data));
}

Tensor Dataset::batch() const {
    std::vector<std::size_t> all(items_.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    return batch_of(all);
}

Tensor Dataset::class_batch(std::size_t c) const { return batch_of(by_class_.at(c)); }

std::vector<std::size_t> Dataset::labels() const {
    std::vector<std::size_t> out;
    out.reserve(items_.size());
    for (const auto& it : items_) out.push_back(it.label);
    return out;
}

Dataset Dataset::subset(std::span<const std::size_t> indices) const {
    Dataset out(shape_, k_);
    for (auto i : indices) out.add(items_.at(i));
    return out;
}

}  // namespace bdscan
