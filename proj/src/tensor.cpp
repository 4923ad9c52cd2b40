#include "dgrl/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>

#include "dgrl/errors.hpp"

namespace dgrl {

std::string Shape::str() const {
    std::ostringstream os;
    os << '(' << n << ", " << c << ", " << h << ", " << w << ')';
    return os.str();
}

Tensor::Tensor(Shape shape, float fill) : shape_(shape) {
    if (!shape.valid()) {
        throw ConfigError("tensor shape must be positive in every axis, got " + shape.str());
    }
    data_.assign(shape.numel(), fill);
}

Tensor::Tensor(Shape shape, std::vector<float> data) : shape_(shape), data_(std::move(data)) {
    if (!shape.valid() || data_.size() != shape.numel()) {
        throw ConfigError("tensor data length " + std::to_string(data_.size()) +
                          " does not match shape " + shape.str());
    }
}

Tensor Tensor::channel_vector(std::span<const float> values) {
    return Tensor(Shape{1, static_cast<int>(values.size()), 1, 1},
                  std::vector<float>(values.begin(), values.end()));
}

float Tensor::item() const {
    if (data_.size() != 1) {
        throw UsageError("item() on non-scalar tensor of shape " + shape_.str());
    }
    return data_[0];
}

void Tensor::fill(float v) { std::fill(data_.begin(), data_.end(), v); }

Tensor Tensor::reshaped(Shape shape) const {
    if (shape.numel() != data_.size()) {
        throw ConfigError("cannot reshape " + shape_.str() + " to " + shape.str());
    }
    return Tensor(shape, data_);
}

bool Tensor::all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](float v) { return std::isfinite(v); });
}

bool Tensor::identical(const Tensor& other) const {
    return shape_ == other.shape_ && data_.size() == other.data_.size() &&
           (data_.empty() ||
            std::memcmp(data_.data(), other.data_.data(), data_.size() * sizeof(float)) == 0);
}

void require_same_shape(const Shape& a, const Shape& b, const char* what) {
    if (!(a == b)) {
        throw ConfigError(std::string(what) + ": shape mismatch " + a.str() + " vs " + b.str());
    }
}

}  // namespace dgrl
