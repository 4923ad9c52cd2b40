#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace dgrl {

/// NCHW extents. Every dense tensor in the library is 4-D; vectors and
/// scalars use trailing/leading 1s, e.g. a per-channel vector is (1, C, 1, 1).
struct Shape {
    int n = 1;
    int c = 1;
    int h = 1;
    int w = 1;

    std::size_t numel() const {
        return static_cast<std::size_t>(n) * c * h * w;
    }
    std::size_t sample_size() const { return static_cast<std::size_t>(c) * h * w; }
    std::size_t plane() const { return static_cast<std::size_t>(h) * w; }

    bool valid() const { return n > 0 && c > 0 && h > 0 && w > 0; }
    std::string str() const;

    friend bool operator==(const Shape&, const Shape&) = default;
};

/// Plain 4-D float array, row-major (n, c, h, w). No gradient state; see
/// Variable for the tracked counterpart.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, float fill = 0.0f);
    Tensor(Shape shape, std::vector<float> data);

    static Tensor scalar(float v) { return Tensor(Shape{1, 1, 1, 1}, v); }
    /// (1, C, 1, 1) tensor holding `values`.
    static Tensor channel_vector(std::span<const float> values);

    const Shape& shape() const { return shape_; }
    std::size_t numel() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    float* data() { return data_.data(); }
    const float* data() const { return data_.data(); }
    std::span<float> span() { return data_; }
    std::span<const float> span() const { return data_; }
    std::vector<float>& storage() { return data_; }
    const std::vector<float>& storage() const { return data_; }

    std::size_t offset(int n, int c, int h, int w) const {
        return ((static_cast<std::size_t>(n) * shape_.c + c) * shape_.h + h) * shape_.w + w;
    }
    float& at(int n, int c, int h, int w) { return data_[offset(n, c, h, w)]; }
    float at(int n, int c, int h, int w) const { return data_[offset(n, c, h, w)]; }
    float& operator[](std::size_t i) { return data_[i]; }
    float operator[](std::size_t i) const { return data_[i]; }

    float item() const;
    void fill(float v);
    /// Same data, new extents; element count must match.
    Tensor reshaped(Shape shape) const;
    bool all_finite() const;

    /// Bitwise equality of shape and contents.
    bool identical(const Tensor& other) const;

private:
    Shape shape_{0, 0, 0, 0};
    std::vector<float> data_;
};

/// Throws ConfigError naming both shapes when they differ.
void require_same_shape(const Shape& a, const Shape& b, const char* what);

}  // namespace dgrl
