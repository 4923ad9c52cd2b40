#pragma once

#include <string>

#include <cstdint>
#include <span>
#include <vector>

#include "dgrl/autograd.hpp"

namespace dgrl {

/// Bit-packed ±1 tensor. Each leading-axis slice (one sample, or one output
/// channel of a kernel) is a row of C*H*W bits in row-major order, packed
/// LSB-first into 64-bit words; bit 1 is +1, bit 0 is -1. Rows start on a
/// word boundary and unused high bits of the last word are always 0.
class BitTensor {
public:
    using Word = std::uint64_t;
    static constexpr int kWordBits = 64;

    BitTensor() = default;

    /// Throws UsageError unless every entry is exactly +1 or -1.
    static BitTensor pack(const Tensor& values);
    Tensor unpack() const;

    const Shape& shape() const { return shape_; }
    int row_bits() const { return row_bits_; }
    int words_per_row() const { return words_per_row_; }
    std::span<const Word> row(int index) const {
        return {words_.data() + static_cast<std::size_t>(index) * words_per_row_,
                static_cast<std::size_t>(words_per_row_)};
    }
    std::span<const Word> words() const { return words_; }

    /// Mask of valid bits in a row's final word.
    Word tail_mask() const;

    bool bit(int row_index, int bit_index) const {
        const Word w = words_[static_cast<std::size_t>(row_index) * words_per_row_ + bit_index / kWordBits];
        return ((w >> (bit_index % kWordBits)) & 1u) != 0;
    }

    friend bool operator==(const BitTensor&, const BitTensor&) = default;

private:
    Shape shape_{0, 0, 0, 0};
    int row_bits_ = 0;
    int words_per_row_ = 0;
    std::vector<Word> words_;
};

/// sign(x, t): -1 where x <= t, +1 where x > t.
inline float biased_sign(float x, float t) { return x > t ? 1.0f : -1.0f; }
Tensor biased_sign(const Tensor& x, float t);

/// Straight-through gradient of biased_sign: upstream passes where
/// |x - t| < 1. The threshold receives the negated sum of what passed,
/// since sign(x, t) = sign(x - t, 0).
struct SteGradient {
    Tensor input;
    float threshold = 0.0f;
};
SteGradient ste_backward(const Tensor& upstream, const Tensor& x, float t);

/// sign(theta*, 0) packed; the forward half of weight binarization.
BitTensor binarize_weights(const Tensor& theta_star);

/// ±1 cross-correlation by XNOR and popcount: each output is
/// 2 * popcount(xnor(a, b)) - L over a receptive field of L = Cin*k*k bits.
/// Out-of-range taps read -1.
Tensor conv2d_xnor(const BitTensor& input, const BitTensor& kernel, int stride, int padding);

/// `hard` is the real quantizer. `surrogate` replaces it with the clipped
/// identity clamp(x - t, -1, 1), whose exact derivative is the STE window,
/// so finite differences can check the backward rules.
enum class QuantizerMode { hard, surrogate };

/// Which kernel evaluates a binary convolution forward: `packed` runs XNOR
/// popcount on bit-packed operands, `emulated` runs a float convolution
/// on the ±1 values. Both pad with -1 and agree exactly.
enum class BinaryBackend { packed, emulated };
std::string to_string(BinaryBackend backend);
BinaryBackend binary_backend_from_string(const std::string& name);

namespace ops {

/// Taped biased sign with STE backward into both x and the (1,1,1,1) threshold.
Variable biased_sign(Tape& tape, const Variable& x, const Variable& threshold, QuantizerMode mode);

/// Taped sign(theta*, 0); backward applies 1[|theta*| < 1].
Variable binarize_weights(Tape& tape, const Variable& theta_star, QuantizerMode mode);

/// Convolution of ±1 activations with ±1 kernels, padding with -1.
/// Backward is the float convolution gradient.
Variable binary_conv2d(Tape& tape, const Variable& input, const Variable& kernel, int stride,
                       int padding, BinaryBackend backend);

}  // namespace ops

}  // namespace dgrl
