#include "dgrl/bitconv.hpp"

#include <algorithm>
#include <bit>
#include <cmath>

#include "dgrl/errors.hpp"
#include "dgrl/kernels.hpp"

namespace dgrl {

BitTensor BitTensor::pack(const Tensor& values) {
    BitTensor b;
    b.shape_ = values.shape();
    b.row_bits_ = static_cast<int>(values.shape().sample_size());
    b.words_per_row_ = (b.row_bits_ + kWordBits - 1) / kWordBits;
    b.words_.assign(static_cast<std::size_t>(b.shape_.n) * b.words_per_row_, 0);
    for (int r = 0; r < b.shape_.n; ++r) {
        const float* src = values.data() + static_cast<std::size_t>(r) * b.row_bits_;
        Word* dst = b.words_.data() + static_cast<std::size_t>(r) * b.words_per_row_;
        for (int i = 0; i < b.row_bits_; ++i) {
            const float v = src[i];
            if (v == 1.0f) {
                dst[i / kWordBits] |= Word{1} << (i % kWordBits);
            } else if (v != -1.0f) {
                throw UsageError("pack: entry " + std::to_string(r * b.row_bits_ + i) +
                                 " is not +1 or -1");
            }
        }
    }
    return b;
}

Tensor BitTensor::unpack() const {
    Tensor out(shape_);
    for (int r = 0; r < shape_.n; ++r) {
        for (int i = 0; i < row_bits_; ++i) {
            out[static_cast<std::size_t>(r) * row_bits_ + i] = bit(r, i) ? 1.0f : -1.0f;
        }
    }
    return out;
}

BitTensor::Word BitTensor::tail_mask() const {
    const int rem = row_bits_ % kWordBits;
    return rem == 0 ? ~Word{0} : (Word{1} << rem) - 1;
}

Tensor biased_sign(const Tensor& x, float t) {
    Tensor out(x.shape());
    for (std::size_t i = 0; i < x.numel(); ++i) out[i] = biased_sign(x[i], t);
    return out;
}

SteGradient ste_backward(const Tensor& upstream, const Tensor& x, float t) {
    require_same_shape(upstream.shape(), x.shape(), "ste_backward");
    SteGradient g{Tensor(x.shape(), 0.0f), 0.0f};
    double passed = 0.0;
    for (std::size_t i = 0; i < x.numel(); ++i) {
        if (std::fabs(x[i] - t) < 1.0f) {
            g.input[i] = upstream[i];
            passed += upstream[i];
        }
    }
    g.threshold = static_cast<float>(-passed);
    return g;
}

BitTensor binarize_weights(const Tensor& theta_star) {
    return BitTensor::pack(biased_sign(theta_star, 0.0f));
}

Tensor conv2d_xnor(const BitTensor& input, const BitTensor& kernel, int stride, int padding) {
    const Shape& in = input.shape();
    const Shape& ks = kernel.shape();
    if (ks.c != in.c || ks.h != ks.w) {
        throw ConfigError("conv2d_xnor: input " + in.str() + " incompatible with kernel " + ks.str());
    }
    const int k = ks.h;
    const int oh = kernels::conv_out_extent(in.h, k, stride, padding);
    const int ow = kernels::conv_out_extent(in.w, k, stride, padding);
    const int field = in.c * k * k;
    const int words = kernel.words_per_row();
    const BitTensor::Word tail = kernel.tail_mask();
    const int positions = oh * ow;

    Tensor out(Shape{in.n, ks.n, oh, ow});
    // One packed receptive field per output position, bit order (ci, kh, kw)
    // to line up with the kernel rows.
    std::vector<BitTensor::Word> patches(static_cast<std::size_t>(positions) * words);
    for (int n = 0; n < in.n; ++n) {
        std::fill(patches.begin(), patches.end(), 0);
        for (int y = 0; y < oh; ++y) {
            for (int x = 0; x < ow; ++x) {
                BitTensor::Word* patch = patches.data() + static_cast<std::size_t>(y * ow + x) * words;
                int bit = 0;
                for (int ci = 0; ci < in.c; ++ci) {
                    for (int kh = 0; kh < k; ++kh) {
                        const int ih = y * stride - padding + kh;
                        for (int kw = 0; kw < k; ++kw, ++bit) {
                            const int iw = x * stride - padding + kw;
                            if (ih < 0 || ih >= in.h || iw < 0 || iw >= in.w) continue;
                            if (input.bit(n, (ci * in.h + ih) * in.w + iw)) {
                                patch[bit / BitTensor::kWordBits] |= BitTensor::Word{1}
                                                                     << (bit % BitTensor::kWordBits);
                            }
                        }
                    }
                }
            }
        }
        for (int co = 0; co < ks.n; ++co) {
            const auto krow = kernel.row(co);
            float* dst = out.data() + out.offset(n, co, 0, 0);
            for (int p = 0; p < positions; ++p) {
                const BitTensor::Word* patch = patches.data() + static_cast<std::size_t>(p) * words;
                int agree = 0;
                for (int wi = 0; wi + 1 < words; ++wi) agree += std::popcount(~(patch[wi] ^ krow[wi]));
                agree += std::popcount(~(patch[words - 1] ^ krow[words - 1]) & tail);
                dst[p] = static_cast<float>(2 * agree - field);
            }
        }
    }
    return out;
}

std::string to_string(BinaryBackend backend) { return backend == BinaryBackend::packed ? "packed" : "emulated"; }

BinaryBackend binary_backend_from_string(const std::string& name) {
    if (name == "packed") return BinaryBackend::packed;
    if (name == "emulated") return BinaryBackend::emulated;
    throw ConfigError("unknown binary backend '" + name + "' (expected packed or emulated)");
}

namespace ops {

Variable biased_sign(Tape& tape, const Variable& x, const Variable& threshold, QuantizerMode mode) {
    if (threshold.value().numel() != 1) {
        throw ConfigError("biased_sign: threshold must be a scalar, got " + threshold.shape().str());
    }
    const float t = threshold.value()[0];
    Tensor r(x.shape());
    for (std::size_t i = 0; i < r.numel(); ++i) {
        const float v = x.value()[i];
        r[i] = mode == QuantizerMode::hard ? dgrl::biased_sign(v, t) : std::clamp(v - t, -1.0f, 1.0f);
    }
    const bool tracked = tape.tracks({&x, &threshold});
    Variable out = make_result(std::move(r), tracked);
    if (tracked) {
        tape.record("biased_sign", [x, threshold, out, t] {
            if (!out.has_grad()) return;
            const SteGradient g = ste_backward(out.grad(), x.value(), t);
            if (x.requires_grad()) {
                Tensor& gx = x.grad_buffer();
                for (std::size_t i = 0; i < gx.numel(); ++i) gx[i] += g.input[i];
            }
            if (threshold.requires_grad()) threshold.grad_buffer()[0] += g.threshold;
        });
    }
    return out;
}

Variable binarize_weights(Tape& tape, const Variable& theta_star, QuantizerMode mode) {
    Tensor r(theta_star.shape());
    for (std::size_t i = 0; i < r.numel(); ++i) {
        const float v = theta_star.value()[i];
        r[i] = mode == QuantizerMode::hard ? dgrl::biased_sign(v, 0.0f) : std::clamp(v, -1.0f, 1.0f);
    }
    const bool tracked = tape.tracks({&theta_star});
    Variable out = make_result(std::move(r), tracked);
    if (tracked) {
        tape.record("binarize_weights", [theta_star, out] {
            if (!out.has_grad()) return;
            Tensor& g = theta_star.grad_buffer();
            for (std::size_t i = 0; i < g.numel(); ++i) {
                if (std::fabs(theta_star.value()[i]) < 1.0f) g[i] += out.grad()[i];
            }
        });
    }
    return out;
}

Variable binary_conv2d(Tape& tape, const Variable& input, const Variable& kernel, int stride,
                       int padding, BinaryBackend backend) {
    const kernels::ConvGeometry g{stride, padding, -1.0f};
    Tensor result = backend == BinaryBackend::packed
                        ? conv2d_xnor(BitTensor::pack(input.value()), BitTensor::pack(kernel.value()),
                                      stride, padding)
                        : kernels::conv2d_forward(input.value(), kernel.value(), g);
    const bool tracked = tape.tracks({&input, &kernel});
    Variable out = make_result(std::move(result), tracked);
    if (tracked) {
        tape.record("binary_conv2d", [input, kernel, out, g] {
            if (!out.has_grad()) return;
            Tensor* gi = input.requires_grad() ? &input.grad_buffer() : nullptr;
            Tensor* gk = kernel.requires_grad() ? &kernel.grad_buffer() : nullptr;
            kernels::conv2d_backward(input.value(), kernel.value(), out.grad(), g, gi, gk);
        });
    }
    return out;
}

}  // namespace ops

}  // namespace dgrl
