#pragma once

#include <span>

#include "dgrl/autograd.hpp"

// Differentiable operations. Each takes the tape to record on first; the
// result is tracked iff the tape is enabled and some input requires grad.
namespace dgrl::ops {

inline constexpr float kBatchNormEps = 1e-5f;
inline constexpr float kBatchNormMomentum = 0.1f;
inline constexpr float kNormalizeGuard = 1e-12f;

enum class NormMode { train, eval };

/// Real cross-correlation; kernel (Cout, Cin, k, k).
Variable conv2d(Tape& tape, const Variable& input, const Variable& kernel, int stride,
                int padding, float pad_value = 0.0f);

/// Per-channel batch normalization over (N, H, W). gamma/beta are
/// (1, C, 1, 1). Train mode normalizes with batch statistics and, when
/// `update_running` is set, folds them into the running estimates.
Variable batch_norm(Tape& tape, const Variable& input, const Variable& gamma,
                    const Variable& beta, Tensor& running_mean, Tensor& running_var,
                    NormMode mode, bool update_running = true);

Variable add(Tape& tape, const Variable& a, const Variable& b);
Variable sub(Tape& tape, const Variable& a, const Variable& b);
Variable mul(Tape& tape, const Variable& a, const Variable& b);
Variable scale(Tape& tape, const Variable& a, float factor);
Variable add_scalar(Tape& tape, const Variable& a, float value);

/// (N, C, H, W) -> (N, C, 1, 1), max over positions. Gradient goes to the
/// first maximal position in row-major order.
Variable spatial_max(Tape& tape, const Variable& input);

/// (N, C, H, W) -> (N, 1, H, W), max over channels; first maximal channel wins.
Variable channel_max(Tape& tape, const Variable& input);

/// Normalizes each sample's flattened (C, H, W) vector to unit L2 norm:
/// v / max(|v|, 1e-12). Zero vectors stay zero and are counted on the tape.
Variable l2_normalize(Tape& tape, const Variable& input);

/// Per-sample L2 norm, (N, C, H, W) -> (N, 1, 1, 1).
Variable row_norm(Tape& tape, const Variable& input);

Variable sum(Tape& tape, const Variable& input);
Variable mean(Tape& tape, const Variable& input);

Variable relu(Tape& tape, const Variable& input);

/// Non-overlapping-or-strided max pooling without padding.
Variable max_pool2d(Tape& tape, const Variable& input, int size, int stride);

/// (N, C, H, W) -> (N, C*H*W, 1, 1).
Variable flatten(Tape& tape, const Variable& input);

/// Fully connected: input (N, F, 1, 1), weight (O, F, 1, 1), optional bias
/// (1, O, 1, 1) -> (N, O, 1, 1).
Variable linear(Tape& tape, const Variable& input, const Variable& weight,
                const Variable* bias = nullptr);

/// out[n, c, h, w] = x[n, c, h, w] * weights[c]; weights (1, C, 1, 1).
Variable scale_channels(Tape& tape, const Variable& input, const Variable& weights);

/// Channel mixing: out[n, j, h, w] = sum_s x[n, s, h, w] * mix[s, j], with
/// the (S, C') matrix stored as a (1, 1, S, C') tensor.
Variable mix_channels(Tape& tape, const Variable& input, const Variable& mix);

/// Mean softmax cross-entropy of logits (N, K, 1, 1) against class indices.
Variable cross_entropy(Tape& tape, const Variable& logits, std::span<const int> labels);

}  // namespace dgrl::ops
