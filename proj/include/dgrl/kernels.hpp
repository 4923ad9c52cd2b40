#pragma once

#include "dgrl/tensor.hpp"

// Untracked numeric kernels shared by the taped ops and the binary path.
namespace dgrl::kernels {

struct ConvGeometry {
    int stride = 1;
    int padding = 0;
    /// Value read outside the input. 0 for real convolution, -1 for the
    /// ±1 domain where zero is unrepresentable.
    float pad_value = 0.0f;
};

/// Output extent along one axis; throws ConfigError when the kernel does not fit.
int conv_out_extent(int in, int kernel, int stride, int padding);

Shape conv_output_shape(const Shape& input, const Shape& kernel, const ConvGeometry& g);

/// Cross-correlation of (N, Cin, H, W) with (Cout, Cin, k, k).
Tensor conv2d_forward(const Tensor& input, const Tensor& kernel, const ConvGeometry& g);

/// Accumulates input and/or kernel gradients (either pointer may be null).
/// Padding cells are constants and receive no gradient.
void conv2d_backward(const Tensor& input, const Tensor& kernel, const Tensor& grad_out,
                     const ConvGeometry& g, Tensor* grad_input, Tensor* grad_kernel);

/// Row-major (rows x inner) * (inner x cols) accumulated into out.
void gemm_accumulate(const float* a, const float* b, float* out, int rows, int inner, int cols);

}  // namespace dgrl::kernels
