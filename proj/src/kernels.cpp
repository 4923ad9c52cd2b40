#include "dgrl/kernels.hpp"

#include <Eigen/Core>
#include <vector>

#include "dgrl/errors.hpp"

namespace dgrl::kernels {

namespace {

using RowMatrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMatrix = Eigen::Map<RowMatrix>;
using ConstMapMatrix = Eigen::Map<const RowMatrix>;

// Column buffer layout: row = (ci, kh, kw), column = output position.
void im2col(const float* image, int channels, int height, int width, int k, int out_h, int out_w,
            const ConvGeometry& g, float* col) {
    const int positions = out_h * out_w;
    for (int ci = 0; ci < channels; ++ci) {
        const float* plane = image + static_cast<std::size_t>(ci) * height * width;
        for (int kh = 0; kh < k; ++kh) {
            for (int kw = 0; kw < k; ++kw) {
                float* row = col + (static_cast<std::size_t>(ci) * k * k + kh * k + kw) * positions;
                for (int oh = 0; oh < out_h; ++oh) {
                    const int ih = oh * g.stride - g.padding + kh;
                    float* dst = row + oh * out_w;
                    if (ih < 0 || ih >= height) {
                        for (int ow = 0; ow < out_w; ++ow) dst[ow] = g.pad_value;
                        continue;
                    }
                    const float* src = plane + static_cast<std::size_t>(ih) * width;
                    for (int ow = 0; ow < out_w; ++ow) {
                        const int iw = ow * g.stride - g.padding + kw;
                        dst[ow] = (iw < 0 || iw >= width) ? g.pad_value : src[iw];
                    }
                }
            }
        }
    }
}

void col2im_accumulate(const float* col, int channels, int height, int width, int k, int out_h,
                       int out_w, const ConvGeometry& g, float* image) {
    const int positions = out_h * out_w;
    for (int ci = 0; ci < channels; ++ci) {
        float* plane = image + static_cast<std::size_t>(ci) * height * width;
        for (int kh = 0; kh < k; ++kh) {
            for (int kw = 0; kw < k; ++kw) {
                const float* row =
                    col + (static_cast<std::size_t>(ci) * k * k + kh * k + kw) * positions;
                for (int oh = 0; oh < out_h; ++oh) {
                    const int ih = oh * g.stride - g.padding + kh;
                    if (ih < 0 || ih >= height) continue;
                    float* dst = plane + static_cast<std::size_t>(ih) * width;
                    const float* src = row + oh * out_w;
                    for (int ow = 0; ow < out_w; ++ow) {
                        const int iw = ow * g.stride - g.padding + kw;
                        if (iw >= 0 && iw < width) dst[iw] += src[ow];
                    }
                }
            }
        }
    }
}

}  // namespace

int conv_out_extent(int in, int kernel, int stride, int padding) {
    if (stride <= 0 || padding < 0 || kernel <= 0 || in + 2 * padding < kernel) {
        throw ConfigError("convolution does not fit: extent " + std::to_string(in) + ", kernel " +
                          std::to_string(kernel) + ", stride " + std::to_string(stride) +
                          ", padding " + std::to_string(padding));
    }
    return (in + 2 * padding - kernel) / stride + 1;
}

Shape conv_output_shape(const Shape& input, const Shape& kernel, const ConvGeometry& g) {
    if (kernel.c != input.c || kernel.h != kernel.w) {
        throw ConfigError("conv2d: input " + input.str() + " incompatible with kernel " +
                          kernel.str());
    }
    return Shape{input.n, kernel.n, conv_out_extent(input.h, kernel.h, g.stride, g.padding),
                 conv_out_extent(input.w, kernel.w, g.stride, g.padding)};
}

void gemm_accumulate(const float* a, const float* b, float* out, int rows, int inner, int cols) {
    ConstMapMatrix ma(a, rows, inner);
    ConstMapMatrix mb(b, inner, cols);
    MapMatrix mo(out, rows, cols);
    mo.noalias() += ma * mb;
}

Tensor conv2d_forward(const Tensor& input, const Tensor& kernel, const ConvGeometry& g) {
    const Shape out_shape = conv_output_shape(input.shape(), kernel.shape(), g);
    const Shape& in = input.shape();
    const int k = kernel.shape().h;
    const int rows = in.c * k * k;
    const int positions = out_shape.h * out_shape.w;
    Tensor out(out_shape, 0.0f);
    std::vector<float> col(static_cast<std::size_t>(rows) * positions);
    ConstMapMatrix weights(kernel.data(), out_shape.c, rows);
    for (int n = 0; n < in.n; ++n) {
        im2col(input.data() + n * in.sample_size(), in.c, in.h, in.w, k, out_shape.h,
               out_shape.w, g, col.data());
        MapMatrix dst(out.data() + n * out_shape.sample_size(), out_shape.c, positions);
        dst.noalias() = weights * ConstMapMatrix(col.data(), rows, positions);
    }
    return out;
}

void conv2d_backward(const Tensor& input, const Tensor& kernel, const Tensor& grad_out,
                     const ConvGeometry& g, Tensor* grad_input, Tensor* grad_kernel) {
    const Shape& in = input.shape();
    const Shape& os = grad_out.shape();
    const int k = kernel.shape().h;
    const int rows = in.c * k * k;
    const int positions = os.h * os.w;
    std::vector<float> col(static_cast<std::size_t>(rows) * positions);
    ConstMapMatrix weights(kernel.data(), os.c, rows);
    for (int n = 0; n < in.n; ++n) {
        ConstMapMatrix go(grad_out.data() + n * os.sample_size(), os.c, positions);
        if (grad_kernel != nullptr) {
            im2col(input.data() + n * in.sample_size(), in.c, in.h, in.w, k, os.h, os.w, g,
                   col.data());
            MapMatrix gk(grad_kernel->data(), os.c, rows);
            gk.noalias() += go * ConstMapMatrix(col.data(), rows, positions).transpose();
        }
        if (grad_input != nullptr) {
            MapMatrix gc(col.data(), rows, positions);
            gc.noalias() = weights.transpose() * go;
            col2im_accumulate(col.data(), in.c, in.h, in.w, k, os.h, os.w, g,
                              grad_input->data() + n * in.sample_size());
        }
    }
}

}  // namespace dgrl::kernels
