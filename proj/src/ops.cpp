#include "dgrl/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "dgrl/errors.hpp"
#include "dgrl/kernels.hpp"

namespace dgrl::ops {

namespace {

void require_channel_vector(const Variable& v, int channels, const char* what) {
    const Shape& s = v.shape();
    if (s.n != 1 || s.c != channels || s.h != 1 || s.w != 1) {
        throw ConfigError(std::string(what) + ": expected (1, " + std::to_string(channels) +
                          ", 1, 1), got " + s.str());
    }
}

}  // namespace

Variable conv2d(Tape& tape, const Variable& input, const Variable& kernel, int stride,
                int padding, float pad_value) {
    const kernels::ConvGeometry g{stride, padding, pad_value};
    const bool tracked = tape.tracks({&input, &kernel});
    Variable out = make_result(kernels::conv2d_forward(input.value(), kernel.value(), g), tracked);
    if (tracked) {
        tape.record("conv2d", [input, kernel, out, g] {
            if (!out.has_grad()) return;
            Tensor* gi = input.requires_grad() ? &input.grad_buffer() : nullptr;
            Tensor* gk = kernel.requires_grad() ? &kernel.grad_buffer() : nullptr;
            kernels::conv2d_backward(input.value(), kernel.value(), out.grad(), g, gi, gk);
        });
    }
    return out;
}

Variable batch_norm(Tape& tape, const Variable& input, const Variable& gamma,
                    const Variable& beta, Tensor& running_mean, Tensor& running_var,
                    NormMode mode, bool update_running) {
    const Shape& s = input.shape();
    require_channel_vector(gamma, s.c, "batch_norm gamma");
    require_channel_vector(beta, s.c, "batch_norm beta");
    require_channel_vector(Variable::constant(running_mean), s.c, "batch_norm running_mean");
    const std::size_t plane = s.plane();
    const std::size_t count = static_cast<std::size_t>(s.n) * plane;

    std::vector<float> mean_c(s.c), inv_std(s.c);
    if (mode == NormMode::train) {
        for (int c = 0; c < s.c; ++c) {
            double acc = 0.0;
            for (int n = 0; n < s.n; ++n) {
                const float* p = input.value().data() + input.value().offset(n, c, 0, 0);
                for (std::size_t i = 0; i < plane; ++i) acc += p[i];
            }
            const double mu = acc / static_cast<double>(count);
            double sq = 0.0;
            for (int n = 0; n < s.n; ++n) {
                const float* p = input.value().data() + input.value().offset(n, c, 0, 0);
                for (std::size_t i = 0; i < plane; ++i) {
                    const double d = p[i] - mu;
                    sq += d * d;
                }
            }
            const double var = sq / static_cast<double>(count);
            mean_c[c] = static_cast<float>(mu);
            inv_std[c] = static_cast<float>(1.0 / std::sqrt(var + kBatchNormEps));
            if (update_running) {
                const double unbiased = count > 1 ? var * count / (count - 1.0) : var;
                running_mean[c] = static_cast<float>((1.0 - kBatchNormMomentum) * running_mean[c] +
                                                     kBatchNormMomentum * mu);
                running_var[c] = static_cast<float>((1.0 - kBatchNormMomentum) * running_var[c] +
                                                    kBatchNormMomentum * unbiased);
            }
        }
    } else {
        for (int c = 0; c < s.c; ++c) {
            mean_c[c] = running_mean[c];
            inv_std[c] = static_cast<float>(1.0 / std::sqrt(double(running_var[c]) + kBatchNormEps));
        }
    }

    Tensor normalized(s);
    Tensor result(s);
    for (int n = 0; n < s.n; ++n) {
        for (int c = 0; c < s.c; ++c) {
            const std::size_t base = input.value().offset(n, c, 0, 0);
            const float g = gamma.value()[c];
            const float b = beta.value()[c];
            for (std::size_t i = 0; i < plane; ++i) {
                const float xhat = (input.value()[base + i] - mean_c[c]) * inv_std[c];
                normalized[base + i] = xhat;
                result[base + i] = g * xhat + b;
            }
        }
    }

    const bool tracked = tape.tracks({&input, &gamma, &beta});
    Variable out = make_result(std::move(result), tracked);
    if (tracked) {
        tape.record("batch_norm", [input, gamma, beta, out, xhat = std::move(normalized),
                                   inv_std = std::move(inv_std), mode] {
            if (!out.has_grad()) return;
            const Shape& s = input.shape();
            const std::size_t plane = s.plane();
            const double count = static_cast<double>(s.n) * plane;
            const Tensor& gy = out.grad();
            for (int c = 0; c < s.c; ++c) {
                double sum_g = 0.0, sum_gx = 0.0;
                for (int n = 0; n < s.n; ++n) {
                    const std::size_t base = gy.offset(n, c, 0, 0);
                    for (std::size_t i = 0; i < plane; ++i) {
                        sum_g += gy[base + i];
                        sum_gx += static_cast<double>(gy[base + i]) * xhat[base + i];
                    }
                }
                if (gamma.requires_grad()) gamma.grad_buffer()[c] += static_cast<float>(sum_gx);
                if (beta.requires_grad()) beta.grad_buffer()[c] += static_cast<float>(sum_g);
                if (!input.requires_grad()) continue;
                Tensor& gx = input.grad_buffer();
                const double scale_c = gamma.value()[c] * inv_std[c];
                for (int n = 0; n < s.n; ++n) {
                    const std::size_t base = gy.offset(n, c, 0, 0);
                    for (std::size_t i = 0; i < plane; ++i) {
                        if (mode == NormMode::train) {
                            const double d = gy[base + i] - sum_g / count -
                                             xhat[base + i] * sum_gx / count;
                            gx[base + i] += static_cast<float>(scale_c * d);
                        } else {
                            gx[base + i] += static_cast<float>(scale_c * gy[base + i]);
                        }
                    }
                }
            }
        });
    }
    return out;
}

Variable add(Tape& tape, const Variable& a, const Variable& b) {
    require_same_shape(a.shape(), b.shape(), "add");
    Tensor r(a.shape());
    for (std::size_t i = 0; i < r.numel(); ++i) r[i] = a.value()[i] + b.value()[i];
    const bool tracked = tape.tracks({&a, &b});
    Variable out = make_result(std::move(r), tracked);
    if (tracked) {
        tape.record("add", [a, b, out] {
            if (!out.has_grad()) return;
            const Tensor& g = out.grad();
            if (a.requires_grad()) {
                Tensor& ga = a.grad_buffer();
                for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += g[i];
            }
            if (b.requires_grad()) {
                Tensor& gb = b.grad_buffer();
                for (std::size_t i = 0; i < g.numel(); ++i) gb[i] += g[i];
            }
        });
    }
    return out;
}

Variable sub(Tape& tape, const Variable& a, const Variable& b) {
    return add(tape, a, scale(tape, b, -1.0f));
}

Variable mul(Tape& tape, const Variable& a, const Variable& b) {
    require_same_shape(a.shape(), b.shape(), "mul");
    Tensor r(a.shape());
    for (std::size_t i = 0; i < r.numel(); ++i) r[i] = a.value()[i] * b.value()[i];
    const bool tracked = tape.tracks({&a, &b});
    Variable out = make_result(std::move(r), tracked);
    if (tracked) {
        tape.record("mul", [a, b, out] {
            if (!out.has_grad()) return;
            const Tensor& g = out.grad();
            if (a.requires_grad()) {
                Tensor& ga = a.grad_buffer();
                for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * b.value()[i];
            }
            if (b.requires_grad()) {
                Tensor& gb = b.grad_buffer();
                for (std::size_t i = 0; i < g.numel(); ++i) gb[i] += g[i] * a.value()[i];
            }
        });
    }
    return out;
}

Variable scale(Tape& tape, const Variable& a, float factor) {
    Tensor r(a.shape());
    for (std::size_t i = 0; i < r.numel(); ++i) r[i] = a.value()[i] * factor;
    const bool tracked = tape.tracks({&a});
    Variable out = make_result(std::move(r), tracked);
    if (tracked) {
        tape.record("scale", [a, out, factor] {
            if (!out.has_grad()) return;
            const Tensor& g = out.grad();
            Tensor& ga = a.grad_buffer();
            for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * factor;
        });
    }
    return out;
}

Variable add_scalar(Tape& tape, const Variable& a, float value) {
    Tensor r(a.shape());
    for (std::size_t i = 0; i < r.numel(); ++i) r[i] = a.value()[i] + value;
    const bool tracked = tape.tracks({&a});
    Variable out = make_result(std::move(r), tracked);
    if (tracked) {
        tape.record("add_scalar", [a, out] {
            if (!out.has_grad()) return;
            const Tensor& g = out.grad();
            Tensor& ga = a.grad_buffer();
            for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += g[i];
        });
    }
    return out;
}

Variable spatial_max(Tape& tape, const Variable& input) {
    const Shape& s = input.shape();
    const std::size_t plane = s.plane();
    Tensor r(Shape{s.n, s.c, 1, 1});
    std::vector<std::size_t> argmax(static_cast<std::size_t>(s.n) * s.c);
    for (int n = 0; n < s.n; ++n) {
        for (int c = 0; c < s.c; ++c) {
            const std::size_t base = input.value().offset(n, c, 0, 0);
            std::size_t best = base;
            for (std::size_t i = 1; i < plane; ++i) {
                if (input.value()[base + i] > input.value()[best]) best = base + i;
            }
            argmax[n * s.c + c] = best;
            r[n * s.c + c] = input.value()[best];
        }
    }
    const bool tracked = tape.tracks({&input});
    Variable out = make_result(std::move(r), tracked);
    if (tracked) {
        tape.record("spatial_max", [input, out, argmax = std::move(argmax)] {
            if (!out.has_grad()) return;
            Tensor& gi = input.grad_buffer();
            for (std::size_t i = 0; i < argmax.size(); ++i) gi[argmax[i]] += out.grad()[i];
        });
    }
    return out;
}

Variable channel_max(Tape& tape, const Variable& input) {
    const Shape& s = input.shape();
    const std::size_t plane = s.plane();
    Tensor r(Shape{s.n, 1, s.h, s.w});
    std::vector<std::size_t> argmax(static_cast<std::size_t>(s.n) * plane);
    for (int n = 0; n < s.n; ++n) {
        for (std::size_t p = 0; p < plane; ++p) {
            std::size_t best = input.value().offset(n, 0, 0, 0) + p;
            for (int c = 1; c < s.c; ++c) {
                const std::size_t idx = input.value().offset(n, c, 0, 0) + p;
                if (input.value()[idx] > input.value()[best]) best = idx;
            }
            argmax[n * plane + p] = best;
            r[n * plane + p] = input.value()[best];
        }
    }
    const bool tracked = tape.tracks({&input});
    Variable out = make_result(std::move(r), tracked);
    if (tracked) {
        tape.record("channel_max", [input, out, argmax = std::move(argmax)] {
            if (!out.has_grad()) return;
            Tensor& gi = input.grad_buffer();
            for (std::size_t i = 0; i < argmax.size(); ++i) gi[argmax[i]] += out.grad()[i];
        });
    }
    return out;
}

Variable l2_normalize(Tape& tape, const Variable& input) {
    const Shape& s = input.shape();
    const std::size_t len = s.sample_size();
    Tensor r(s);
    std::vector<float> norms(s.n);
    for (int n = 0; n < s.n; ++n) {
        const float* v = input.value().data() + n * len;
        double sq = 0.0;
        for (std::size_t i = 0; i < len; ++i) sq += static_cast<double>(v[i]) * v[i];
        const float norm = static_cast<float>(std::sqrt(sq));
        norms[n] = norm;
        if (norm <= kNormalizeGuard) tape.note_zero_norm();
        const float denom = std::max(norm, kNormalizeGuard);
        for (std::size_t i = 0; i < len; ++i) r[n * len + i] = v[i] / denom;
    }
    const bool tracked = tape.tracks({&input});
    Variable out = make_result(std::move(r), tracked);
    if (tracked) {
        tape.record("l2_normalize", [input, out, norms = std::move(norms)] {
            if (!out.has_grad()) return;
            const Shape& s = input.shape();
            const std::size_t len = s.sample_size();
            Tensor& gi = input.grad_buffer();
            const Tensor& g = out.grad();
            const Tensor& y = out.value();
            for (int n = 0; n < s.n; ++n) {
                const std::size_t base = n * len;
                if (norms[n] <= kNormalizeGuard) {
                    for (std::size_t i = 0; i < len; ++i) gi[base + i] += g[base + i] / kNormalizeGuard;
                    continue;
                }
                double dot = 0.0;
                for (std::size_t i = 0; i < len; ++i) dot += static_cast<double>(y[base + i]) * g[base + i];
                for (std::size_t i = 0; i < len; ++i) {
                    gi[base + i] += static_cast<float>((g[base + i] - y[base + i] * dot) / norms[n]);
                }
            }
        });
    }
    return out;
}

Variable row_norm(Tape& tape, const Variable& input) {
    const Shape& s = input.shape();
    const std::size_t len = s.sample_size();
    Tensor r(Shape{s.n, 1, 1, 1});
    for (int n = 0; n < s.n; ++n) {
        double sq = 0.0;
        for (std::size_t i = 0; i < len; ++i) {
            const double v = input.value()[n * len + i];
            sq += v * v;
        }
        r[n] = static_cast<float>(std::sqrt(sq));
    }
    const bool tracked = tape.tracks({&input});
    Variable out = make_result(std::move(r), tracked);
    if (tracked) {
        tape.record("row_norm", [input, out] {
            if (!out.has_grad()) return;
            const std::size_t len = input.shape().sample_size();
            Tensor& gi = input.grad_buffer();
            for (int n = 0; n < input.shape().n; ++n) {
                const float norm = out.value()[n];
                if (norm <= 0.0f) continue;
                const float k = out.grad()[n] / norm;
                for (std::size_t i = 0; i < len; ++i) gi[n * len + i] += k * input.value()[n * len + i];
            }
        });
    }
    return out;
}

Variable sum(Tape& tape, const Variable& input) {
    double acc = 0.0;
    for (float v : input.value().span()) acc += v;
    const bool tracked = tape.tracks({&input});
    Variable out = make_result(Tensor::scalar(static_cast<float>(acc)), tracked);
    if (tracked) {
        tape.record("sum", [input, out] {
            if (!out.has_grad()) return;
            const float g = out.grad()[0];
            Tensor& gi = input.grad_buffer();
            for (std::size_t i = 0; i < gi.numel(); ++i) gi[i] += g;
        });
    }
    return out;
}

Variable mean(Tape& tape, const Variable& input) {
    return scale(tape, sum(tape, input), 1.0f / static_cast<float>(input.value().numel()));
}

Variable relu(Tape& tape, const Variable& input) {
    Tensor r(input.shape());
    for (std::size_t i = 0; i < r.numel(); ++i) r[i] = std::max(0.0f, input.value()[i]);
    const bool tracked = tape.tracks({&input});
    Variable out = make_result(std::move(r), tracked);
    if (tracked) {
        tape.record("relu", [input, out] {
            if (!out.has_grad()) return;
            Tensor& gi = input.grad_buffer();
            for (std::size_t i = 0; i < gi.numel(); ++i) {
                if (input.value()[i] > 0.0f) gi[i] += out.grad()[i];
            }
        });
    }
    return out;
}

Variable max_pool2d(Tape& tape, const Variable& input, int size, int stride) {
    const Shape& s = input.shape();
    const int oh = kernels::conv_out_extent(s.h, size, stride, 0);
    const int ow = kernels::conv_out_extent(s.w, size, stride, 0);
    Tensor r(Shape{s.n, s.c, oh, ow});
    std::vector<std::size_t> argmax(r.numel());
    std::size_t o = 0;
    for (int n = 0; n < s.n; ++n) {
        for (int c = 0; c < s.c; ++c) {
            for (int y = 0; y < oh; ++y) {
                for (int x = 0; x < ow; ++x, ++o) {
                    std::size_t best = input.value().offset(n, c, y * stride, x * stride);
                    for (int dy = 0; dy < size; ++dy) {
                        for (int dx = 0; dx < size; ++dx) {
                            const std::size_t idx =
                                input.value().offset(n, c, y * stride + dy, x * stride + dx);
                            if (input.value()[idx] > input.value()[best]) best = idx;
                        }
                    }
                    argmax[o] = best;
                    r[o] = input.value()[best];
                }
            }
        }
    }
    const bool tracked = tape.tracks({&input});
    Variable out = make_result(std::move(r), tracked);
    if (tracked) {
        tape.record("max_pool2d", [input, out, argmax = std::move(argmax)] {
            if (!out.has_grad()) return;
            Tensor& gi = input.grad_buffer();
            for (std::size_t i = 0; i < argmax.size(); ++i) gi[argmax[i]] += out.grad()[i];
        });
    }
    return out;
}

Variable flatten(Tape& tape, const Variable& input) {
    const Shape& s = input.shape();
    const Shape flat{s.n, static_cast<int>(s.sample_size()), 1, 1};
    const bool tracked = tape.tracks({&input});
    Variable out = make_result(input.value().reshaped(flat), tracked);
    if (tracked) {
        tape.record("flatten", [input, out] {
            if (!out.has_grad()) return;
            Tensor& gi = input.grad_buffer();
            for (std::size_t i = 0; i < gi.numel(); ++i) gi[i] += out.grad()[i];
        });
    }
    return out;
}

Variable linear(Tape& tape, const Variable& input, const Variable& weight, const Variable* bias) {
    const Shape& s = input.shape();
    const Shape& ws = weight.shape();
    if (s.h != 1 || s.w != 1 || ws.c != s.c || ws.h != 1 || ws.w != 1) {
        throw ConfigError("linear: input " + s.str() + " incompatible with weight " + ws.str());
    }
    if (bias != nullptr) require_channel_vector(*bias, ws.n, "linear bias");
    const int batch = s.n, in_f = s.c, out_f = ws.n;
    // out (N x O) = x (N x F) * W^T (F x O)
    std::vector<float> wt(static_cast<std::size_t>(in_f) * out_f);
    for (int o = 0; o < out_f; ++o) {
        for (int f = 0; f < in_f; ++f) wt[static_cast<std::size_t>(f) * out_f + o] = weight.value()[o * in_f + f];
    }
    Tensor r(Shape{batch, out_f, 1, 1});
    if (bias != nullptr) {
        for (int n = 0; n < batch; ++n) {
            for (int o = 0; o < out_f; ++o) r[n * out_f + o] = bias->value()[o];
        }
    }
    kernels::gemm_accumulate(input.value().data(), wt.data(), r.data(), batch, in_f, out_f);
    Variable b = bias != nullptr ? *bias : Variable();
    const bool tracked = tape.tracks({&input, &weight, bias});
    Variable out = make_result(std::move(r), tracked);
    if (tracked) {
        tape.record("linear", [input, weight, b, out] {
            if (!out.has_grad()) return;
            const int batch = input.shape().n, in_f = input.shape().c, out_f = weight.shape().n;
            const Tensor& g = out.grad();
            if (input.requires_grad()) {
                // gx (N x F) += g (N x O) * W (O x F)
                kernels::gemm_accumulate(g.data(), weight.value().data(),
                                         input.grad_buffer().data(), batch, out_f, in_f);
            }
            if (weight.requires_grad()) {
                std::vector<float> gt(static_cast<std::size_t>(out_f) * batch);
                for (int n = 0; n < batch; ++n) {
                    for (int o = 0; o < out_f; ++o) gt[static_cast<std::size_t>(o) * batch + n] = g[n * out_f + o];
                }
                // gW (O x F) += g^T (O x N) * x (N x F)
                kernels::gemm_accumulate(gt.data(), input.value().data(),
                                         weight.grad_buffer().data(), out_f, batch, in_f);
            }
            if (b.defined() && b.requires_grad()) {
                Tensor& gb = b.grad_buffer();
                for (int n = 0; n < batch; ++n) {
                    for (int o = 0; o < out_f; ++o) gb[o] += g[n * out_f + o];
                }
            }
        });
    }
    return out;
}

Variable scale_channels(Tape& tape, const Variable& input, const Variable& weights) {
    const Shape& s = input.shape();
    require_channel_vector(weights, s.c, "scale_channels weights");
    const std::size_t plane = s.plane();
    Tensor r(s);
    for (int n = 0; n < s.n; ++n) {
        for (int c = 0; c < s.c; ++c) {
            const std::size_t base = input.value().offset(n, c, 0, 0);
            const float k = weights.value()[c];
            for (std::size_t i = 0; i < plane; ++i) r[base + i] = input.value()[base + i] * k;
        }
    }
    const bool tracked = tape.tracks({&input, &weights});
    Variable out = make_result(std::move(r), tracked);
    if (tracked) {
        tape.record("scale_channels", [input, weights, out] {
            if (!out.has_grad()) return;
            const Shape& s = input.shape();
            const std::size_t plane = s.plane();
            const Tensor& g = out.grad();
            for (int n = 0; n < s.n; ++n) {
                for (int c = 0; c < s.c; ++c) {
                    const std::size_t base = g.offset(n, c, 0, 0);
                    if (weights.requires_grad()) {
                        double acc = 0.0;
                        for (std::size_t i = 0; i < plane; ++i) {
                            acc += static_cast<double>(g[base + i]) * input.value()[base + i];
                        }
                        weights.grad_buffer()[c] += static_cast<float>(acc);
                    }
                    if (input.requires_grad()) {
                        Tensor& gi = input.grad_buffer();
                        const float k = weights.value()[c];
                        for (std::size_t i = 0; i < plane; ++i) gi[base + i] += g[base + i] * k;
                    }
                }
            }
        });
    }
    return out;
}

Variable mix_channels(Tape& tape, const Variable& input, const Variable& mix) {
    const Shape& s = input.shape();
    const Shape& ms = mix.shape();
    if (ms.n != 1 || ms.c != 1 || ms.h != s.c) {
        throw ConfigError("mix_channels: input " + s.str() + " incompatible with mixing matrix " +
                          ms.str());
    }
    const int in_c = s.c, out_c = ms.w;
    const int plane = static_cast<int>(s.plane());
    // out_n (C' x P) = mix^T (C' x S) * x_n (S x P)
    std::vector<float> mix_t(static_cast<std::size_t>(out_c) * in_c);
    for (int i = 0; i < in_c; ++i) {
        for (int j = 0; j < out_c; ++j) mix_t[static_cast<std::size_t>(j) * in_c + i] = mix.value()[i * out_c + j];
    }
    Tensor r(Shape{s.n, out_c, s.h, s.w});
    for (int n = 0; n < s.n; ++n) {
        kernels::gemm_accumulate(mix_t.data(), input.value().data() + n * s.sample_size(),
                                 r.data() + n * r.shape().sample_size(), out_c, in_c, plane);
    }
    const bool tracked = tape.tracks({&input, &mix});
    Variable out = make_result(std::move(r), tracked);
    if (tracked) {
        tape.record("mix_channels", [input, mix, out] {
            if (!out.has_grad()) return;
            const Shape& s = input.shape();
            const int in_c = s.c, out_c = mix.shape().w;
            const int plane = static_cast<int>(s.plane());
            const Tensor& g = out.grad();
            std::vector<float> xt;
            for (int n = 0; n < s.n; ++n) {
                const float* gn = g.data() + n * g.shape().sample_size();
                const float* xn = input.value().data() + n * s.sample_size();
                if (input.requires_grad()) {
                    // gx_n (S x P) += mix (S x C') * g_n (C' x P)
                    kernels::gemm_accumulate(mix.value().data(), gn,
                                             input.grad_buffer().data() + n * s.sample_size(),
                                             in_c, out_c, plane);
                }
                if (mix.requires_grad()) {
                    // gmix (S x C') += x_n (S x P) * g_n^T (P x C')
                    xt.assign(static_cast<std::size_t>(plane) * out_c, 0.0f);
                    for (int j = 0; j < out_c; ++j) {
                        for (int p = 0; p < plane; ++p) xt[static_cast<std::size_t>(p) * out_c + j] = gn[j * plane + p];
                    }
                    kernels::gemm_accumulate(xn, xt.data(), mix.grad_buffer().data(), in_c, plane,
                                             out_c);
                }
            }
        });
    }
    return out;
}

Variable cross_entropy(Tape& tape, const Variable& logits, std::span<const int> labels) {
    const Shape& s = logits.shape();
    if (s.h != 1 || s.w != 1) throw ConfigError("cross_entropy: logits must be (N, K, 1, 1), got " + s.str());
    if (labels.size() != static_cast<std::size_t>(s.n)) {
        throw ConfigError("cross_entropy: " + std::to_string(labels.size()) + " labels for batch of " +
                          std::to_string(s.n));
    }
    const int classes = s.c;
    Tensor probs(s);
    double total = 0.0;
    for (int n = 0; n < s.n; ++n) {
        const int y = labels[n];
        if (y < 0 || y >= classes) {
            throw DataError("label " + std::to_string(y) + " outside [0, " + std::to_string(classes) + ")");
        }
        const float* z = logits.value().data() + n * classes;
        const float zmax = *std::max_element(z, z + classes);
        double denom = 0.0;
        for (int k = 0; k < classes; ++k) denom += std::exp(static_cast<double>(z[k]) - zmax);
        for (int k = 0; k < classes; ++k) {
            probs[n * classes + k] = static_cast<float>(std::exp(static_cast<double>(z[k]) - zmax) / denom);
        }
        total += std::log(denom) + zmax - z[y];
    }
    const bool tracked = tape.tracks({&logits});
    Variable out = make_result(Tensor::scalar(static_cast<float>(total / s.n)), tracked);
    if (tracked) {
        std::vector<int> ys(labels.begin(), labels.end());
        tape.record("cross_entropy", [logits, out, probs = std::move(probs), ys = std::move(ys)] {
            if (!out.has_grad()) return;
            const int batch = logits.shape().n, classes = logits.shape().c;
            const float g = out.grad()[0] / static_cast<float>(batch);
            Tensor& gl = logits.grad_buffer();
            for (int n = 0; n < batch; ++n) {
                for (int k = 0; k < classes; ++k) {
                    const float onehot = (k == ys[n]) ? 1.0f : 0.0f;
                    gl[n * classes + k] += g * (probs[n * classes + k] - onehot);
                }
            }
        });
    }
    return out;
}

}  // namespace dgrl::ops
