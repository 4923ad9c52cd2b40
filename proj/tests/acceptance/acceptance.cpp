// Acceptance run: one result line per criterion.
//
//   acceptance                      every criterion
//   acceptance --only 4             a single criterion
//   acceptance --expect-fail 4      exit 0 only if 4 fails and the rest pass
//
// Exit codes: 0 as expected, 1 otherwise, 77 when every requested
// criterion was skipped (criterion 7 without CIFAR-10 data).

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "dgrl/bitconv.hpp"
#include "dgrl/checkpoint.hpp"
#include "dgrl/compress.hpp"
#include "dgrl/config.hpp"
#include "dgrl/cost_model.hpp"
#include "dgrl/data.hpp"
#include "dgrl/distill.hpp"
#include "dgrl/errors.hpp"
#include "dgrl/network.hpp"
#include "dgrl/ops.hpp"
#include "dgrl/train.hpp"
#include "test_util.hpp"

using namespace dgrl;
using dgrl::testing::random_pm1;
using dgrl::testing::random_tensor;

namespace {

enum class Verdict { pass, fail, skip };

struct Outcome {
    Verdict verdict = Verdict::pass;
    std::string detail;
    std::vector<std::string> notes;  // printed indented under the line
};

std::string fmt(const char* f, double a) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, a);
    return buf;
}

// 1 -------------------------------------------------------------------------

// Float convolution of the unpacked operands, with the -1 border made explicit.
Tensor real_conv_of_unpack(const BitTensor& x, const BitTensor& w, int stride, int pad) {
    const Tensor xv = x.unpack();
    const Shape s = xv.shape();
    Tensor padded({s.n, s.c, s.h + 2 * pad, s.w + 2 * pad}, -1.0f);
    for (int n = 0; n < s.n; ++n)
        for (int c = 0; c < s.c; ++c)
            for (int h = 0; h < s.h; ++h)
                for (int q = 0; q < s.w; ++q) padded.at(n, c, h + pad, q + pad) = xv.at(n, c, h, q);
    Tape tape = Tape::inference();
    return ops::conv2d(tape, Variable::constant(padded), Variable::constant(w.unpack()), stride, 0).value();
}

Outcome xnor_exactness() {
    std::mt19937_64 rng(101);
    std::uniform_int_distribution<int> n(1, 2), c(1, 16), e(3, 8), o(1, 8), st(1, 2), pd(0, 1);
    int mismatched = 0;
    for (int trial = 0; trial < 500; ++trial) {
        const int cin = c(rng);
        const Tensor x = random_pm1({n(rng), cin, e(rng), e(rng)}, rng);
        const Tensor w = random_pm1({o(rng), cin, 3, 3}, rng);
        const int stride = st(rng), pad = pd(rng);
        const BitTensor bx = BitTensor::pack(x), bw = BitTensor::pack(w);
        const Tensor got = conv2d_xnor(bx, bw, stride, pad);
        const Tensor real = real_conv_of_unpack(bx, bw, stride, pad);
        const Tensor loops = dgrl::testing::naive_conv2d(x, w, stride, pad, -1.0f);
        if (!(got.shape() == real.shape()) || got.storage() != real.storage() || got.storage() != loops.storage())
            ++mismatched;
    }
    return {mismatched == 0 ? Verdict::pass : Verdict::fail, "pairs=500 mismatched=" + std::to_string(mismatched), {}};
}

// 2 -------------------------------------------------------------------------

constexpr double kGradTolerance = 1e-3;

double worst_op_error(std::mt19937_64& rng) {
    using dgrl::testing::op_gradient_error;
    using dgrl::testing::separated_tensor;
    double worst = 0.0;
    auto track = [&](double e) { worst = std::max(worst, e); };
    auto param = [](Tensor t) { return Variable::parameter(std::move(t)); };
    for (int trial = 0; trial < 5; ++trial) {
        auto x = param(random_tensor({2, 2, 5, 5}, rng));
        auto k = param(random_tensor({3, 2, 3, 3}, rng));
        track(op_gradient_error([&](Tape& t) { return ops::conv2d(t, x, k, 1 + trial % 2, trial % 2); }, {x, k}, rng));

        auto bx = param(random_tensor({3, 2, 3, 3}, rng, -2, 2));
        auto gamma = param(random_tensor({1, 2, 1, 1}, rng));
        auto beta = param(random_tensor({1, 2, 1, 1}, rng));
        Tensor rm = random_tensor({1, 2, 1, 1}, rng), rv = random_tensor({1, 2, 1, 1}, rng, 0.5f, 2.0f);
        for (auto mode : {ops::NormMode::train, ops::NormMode::eval})
            track(op_gradient_error([&](Tape& t) { return ops::batch_norm(t, bx, gamma, beta, rm, rv, mode, false); },
                                    {bx, gamma, beta}, rng));

        auto a = param(random_tensor({2, 2, 2, 3}, rng));
        auto b = param(random_tensor({2, 2, 2, 3}, rng));
        track(op_gradient_error([&](Tape& t) { return ops::add(t, a, b); }, {a, b}, rng));
        track(op_gradient_error([&](Tape& t) { return ops::sub(t, a, b); }, {a, b}, rng));
        track(op_gradient_error([&](Tape& t) { return ops::mul(t, a, b); }, {a, b}, rng));
        track(op_gradient_error([&](Tape& t) { return ops::scale(t, a, -1.7f); }, {a}, rng));
        track(op_gradient_error([&](Tape& t) { return ops::add_scalar(t, a, 0.3f); }, {a}, rng));

        auto p = param(separated_tensor({2, 3, 4, 4}, rng));
        track(op_gradient_error([&](Tape& t) { return ops::spatial_max(t, p); }, {p}, rng));
        track(op_gradient_error([&](Tape& t) { return ops::channel_max(t, p); }, {p}, rng));
        track(op_gradient_error([&](Tape& t) { return ops::max_pool2d(t, p, 2, 2); }, {p}, rng));

        auto v = param(random_tensor({2, 3, 2, 2}, rng));
        track(op_gradient_error([&](Tape& t) { return ops::l2_normalize(t, v); }, {v}, rng));
        track(op_gradient_error([&](Tape& t) { return ops::row_norm(t, v); }, {v}, rng));

        auto r = param(separated_tensor({2, 2, 3, 3}, rng, 0.025f));
        track(op_gradient_error([&](Tape& t) { return ops::relu(t, r); }, {r}, rng));
        track(op_gradient_error([&](Tape& t) { return ops::mean(t, r); }, {r}, rng));
        track(op_gradient_error([&](Tape& t) { return ops::sum(t, r); }, {r}, rng));
        track(op_gradient_error([&](Tape& t) { return ops::flatten(t, r); }, {r}, rng));

        auto lx = param(random_tensor({3, 5, 1, 1}, rng));
        auto lw = param(random_tensor({4, 5, 1, 1}, rng));
        auto lb = param(random_tensor({1, 4, 1, 1}, rng));
        track(op_gradient_error([&](Tape& t) { return ops::linear(t, lx, lw, &lb); }, {lx, lw, lb}, rng));

        auto sx = param(random_tensor({2, 3, 3, 2}, rng));
        auto om = param(random_tensor({1, 3, 1, 1}, rng));
        auto mix = param(random_tensor({1, 1, 3, 5}, rng));
        track(op_gradient_error([&](Tape& t) { return ops::scale_channels(t, sx, om); }, {sx, om}, rng));
        track(op_gradient_error([&](Tape& t) { return ops::mix_channels(t, sx, mix); }, {sx, mix}, rng));

        auto z = param(random_tensor({4, 6, 1, 1}, rng, -2, 2));
        std::vector<int> labels(4);
        for (auto& y : labels) y = static_cast<int>(rng() % 6);
        track(op_gradient_error([&](Tape& t) { return ops::cross_entropy(t, z, labels); }, {z}, rng));

        auto qx = param(separated_tensor({1, 2, 3, 3}, rng, 0.0125f));
        for (auto& e : qx.value().storage()) e *= 0.5f;
        auto qt = param(Tensor::scalar(0.0061f));
        auto th = param(separated_tensor({2, 2, 3, 3}, rng, 0.0125f));
        for (auto& e : th.value().storage()) e *= 2.0f / 3.0f;
        const auto sur = QuantizerMode::surrogate;
        track(op_gradient_error([&](Tape& t) { return ops::biased_sign(t, qx, qt, sur); }, {qx, qt}, rng));
        track(op_gradient_error([&](Tape& t) { return ops::binarize_weights(t, th, sur); }, {th}, rng));
        track(op_gradient_error(
            [&](Tape& t) {
                return ops::binary_conv2d(t, ops::biased_sign(t, qx, qt, sur), ops::binarize_weights(t, th, sur), 1, 1,
                                          BinaryBackend::emulated);
            },
            {qx, qt, th}, rng));
    }
    return worst;
}


// Full student loss on a two-block toy net with selected branches, so every
// kind of real parameter (BN, omega, T, thresholds) is reached. The net has
// no pooling, leaving the distillation maxes as the only max reductions.
// Parameters are drawn small enough that quantizer inputs sit inside the
// STE window. A draw is used only if it is away from every kink: quantizer
// inputs kQuantizerMargin from the clamp corners, and each max at least
// kMaxGap above its runner-up. Central differences across a kink measure
// the jump, not the derivative.
constexpr double kQuantizerMargin = 0.02;
constexpr double kMaxGap = 5e-3;

struct LossCheck {
    bool usable = false;
    double margin = 0.0;
    double gap = 0.0;
    double error = 0.0;
    std::string worst_param;
};

double corner_distance(const Tensor& x, float t) {
    double d = INFINITY;
    for (float v : x.span()) d = std::min(d, std::abs(std::abs(static_cast<double>(v) - t) - 1.0));
    return d;
}

// Smallest top-two gap over the spatial max (per sample, channel) and the
// channel max (per sample, position).
double max_gap(const Tensor& f) {
    const Shape s = f.shape();
    double gap = INFINITY;
    auto fold = [&gap](std::vector<float> v) {
        if (v.size() < 2) return;
        std::partial_sort(v.begin(), v.begin() + 2, v.end(), std::greater<>());
        gap = std::min(gap, static_cast<double>(v[0]) - v[1]);
    };
    for (int n = 0; n < s.n; ++n) {
        for (int c = 0; c < s.c; ++c) {
            std::vector<float> v;
            for (int h = 0; h < s.h; ++h)
                for (int w = 0; w < s.w; ++w) v.push_back(f.at(n, c, h, w));
            fold(v);
        }
        for (int h = 0; h < s.h; ++h)
            for (int w = 0; w < s.w; ++w) {
                std::vector<float> v;
                for (int c = 0; c < s.c; ++c) v.push_back(f.at(n, c, h, w));
                fold(v);
            }
    }
    return gap;
}

LossCheck student_loss_error(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    NetworkSpec spec = presets::toy(1, 2, 3, 3);
    spec.blocks[0].pool = PoolKind::none;
    spec.validate();
    TeacherNet teacher(spec.with_shortcuts(0), seed + 1);
    StudentNet student(spec, seed);
    for (auto* br : student.branches()) br->omega.value() = random_tensor(br->omega.shape(), rng, -1, 1);
    select_channels(student, {SelectionStrategy::global, 0.5, 0});
    student.visit_parameters([&](const ParamRef& p) {
        Tensor& v = p.param.value();
        const bool bn_gamma = p.name.ends_with(".bn.gamma");
        const bool bn_beta = p.name.ends_with(".bn.beta");
        if (bn_gamma) v = random_tensor(v.shape(), rng, 0.1f, 0.25f);
        else if (bn_beta) v = random_tensor(v.shape(), rng, -0.1f, 0.1f);
        else if (p.role == ParamRole::main_threshold || p.role == ParamRole::shortcut_threshold)
            v = random_tensor(v.shape(), rng, -0.1f, 0.1f);
        else if (p.role == ParamRole::shortcut_omega || p.role == ParamRole::shortcut_mix)
            v = random_tensor(v.shape(), rng, -0.1f, 0.1f);
        else if (is_shadow_weight(p.role))
            v = random_tensor(v.shape(), rng, -0.9f, 0.9f);
    });

    const Tensor x = random_tensor(spec.input_shape(2), rng);
    std::vector<int> labels(2);
    for (auto& y : labels) y = static_cast<int>(rng() % 3);
    std::vector<Tensor> tfeat;
    {
        Tape tape = Tape::inference();
        for (const auto& f : teacher.forward(tape, x, {ops::NormMode::eval}).features) tfeat.push_back(f.value());
    }
    const ForwardOptions opt{ops::NormMode::train, QuantizerMode::surrogate, BinaryBackend::emulated, true, false};
    const DistillConfig distill{0.1f, {}};

    LossCheck out;
    {
        Tape tape = Tape::inference();
        const ForwardResult r = student.forward(tape, x, opt);
        double m = INFINITY;
        for (std::size_t b = 0; b < r.block_inputs.size(); ++b) {
            const auto& blk = student.blocks()[b];
            m = std::min(m, corner_distance(r.block_inputs[b].value(), blk.threshold.value().item()));
            for (const auto& br : blk.shortcuts) {
                m = std::min(m, corner_distance(r.block_inputs[b].value(), br.t_sc.value().item()));
                m = std::min(m, corner_distance(br.gamma_star.value(), 0.0f));
            }
            m = std::min(m, corner_distance(blk.theta_star.value(), 0.0f));
        }
        out.margin = m;
        double gap = INFINITY;
        for (const auto& f : r.features) gap = std::min(gap, max_gap(f.value()));
        out.gap = gap;
        if (m < kQuantizerMargin || gap < kMaxGap) return out;
    }
    out.usable = true;

    std::vector<std::string> names;
    std::vector<Variable> params;
    student.visit_parameters([&](const ParamRef& p) {
        names.push_back(p.name);
        params.push_back(p.param);
    });
    {
        Tape tape;
        const ForwardResult r = student.forward(tape, x, opt);
        tape.backward(total_loss(tape, r.logits, labels, tfeat, r.features, distill).total);
    }
    auto loss = [&]() -> double {
        Tape tape = Tape::inference();
        const ForwardResult r = student.forward(tape, x, opt);
        return total_loss(tape, r.logits, labels, tfeat, r.features, distill).total.value().item();
    };

    std::vector<float> analytic, numeric;
    double worst_tensor = -1.0;
    for (std::size_t i = 0; i < params.size(); ++i) {
        Variable& p = params[i];
        const Tensor a = p.has_grad() ? p.grad() : Tensor(p.shape(), 0.0f);
        const Tensor n = dgrl::testing::finite_difference(p, loss, 1e-3f);
        analytic.insert(analytic.end(), a.span().begin(), a.span().end());
        numeric.insert(numeric.end(), n.span().begin(), n.span().end());
        const double e = dgrl::testing::compare_gradients(a, n).relative_error;
        if (e > worst_tensor) {
            worst_tensor = e;
            out.worst_param = names[i] + "=" + fmt("%.2e", e);
        }
    }
    const int count = static_cast<int>(analytic.size());
    Tensor ta({1, 1, 1, count}), tn({1, 1, 1, count});
    std::copy(analytic.begin(), analytic.end(), ta.storage().begin());
    std::copy(numeric.begin(), numeric.end(), tn.storage().begin());
    out.error = dgrl::testing::compare_gradients(ta, tn).relative_error;
    return out;
}

Outcome gradient_fidelity() {
    std::mt19937_64 rng(202);
    const double ops_worst = worst_op_error(rng);
    double loss_worst = 0.0;
    std::vector<std::string> notes;
    int checked = 0, rejected = 0;
    for (std::uint64_t seed = 1; checked < 5 && seed <= 200; ++seed) {
        const LossCheck c = student_loss_error(seed);
        if (!c.usable) {
            ++rejected;
            continue;
        }
        ++checked;
        loss_worst = std::max(loss_worst, c.error);
        notes.push_back("student loss seed " + std::to_string(seed) + ": " + fmt("%.2e", c.error) + " margin " +
                        fmt("%.3f", c.margin) + " gap " + fmt("%.4f", c.gap) +
                        " worst tensor " + c.worst_param);
    }
    notes.push_back("draws rejected as too close to a kink: " + std::to_string(rejected));
    const bool ok = checked == 5 && ops_worst < kGradTolerance && loss_worst < kGradTolerance;
    return {ok ? Verdict::pass : Verdict::fail,
            "ops_rel_err=" + fmt("%.2e", ops_worst) + " student_loss_rel_err=" + fmt("%.2e", loss_worst) +
                " tol=1e-3 h=1e-3",
            notes};
}

// 3 -------------------------------------------------------------------------

Outcome ste_contract() {
    int wrong = 0, points = 0;
    Tensor x({1, 1, 1, 641});
    for (int k = -320; k <= 320; ++k) x[k + 320] = static_cast<float>(k) / 64.0f;
    const Tensor ones(x.shape(), 1.0f);
    for (float t : {-0.5f, 0.0f, 0.75f}) {
        const SteGradient g = ste_backward(ones, x, t);
        Tape tape;
        auto xv = Variable::parameter(x);
        auto tv = Variable::parameter(Tensor::scalar(t));
        tape.backward(ops::sum(tape, ops::biased_sign(tape, xv, tv, QuantizerMode::hard)));
        int inside = 0;
        for (std::size_t i = 0; i < x.numel(); ++i) {
            const bool in = std::abs(static_cast<double>(x[i]) - t) < 1.0;
            inside += in;
            const float want = in ? 1.0f : 0.0f;
            wrong += g.input[i] != want;
            wrong += xv.grad()[i] != want;
            ++points;
        }
        wrong += g.threshold != -static_cast<float>(inside);
        wrong += tv.grad()[0] != -static_cast<float>(inside);
    }
    // weight side: 1[|theta*| < 1]
    {
        Tape tape;
        auto th = Variable::parameter(x);
        tape.backward(ops::sum(tape, ops::binarize_weights(tape, th, QuantizerMode::hard)));
        for (std::size_t i = 0; i < x.numel(); ++i) {
            wrong += th.grad()[i] != (std::abs(x[i]) < 1.0f ? 1.0f : 0.0f);
            ++points;
        }
    }
    return {wrong == 0 ? Verdict::pass : Verdict::fail,
            "grid=k/64 on [-5,5] t={-0.5,0,0.75} points=" + std::to_string(points) + " wrong=" + std::to_string(wrong),
            {}};
}

// 4 -------------------------------------------------------------------------

std::vector<int> blockwise_kept(const NetworkSpec& spec, double eps) {
    std::vector<int> kept;
    for (const auto& b : spec.blocks) kept.push_back(channel_budget(eps, b.c_out));
    return kept;
}

Outcome cost_table_rows() {
    struct Row {
        std::string name;
        CostReport cost;
        double flops;
        double mbits;
    };
    const NetworkSpec vgg0 = presets::vgg_small(0), vgg1 = presets::vgg_small(1);
    const NetworkSpec res0 = presets::resnet18(0), res1 = presets::resnet18(1);
    const std::vector<Row> rows{
        {"vgg-small full-precision", cost_of(vgg0, CompressionState::dense(vgg0), Precision::full), 6.17e8, 428.96},
        {"vgg-small K=0", cost_of(vgg0, CompressionState::dense(vgg0), Precision::binary), 1.32e7, 14.80},
        {"vgg-small K=1 eps=0.1",
         cost_of(vgg1, CompressionState::selected(vgg1, {52, 52, 25, 25, 12}), Precision::binary), 1.48e7, 14.84},
        {"resnet18 K=0", cost_of(res0, CompressionState::dense(res0), Precision::binary), 1.63e8, 33.6},
        {"resnet18 K=1 eps=0.1",
         cost_of(res1, CompressionState::selected(res1, blockwise_kept(res1, 0.1)), Precision::binary), 1.84e8, 35.5},
    };
    int failed = 0;
    std::vector<std::string> notes;
    for (const auto& r : rows) {
        const double df = r.cost.effective_flops() / r.flops - 1.0;
        const double ds = r.cost.size_mbits() / r.mbits - 1.0;
        const bool ok = std::abs(df) <= 0.02 && std::abs(ds) <= 0.02;
        failed += !ok;
        char buf[256];
        std::snprintf(buf, sizeof buf, "%-4s %-26s flops %.4e vs %.2e (%+.1f%%)  size %.2f vs %.2f (%+.1f%%)",
                      ok ? "ok" : "off", r.name.c_str(), r.cost.effective_flops(), r.flops, 100 * df,
                      r.cost.size_mbits(), r.mbits, 100 * ds);
        notes.push_back(buf);
    }
    return {failed == 0 ? Verdict::pass : Verdict::fail,
            "rows=" + std::to_string(rows.size()) + " outside_2pct=" + std::to_string(failed), notes};
}

// 5 -------------------------------------------------------------------------

Outcome budget_constraint() {
    std::mt19937_64 rng(505);
    const NetworkSpec spec = presets::vgg_small(1);
    int total = 0;
    for (const auto& b : spec.blocks) total += b.c_out;
    int violations = 0;
    std::vector<std::string> notes;
    for (double eps : {0.05, 0.1, 0.2}) {
        StudentNet net(spec, 1);
        for (auto* br : net.branches()) br->omega.value() = random_tensor(br->omega.shape(), rng);
        const SelectionReport r = select_channels(net, {SelectionStrategy::global, eps, 0});
        const int budget = static_cast<int>(std::floor(eps * total + 1e-9));
        int kept = 0;
        for (const auto* br : net.branches()) kept += br->squeeze_channels();

        const CostReport cost = cost_of(spec, CompressionState::of(net), Precision::binary);
        double slack_bits = 0.0;
        for (const auto& b : r.branches) {
            const double per_channel = 9.0 * spec.blocks[b.block].c_in + 64.0;
            slack_bits += std::max(0.0, b.kept.size() - eps * b.channels) * per_channel + 32.0;
        }
        const double overhead = overhead_fraction(net);
        const double bound = eps + slack_bits / cost.main_bits;
        violations += kept > budget || r.total_kept != kept || overhead > bound;
        char buf[160];
        std::snprintf(buf, sizeof buf, "eps=%.2f kept=%d budget=%d overhead=%.5f bound=%.5f", eps, kept, budget,
                      overhead, bound);
        notes.push_back(buf);
    }
    return {violations == 0 ? Verdict::pass : Verdict::fail,
            "sum_C'=" + std::to_string(total) + " violations=" + std::to_string(violations), notes};
}

// 6 -------------------------------------------------------------------------

float block_loss(const Tensor& t, const Tensor& s) {
    Tape tape = Tape::inference();
    return distill_block_loss(tape, t, Variable::constant(s)).value().item();
}

Outcome distill_properties() {
    std::mt19937_64 rng(606);
    std::uniform_int_distribution<int> dim(1, 5), ch(2, 5);
    std::uniform_real_distribution<float> scale(0.01f, 100.0f);
    int identical = 0, scaling = 0, bound = 0, teacher_grad = 0;
    for (int trial = 0; trial < 1000; ++trial) {
        const Shape sh{dim(rng), dim(rng), dim(rng), dim(rng)};
        const Tensor t = random_tensor(sh, rng, -3, 3);
        const Tensor s = random_tensor(sh, rng, -3, 3);
        identical += block_loss(t, t) != 0.0f;

        const float base = block_loss(t, s);
        Tensor ts = t, ss = s;
        const float k1 = scale(rng), k2 = scale(rng);
        for (auto& v : ts.storage()) v *= k1;
        for (auto& v : ss.storage()) v *= k2;
        scaling += std::abs(block_loss(ts, s) - base) > 1e-5f || std::abs(block_loss(t, ss) - base) > 1e-5f;

        Tape inf = Tape::inference();
        const DistillTerms terms = distill_block_terms(inf, t, Variable::constant(s));
        for (int n = 0; n < sh.n; ++n) {
            bound += terms.spatial.value()[n] > 2.0f || terms.channel.value()[n] > 2.0f;
        }

        // both nets on one tape; only the student may receive gradient
        const NetworkSpec spec = presets::toy(static_cast<int>(rng() % 2), ch(rng));
        TeacherNet teacher(spec.with_shortcuts(0), rng());
        StudentNet student(spec, rng());
        const Tensor x = random_tensor(spec.input_shape(2), rng);
        Tape tape;
        const ForwardResult tr = teacher.forward(tape, x, {});
        const ForwardResult sr = student.forward(tape, x, {});
        std::vector<Tensor> tfeat;
        for (const auto& f : tr.features) tfeat.push_back(f.value());
        const std::vector<int> labels{0, 1};
        tape.backward(total_loss(tape, sr.logits, labels, tfeat, sr.features, {}).total);
        bool leaked = false;
        teacher.visit_parameters([&](const ParamRef& p) {
            if (!p.param.has_grad()) return;
            for (float g : p.param.grad().span()) leaked |= g != 0.0f;
        });
        teacher_grad += leaked;
    }
    const bool ok = identical + scaling + bound + teacher_grad == 0;
    return {ok ? Verdict::pass : Verdict::fail,
            "cases=1000 nonzero_identical=" + std::to_string(identical) + " scale_variant=" + std::to_string(scaling) +
                " term_over_2=" + std::to_string(bound) + " teacher_grad=" + std::to_string(teacher_grad),
            {}};
}

// 7 -------------------------------------------------------------------------

struct TrendSettings {
    std::size_t images = 5000;
    int epochs = 30;
    int finetune_epochs = 5;
    std::vector<std::uint64_t> seeds{1, 2, 3};
};

struct TrendSeed {
    double baseline = 0, distill = 0, shortcut = 0, global = 0, random = 0;
    bool distill_falls = true;
    std::vector<double> first, last;
};

TrainConfig trend_config(Phase phase, int epochs, std::uint64_t seed, float alpha) {
    TrainConfig c;
    c.phase = phase;
    c.epochs = epochs;
    c.seed = seed;
    c.batch_size = 128;
    c.schedule.base = 0.01;
    c.schedule.points = {{epochs * 2 / 3, 0.1}};
    c.distill.alpha = alpha;
    c.augment = true;
    return c;
}

TrendSeed trend_seed(const Dataset& train, const Dataset& test, const TrendSettings& ts, std::uint64_t seed) {
    const NetworkSpec k0 = presets::vgg_small(0, 4), k1 = presets::vgg_small(1, 4);
    TrendSeed out;
    auto progress = [&](const std::string& what) { std::cerr << "  seed " << seed << ": " << what << std::endl; };

    TeacherNet teacher(k0, seed);
    {
        TrainState st;
        progress("teacher");
        train_teacher(teacher, train, trend_config(Phase::teacher, ts.epochs, seed, 0.0f), st);
    }
    {
        StudentNet s(k0, seed);
        TrainState st;
        progress("baseline");
        train_student(s, teacher, train, trend_config(Phase::main, ts.epochs, seed, 0.0f), st);
        out.baseline = evaluate(s, nullptr, test).top1;
    }
    {
        StudentNet s(k0, seed);
        TrainState st;
        progress("distill");
        train_student(s, teacher, train, trend_config(Phase::main, ts.epochs, seed, 0.1f), st);
        out.distill = evaluate(s, nullptr, test).top1;
        out.first = st.history.front().distill;
        out.last = st.history.back().distill;
        for (std::size_t b = 0; b < out.first.size(); ++b) out.distill_falls &= out.last[b] < out.first[b];
    }
    StudentNet si(k1, seed);
    {
        TrainState st;
        progress("shortcut");
        train_student(si, teacher, train, trend_config(Phase::main, ts.epochs, seed, 0.1f), st);
        train_student(si, teacher, train, trend_config(Phase::shortcut, ts.epochs, seed, 0.1f), st);
        out.shortcut = evaluate(si, nullptr, test).top1;
    }
    for (auto strategy : {SelectionStrategy::global, SelectionStrategy::random}) {
        StudentNet s = si;
        TrainState st;
        progress(to_string(strategy) + " selection");
        select_channels(s, {strategy, 0.1, seed});
        finetune_shortcuts(s, teacher, train, trend_config(Phase::finetune, ts.finetune_epochs, seed, 0.1f), st);
        (strategy == SelectionStrategy::global ? out.global : out.random) = evaluate(s, nullptr, test).top1;
    }
    return out;
}

Outcome training_trend(const Dataset& train, const Dataset& test, const TrendSettings& ts) {
    int falls = 0, distill_wins = 0, shortcut_wins = 0, global_wins = 0;
    std::vector<std::string> notes;
    for (std::uint64_t seed : ts.seeds) {
        const TrendSeed r = trend_seed(train, test, ts, seed);
        falls += r.distill_falls;
        distill_wins += r.baseline < r.distill;
        shortcut_wins += r.baseline < r.shortcut;
        global_wins += r.global >= r.random;
        std::ostringstream os;
        os << "seed " << seed << ": baseline=" << r.baseline << " distill=" << r.distill << " shortcut=" << r.shortcut
           << " global=" << r.global << " random=" << r.random << " distill_loss";
        for (std::size_t b = 0; b < r.first.size(); ++b) os << ' ' << r.first[b] << "->" << r.last[b];
        notes.push_back(os.str());
    }
    const int n = static_cast<int>(ts.seeds.size());
    const int need = n == 3 ? 2 : n;
    const bool ok = falls == n && distill_wins >= need && shortcut_wins >= need && global_wins >= need;
    return {ok ? Verdict::pass : Verdict::fail,
            "seeds=" + std::to_string(n) + " distill_falls=" + std::to_string(falls) + " distill>base=" +
                std::to_string(distill_wins) + " si>base=" + std::to_string(shortcut_wins) +
                " global>=random=" + std::to_string(global_wins),
            notes};
}

Outcome training_trend_cifar(bool smoke) {
    if (smoke) {
        // Code path only: tiny synthetic stand-in, never reported as a pass.
        TrendSettings ts;
        ts.images = 128;
        ts.epochs = 1;
        ts.finetune_epochs = 1;
        ts.seeds = {1};
        const Dataset train = make_synthetic(ts.images, 10, 3, 32, 7, 0);
        const Dataset test = make_synthetic(64, 10, 3, 32, 7, 1);
        Outcome o = training_trend(train, test, ts);
        o.verdict = Verdict::skip;
        o.detail = "smoke run on synthetic data: " + o.detail;
        return o;
    }
    const char* dir = std::getenv("DGRL_CIFAR10_DIR");
    if (dir == nullptr || !std::filesystem::exists(std::filesystem::path(dir) / "data_batch_1.bin")) {
        return {Verdict::skip, "CIFAR-10 binaries not found; set DGRL_CIFAR10_DIR", {}};
    }
    const TrendSettings ts;
    const Dataset train = load_cifar10(dir, Split::train).head(ts.images);
    const Dataset test = load_cifar10(dir, Split::test);
    return training_trend(train, test, ts);
}

// 8 -------------------------------------------------------------------------

struct PipelineRun {
    std::string metrics;
    std::uint32_t checksum = 0;
};

// Each stage goes through the encoded checkpoint, as the command line does.
void reload(StudentNet& student, TeacherNet& teacher, TrainState& state) {
    const Checkpoint c = decode_checkpoint(encode_checkpoint(student_checkpoint(student, &teacher, &state)));
    student = restore_student(c, &student.spec());
    teacher = restore_teacher(c);
    state = restore_train_state(c);
}

PipelineRun run_pipeline(std::uint64_t seed) {
    RunConfig cfg;
    cfg.data.synthetic_train = 256;
    cfg.data.synthetic_test = 128;
    cfg.data.augment = true;
    cfg.train.batch_size = 32;
    cfg.train.epochs = 2;
    cfg.train.seed = seed;
    cfg.compress.seed = seed;
    const NetworkSpec spec = network_spec(cfg);
    const Dataset train = load_train_data(cfg, spec);
    const Dataset test = load_test_data(cfg, spec);

    std::ostringstream log;
    const MetricsSink sink = [&](const std::string& line) { log << line << '\n'; };
    TeacherNet teacher(spec.with_shortcuts(0), seed);
    {
        TrainState ts;
        train_teacher(teacher, train, train_config(cfg, Phase::teacher), ts, sink, &test);
    }
    StudentNet student(spec, seed);
    TrainState state;
    train_student(student, teacher, train, train_config(cfg, Phase::main), state, sink, &test);
    reload(student, teacher, state);
    train_student(student, teacher, train, train_config(cfg, Phase::shortcut), state, sink, &test);
    reload(student, teacher, state);
    log << select_channels(student, selection_policy(cfg)).table();
    reload(student, teacher, state);
    log << "zeroed=" << sparsify_interaction(student).zeroed << '\n';
    reload(student, teacher, state);
    finetune_shortcuts(student, teacher, train, train_config(cfg, Phase::finetune), state, sink, &test);
    reload(student, teacher, state);
    log << format_eval(evaluate(student, &teacher, test)) << '\n';
    return {log.str(), checkpoint_checksum(student_checkpoint(student, &teacher, &state))};
}

Outcome pipeline_replay() {
    const PipelineRun a = run_pipeline(3), b = run_pipeline(3), other = run_pipeline(4);
    const bool same = a.metrics == b.metrics && a.checksum == b.checksum;
    const bool seed_matters = a.checksum != other.checksum;
    char buf[160];
    std::snprintf(buf, sizeof buf, "metrics_identical=%d checksum=%08x/%08x other_seed=%08x", a.metrics == b.metrics,
                  a.checksum, b.checksum, other.checksum);
    return {same && seed_matters ? Verdict::pass : Verdict::fail, buf, {}};
}

// 9 -------------------------------------------------------------------------

Checkpoint random_checkpoint(std::mt19937_64& rng) {
    std::uniform_int_distribution<int> k(0, 2), ch(2, 6);
    StudentNet s(presets::toy(k(rng), ch(rng)), rng());
    s.visit_parameters([&](const ParamRef& p) { p.param.value() = random_tensor(p.param.shape(), rng, -3, 3); });
    s.visit_buffers([&](const std::string&, Tensor& t) { t = random_tensor(t.shape(), rng, 0.5f, 2); });
    if (!s.branches().empty() && rng() % 2) select_channels(s, {SelectionStrategy::random, 0.5, rng()});
    TeacherNet t(s.spec().with_shortcuts(0), rng());
    TrainState state;
    state.phase = Phase::shortcut;
    state.epoch = static_cast<int>(rng() % 50);
    state.step = static_cast<std::int64_t>(rng() % 1000);
    state.history.push_back({"main", 0, 0.01, 1.25, 1.0, {0.5, 0.75}, 0.5});
    return student_checkpoint(s, &t, &state);
}

bool same_checkpoint(const Checkpoint& a, const Checkpoint& b) {
    if (a.kind != b.kind || !(a.spec == b.spec) || a.meta != b.meta || a.tensors.size() != b.tensors.size()) return false;
    for (std::size_t i = 0; i < a.tensors.size(); ++i) {
        if (a.tensors[i].first != b.tensors[i].first || !a.tensors[i].second.identical(b.tensors[i].second)) return false;
    }
    return true;
}

Outcome persistence_integrity() {
    std::mt19937_64 rng(909);
    std::uniform_int_distribution<int> mask(1, 255);
    int mismatched = 0;
    std::size_t flips = 0, undetected = 0;
    for (int trial = 0; trial < 100; ++trial) {
        const Checkpoint c = random_checkpoint(rng);
        const auto bytes = encode_checkpoint(c);
        const Checkpoint back = decode_checkpoint(bytes);
        mismatched += !same_checkpoint(c, back) || encode_checkpoint(back) != bytes;
        auto copy = bytes;
        for (std::size_t i = 0; i < copy.size(); ++i) {
            copy[i] ^= static_cast<std::uint8_t>(mask(rng));
            ++flips;
            try {
                decode_checkpoint(copy);
                ++undetected;
            } catch (const CorruptionError&) {
            } catch (const UnsupportedVersionError&) {
            }
            copy[i] = bytes[i];
        }
    }
    return {mismatched == 0 && undetected == 0 ? Verdict::pass : Verdict::fail,
            "checkpoints=100 roundtrip_mismatch=" + std::to_string(mismatched) + " flips=" + std::to_string(flips) +
                " undetected=" + std::to_string(undetected),
            {}};
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"acceptance checks"};
    std::vector<int> only, expect_fail;
    bool smoke = false;
    app.add_option("--only", only, "criteria to run (default all)")->check(CLI::Range(1, 9));
    app.add_option("--expect-fail", expect_fail, "criteria known to fail")->check(CLI::Range(1, 9));
    app.add_flag("--trend-smoke", smoke, "run criterion 7 on tiny synthetic data (never a pass)");
    CLI11_PARSE(app, argc, argv);

    const std::map<int, std::function<Outcome()>> criteria{
        {1, xnor_exactness},    {2, gradient_fidelity},   {3, ste_contract},
        {4, cost_table_rows},   {5, budget_constraint},   {6, distill_properties},
        {7, [smoke] { return training_trend_cifar(smoke); }},
        {8, pipeline_replay},   {9, persistence_integrity},
    };
    const std::set<int> expected(expect_fail.begin(), expect_fail.end());
    const std::set<int> selected = only.empty() ? std::set<int>{1, 2, 3, 4, 5, 6, 7, 8, 9}
                                                : std::set<int>(only.begin(), only.end());
    int surprises = 0, skipped = 0;
    for (int id : selected) {
        const auto start = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = criteria.at(id)();
        } catch (const std::exception& e) {
            o = {Verdict::fail, std::string("threw: ") + e.what(), {}};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        const char* word = o.verdict == Verdict::pass ? "PASS" : o.verdict == Verdict::fail ? "FAIL" : "SKIP";
        std::cout << "criterion " << id << ": " << word << "  " << o.detail << "  (" << fmt("%.1f", secs) << " s)";
        if (o.verdict != Verdict::skip && (o.verdict == Verdict::fail) != expected.contains(id)) {
            std::cout << (o.verdict == Verdict::fail ? "  [unexpected]" : "  [expected to fail, passed]");
            ++surprises;
        } else if (o.verdict == Verdict::fail) {
            std::cout << "  [known]";
        }
        std::cout << '\n';
        for (const auto& n : o.notes) std::cout << "    " << n << '\n';
        std::cout.flush();
        skipped += o.verdict == Verdict::skip;
    }
    if (surprises > 0) return 1;
    return skipped == static_cast<int>(selected.size()) ? 77 : 0;
}
