#include "dgrl/network.hpp"

#include <algorithm>
#include <cmath>

#include "dgrl/errors.hpp"

namespace dgrl {

std::string to_string(ParamRole role) {
    switch (role) {
        case ParamRole::stem: return "stem";
        case ParamRole::main_kernel: return "main_kernel";
        case ParamRole::main_threshold: return "main_threshold";
        case ParamRole::main_bn: return "main_bn";
        case ParamRole::head: return "head";
        case ParamRole::shortcut_kernel: return "shortcut_kernel";
        case ParamRole::shortcut_omega: return "shortcut_omega";
        case ParamRole::shortcut_threshold: return "shortcut_threshold";
        case ParamRole::shortcut_mix: return "shortcut_mix";
        case ParamRole::teacher: return "teacher";
    }
    return "unknown";
}

bool is_shadow_weight(ParamRole role) {
    return role == ParamRole::main_kernel || role == ParamRole::shortcut_kernel;
}

std::string to_string(ShortcutState state) {
    switch (state) {
        case ShortcutState::dense: return "dense";
        case ShortcutState::selected: return "selected";
        case ShortcutState::sparsified: return "sparsified";
    }
    return "dense";
}

ShortcutState shortcut_state_from_string(const std::string& name) {
    if (name == "dense") return ShortcutState::dense;
    if (name == "selected") return ShortcutState::selected;
    if (name == "sparsified") return ShortcutState::sparsified;
    throw ConfigError("unknown shortcut state '" + name + "'");
}

BatchNormParams BatchNormParams::identity(int channels) {
    const Shape s{1, channels, 1, 1};
    return {Variable::parameter(Tensor(s, 1.0f)), Variable::parameter(Tensor(s, 0.0f)), Tensor(s, 0.0f),
            Tensor(s, 1.0f)};
}

Variable BatchNormParams::apply(Tape& tape, const Variable& x, ops::NormMode mode) {
    return ops::batch_norm(tape, x, gamma, beta, running_mean, running_var, mode);
}

namespace {

Tensor he_normal(Shape shape, std::mt19937_64& rng) {
    const double fan_in = static_cast<double>(shape.sample_size());
    std::normal_distribution<float> dist(0.0f, static_cast<float>(std::sqrt(2.0 / fan_in)));
    Tensor t(shape);
    for (auto& v : t.storage()) v = dist(rng);
    return t;
}

Tensor shadow_init(Shape shape, std::mt19937_64& rng) {
    Tensor t = he_normal(shape, rng);
    for (auto& v : t.storage()) v = std::clamp(v, -1.0f, 1.0f);
    return t;
}

Variable scalar_param(float v) { return Variable::parameter(Tensor::scalar(v)); }

void visit_bn(const std::string& prefix, BatchNormParams& bn, ParamRole role, const ParamVisitor& fn) {
    fn({prefix + ".bn.gamma", bn.gamma, role});
    fn({prefix + ".bn.beta", bn.beta, role});
}

void visit_bn_buffers(const std::string& prefix, BatchNormParams& bn, const BufferVisitor& fn) {
    fn(prefix + ".bn.running_mean", bn.running_mean);
    fn(prefix + ".bn.running_var", bn.running_var);
}

void require_input(const NetworkSpec& spec, const Tensor& input) {
    const Shape want = spec.input_shape(input.shape().n);
    if (input.shape() != want) {
        throw ConfigError("network " + spec.name + " expects input " + want.str() + ", got " +
                          input.shape().str());
    }
}

Variable pool(Tape& tape, const Variable& x, PoolKind kind) {
    return kind == PoolKind::max2x2 ? ops::max_pool2d(tape, x, 2, 2) : x;
}

}  // namespace

void require_trainable(const NetworkSpec& spec) {
    spec.validate();
    if (spec.residual) throw ConfigError("network " + spec.name + " is residual; only costing is supported");
    if (spec.head.global_avg_pool) throw ConfigError("network " + spec.name + ": global pooling head is not trainable");
    if (spec.stem.pool == PoolKind::max3x3s2) throw ConfigError("network " + spec.name + ": stem pooling is not trainable");
    for (const auto& b : spec.blocks) {
        if (!b.binarized) throw ConfigError("block " + b.name + " must be binarized to train a student");
        if (b.pool == PoolKind::max3x3s2) throw ConfigError("block " + b.name + ": only 2x2 max pooling is trainable");
        if (b.downsample) throw ConfigError("block " + b.name + ": downsample projections are not trainable");
        if (b.num_shortcuts > 0 && (b.kernel != 3 || b.padding != 1)) {
            throw ConfigError("block " + b.name + ": shortcuts need a 3x3 same-padded main conv");
        }
    }
}

// ---------------------------------------------------------------------------
// shortcut branch

std::size_t ShortcutBranch::mix_nonzeros() const {
    if (state == ShortcutState::dense || !mix.defined()) return 0;
    return static_cast<std::size_t>(
        std::count_if(mix.value().span().begin(), mix.value().span().end(), [](float v) { return v != 0.0f; }));
}

bool ShortcutBranch::locked(ParamRole role) const {
    if (role == ParamRole::shortcut_omega) return state != ShortcutState::dense;
    if (role == ParamRole::shortcut_mix) return state != ShortcutState::selected;
    return false;
}

void ShortcutBranch::set_layout(ShortcutState new_state, std::vector<int> kept) {
    if (new_state == ShortcutState::dense) {
        kept.resize(static_cast<std::size_t>(c_out));
        for (int i = 0; i < c_out; ++i) kept[static_cast<std::size_t>(i)] = i;
    }
    for (std::size_t s = 0; s < kept.size(); ++s) {
        if (kept[s] < 0 || kept[s] >= c_out || (s > 0 && kept[s] <= kept[s - 1])) {
            throw ConfigError("shortcut selection must be ascending channel indices below " + std::to_string(c_out));
        }
    }
    const int S = static_cast<int>(kept.size());
    state = new_state;
    selected = std::move(kept);
    const Shape gshape{std::max(S, 1), c_in, 3, 3};
    gamma_star = Variable::parameter(Tensor(gshape, 0.0f));
    omega = Variable::parameter(Tensor({1, std::max(S, 1), 1, 1}, 0.0f));
    if (!t_sc.defined()) t_sc = scalar_param(0.0f);
    if (state == ShortcutState::dense) {
        mix = Variable();
        return;
    }
    Tensor t({1, 1, std::max(S, 1), c_out}, 0.0f);
    for (int s = 0; s < S; ++s) t[static_cast<std::size_t>(s) * c_out + selected[s]] = 1.0f;
    mix = Variable::parameter(std::move(t));
}

Variable shortcut_forward(Tape& tape, ShortcutBranch& branch, const Variable& input,
                          const ForwardOptions& options) {
    if (branch.empty()) throw ConfigError("shortcut branch has no selected channels");
    if (input.shape().c != branch.c_in) {
        throw ConfigError("shortcut expects " + std::to_string(branch.c_in) + " input channels, got " +
                          input.shape().str());
    }
    Variable a = ops::biased_sign(tape, input, branch.t_sc, options.quantizer);
    Variable w = ops::binarize_weights(tape, branch.gamma_star, options.quantizer);
    Variable squeezed = ops::binary_conv2d(tape, a, w, branch.stride, 1, options.backend);
    Variable scaled = ops::scale_channels(tape, squeezed, branch.omega);
    if (branch.state == ShortcutState::dense) return scaled;
    return ops::mix_channels(tape, scaled, branch.mix);
}

// ---------------------------------------------------------------------------
// teacher

TeacherNet::TeacherNet(const NetworkSpec& spec, std::uint64_t seed) : spec_(spec) {
    require_trainable(spec_);
    std::mt19937_64 rng(seed);
    const auto& st = spec_.stem;
    stem_ = {Variable::parameter(he_normal({st.c_out, spec_.in_channels, st.kernel, st.kernel}, rng)),
             BatchNormParams::identity(st.c_out)};
    for (const auto& b : spec_.blocks) {
        blocks_.push_back({Variable::parameter(he_normal({b.c_out, b.c_in, b.kernel, b.kernel}, rng)),
                           BatchNormParams::identity(b.c_out)});
    }
    int features = spec_.flattened_features();
    for (int width : spec_.head.hidden) {
        hidden_.push_back({Variable::parameter(he_normal({width, features, 1, 1}, rng)),
                           BatchNormParams::identity(width)});
        features = width;
    }
    fc_weight_ = Variable::parameter(he_normal({spec_.head.classes, features, 1, 1}, rng));
    fc_bias_ = Variable::parameter(Tensor({1, spec_.head.classes, 1, 1}, 0.0f));
}

ForwardResult TeacherNet::forward(Tape& tape, const Tensor& input, const ForwardOptions& options) {
    require_input(spec_, input);
    const auto bn = [&](BatchNormParams& p, const Variable& x) {
        return ops::batch_norm(tape, x, p.gamma, p.beta, p.running_mean, p.running_var, options.mode,
                               options.update_running_stats);
    };
    ForwardResult r;
    const auto& st = spec_.stem;
    Variable x = ops::relu(tape, bn(stem_.bn, ops::conv2d(tape, Variable::constant(input), stem_.kernel,
                                                          st.stride, st.padding)));
    for (std::size_t i = 0; i < blocks_.size(); ++i) {
        const BlockSpec& b = spec_.blocks[i];
        x = ops::relu(tape, bn(blocks_[i].bn, ops::conv2d(tape, x, blocks_[i].kernel, b.stride, b.padding)));
        x = pool(tape, x, b.pool);
        r.features.push_back(x);
    }
    x = ops::flatten(tape, x);
    for (auto& h : hidden_) x = ops::relu(tape, bn(h.bn, ops::linear(tape, x, h.kernel)));
    r.logits = ops::linear(tape, x, fc_weight_, &fc_bias_);
    return r;
}

void TeacherNet::visit_parameters(const ParamVisitor& fn) {
    fn({"stem.kernel", stem_.kernel, ParamRole::teacher});
    visit_bn("stem", stem_.bn, ParamRole::teacher, fn);
    for (std::size_t i = 0; i < blocks_.size(); ++i) {
        const std::string p = "blocks." + std::to_string(i);
        fn({p + ".kernel", blocks_[i].kernel, ParamRole::teacher});
        visit_bn(p, blocks_[i].bn, ParamRole::teacher, fn);
    }
    for (std::size_t j = 0; j < hidden_.size(); ++j) {
        const std::string p = "head." + std::to_string(j);
        fn({p + ".weight", hidden_[j].kernel, ParamRole::teacher});
        visit_bn(p, hidden_[j].bn, ParamRole::teacher, fn);
    }
    fn({"fc.weight", fc_weight_, ParamRole::teacher});
    fn({"fc.bias", fc_bias_, ParamRole::teacher});
}

void TeacherNet::visit_buffers(const BufferVisitor& fn) {
    visit_bn_buffers("stem", stem_.bn, fn);
    for (std::size_t i = 0; i < blocks_.size(); ++i) visit_bn_buffers("blocks." + std::to_string(i), blocks_[i].bn, fn);
    for (std::size_t j = 0; j < hidden_.size(); ++j) visit_bn_buffers("head." + std::to_string(j), hidden_[j].bn, fn);
}

// ---------------------------------------------------------------------------
// student

StudentNet::StudentNet(const NetworkSpec& spec, std::uint64_t seed) : spec_(spec) {
    require_trainable(spec_);
    std::mt19937_64 rng(seed);
    const auto& st = spec_.stem;
    stem_kernel_ = Variable::parameter(he_normal({st.c_out, spec_.in_channels, st.kernel, st.kernel}, rng));
    stem_bn_ = BatchNormParams::identity(st.c_out);
    for (const auto& b : spec_.blocks) {
        StudentBlock blk;
        blk.spec = b;
        blk.theta_star = Variable::parameter(shadow_init({b.c_out, b.c_in, b.kernel, b.kernel}, rng));
        blk.threshold = scalar_param(0.0f);
        blk.bn = BatchNormParams::identity(b.c_out);
        for (int k = 0; k < b.num_shortcuts; ++k) {
            ShortcutBranch br;
            br.c_in = b.c_in;
            br.c_out = b.c_out;
            br.stride = b.stride;
            br.set_layout(ShortcutState::dense, {});
            br.gamma_star.value() = shadow_init(br.gamma_star.shape(), rng);
            blk.shortcuts.push_back(std::move(br));
        }
        blocks_.push_back(std::move(blk));
    }
    int features = spec_.flattened_features();
    for (int width : spec_.head.hidden) {
        hidden_.push_back({Variable::parameter(shadow_init({width, features, 1, 1}, rng)), scalar_param(0.0f),
                           BatchNormParams::identity(width)});
        features = width;
    }
    fc_weight_ = Variable::parameter(he_normal({spec_.head.classes, features, 1, 1}, rng));
    fc_bias_ = Variable::parameter(Tensor({1, spec_.head.classes, 1, 1}, 0.0f));
}

ForwardResult StudentNet::forward(Tape& tape, const Tensor& input, const ForwardOptions& options) {
    require_input(spec_, input);
    const auto bn = [&](BatchNormParams& p, const Variable& x) {
        return ops::batch_norm(tape, x, p.gamma, p.beta, p.running_mean, p.running_var, options.mode,
                               options.update_running_stats);
    };
    ForwardResult r;
    const auto& st = spec_.stem;
    Variable x = bn(stem_bn_, ops::conv2d(tape, Variable::constant(input), stem_kernel_, st.stride, st.padding));
    for (auto& blk : blocks_) {
        const BlockSpec& b = blk.spec;
        r.block_inputs.push_back(x);
        Variable a = ops::biased_sign(tape, x, blk.threshold, options.quantizer);
        Variable w = ops::binarize_weights(tape, blk.theta_star, options.quantizer);
        Variable out = bn(blk.bn, ops::binary_conv2d(tape, a, w, b.stride, b.padding, options.backend));
        if (options.use_shortcuts) {
            for (auto& br : blk.shortcuts) {
                if (br.empty()) continue;
                out = ops::add(tape, out, shortcut_forward(tape, br, x, options));
            }
        }
        x = pool(tape, out, b.pool);
        r.features.push_back(x);
    }
    x = ops::flatten(tape, x);
    for (auto& h : hidden_) {
        Variable lin;
        if (spec_.head.hidden_binarized) {
            Variable a = ops::biased_sign(tape, x, h.threshold, options.quantizer);
            Variable w = ops::binarize_weights(tape, h.theta_star, options.quantizer);
            lin = ops::binary_conv2d(tape, a, w, 1, 0, options.backend);
        } else {
            lin = ops::linear(tape, x, h.theta_star);
        }
        x = bn(h.bn, lin);
    }
    r.logits = ops::linear(tape, x, fc_weight_, &fc_bias_);
    return r;
}

std::vector<ShortcutBranch*> StudentNet::branches() {
    std::vector<ShortcutBranch*> out;
    for (auto& blk : blocks_)
        for (auto& br : blk.shortcuts) out.push_back(&br);
    return out;
}

std::vector<const ShortcutBranch*> StudentNet::branches() const {
    std::vector<const ShortcutBranch*> out;
    for (const auto& blk : blocks_)
        for (const auto& br : blk.shortcuts) out.push_back(&br);
    return out;
}

void StudentNet::visit_parameters(const ParamVisitor& fn) {
    fn({"stem.kernel", stem_kernel_, ParamRole::stem});
    visit_bn("stem", stem_bn_, ParamRole::stem, fn);
    for (std::size_t i = 0; i < blocks_.size(); ++i) {
        auto& blk = blocks_[i];
        const std::string p = "blocks." + std::to_string(i);
        fn({p + ".theta", blk.theta_star, ParamRole::main_kernel});
        fn({p + ".t", blk.threshold, ParamRole::main_threshold});
        visit_bn(p, blk.bn, ParamRole::main_bn, fn);
        for (std::size_t k = 0; k < blk.shortcuts.size(); ++k) {
            auto& br = blk.shortcuts[k];
            const std::string q = p + ".sc." + std::to_string(k);
            fn({q + ".gamma", br.gamma_star, ParamRole::shortcut_kernel, br.locked(ParamRole::shortcut_kernel)});
            fn({q + ".omega", br.omega, ParamRole::shortcut_omega, br.locked(ParamRole::shortcut_omega)});
            fn({q + ".t", br.t_sc, ParamRole::shortcut_threshold, br.locked(ParamRole::shortcut_threshold)});
            if (br.mix.defined()) {
                fn({q + ".mix", br.mix, ParamRole::shortcut_mix, br.locked(ParamRole::shortcut_mix)});
            }
        }
    }
    for (std::size_t j = 0; j < hidden_.size(); ++j) {
        const std::string p = "head." + std::to_string(j);
        fn({p + ".theta", hidden_[j].theta_star, ParamRole::head});
        fn({p + ".t", hidden_[j].threshold, ParamRole::head});
        visit_bn(p, hidden_[j].bn, ParamRole::head, fn);
    }
    fn({"fc.weight", fc_weight_, ParamRole::head});
    fn({"fc.bias", fc_bias_, ParamRole::head});
}

void StudentNet::visit_buffers(const BufferVisitor& fn) {
    visit_bn_buffers("stem", stem_bn_, fn);
    for (std::size_t i = 0; i < blocks_.size(); ++i) visit_bn_buffers("blocks." + std::to_string(i), blocks_[i].bn, fn);
    for (std::size_t j = 0; j < hidden_.size(); ++j) visit_bn_buffers("head." + std::to_string(j), hidden_[j].bn, fn);
}

}  // namespace dgrl
