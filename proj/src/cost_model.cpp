#include "dgrl/cost_model.hpp"

#include <cstdio>
#include <sstream>

#include "dgrl/errors.hpp"

namespace dgrl {

namespace {

constexpr std::int64_t kRealBits = 32;

std::int64_t area(const Shape& s) { return static_cast<std::int64_t>(s.h) * s.w; }

std::int64_t bn_bits(int channels) { return 2 * kRealBits * channels; }

}  // namespace

CompressionState CompressionState::dense(const NetworkSpec& spec) {
    CompressionState s;
    for (const auto& b : spec.blocks) {
        s.blocks.emplace_back(static_cast<std::size_t>(b.num_shortcuts),
                              BranchCostState{ShortcutState::dense, b.c_out, 0});
    }
    return s;
}

CompressionState CompressionState::selected(const NetworkSpec& spec, const std::vector<int>& kept_per_block) {
    if (kept_per_block.size() != spec.blocks.size()) {
        throw ConfigError("kept counts given for " + std::to_string(kept_per_block.size()) + " blocks, spec has " +
                          std::to_string(spec.blocks.size()));
    }
    CompressionState s;
    for (std::size_t i = 0; i < spec.blocks.size(); ++i) {
        const int kept = kept_per_block[i];
        if (kept < 0 || kept > spec.blocks[i].c_out) throw ConfigError("kept count out of range for block " + spec.blocks[i].name);
        s.blocks.emplace_back(static_cast<std::size_t>(spec.blocks[i].num_shortcuts),
                              BranchCostState{ShortcutState::selected, kept, kept});
    }
    return s;
}

CompressionState CompressionState::of(const StudentNet& net) {
    CompressionState s;
    for (const auto& blk : net.blocks()) {
        std::vector<BranchCostState> row;
        for (const auto& br : blk.shortcuts) {
            row.push_back({br.state, br.squeeze_channels(), static_cast<std::int64_t>(br.mix_nonzeros())});
        }
        s.blocks.push_back(std::move(row));
    }
    return s;
}

std::int64_t shortcut_param_bits(int c_in, const BranchCostState& branch) {
    const std::int64_t s = branch.kept;
    std::int64_t bits = s * c_in * 9 + kRealBits * s + kRealBits;  // gamma, omega, t_sc
    if (branch.state != ShortcutState::dense) bits += kRealBits * branch.mix_nonzeros;
    return bits;
}

CostReport cost_of(const NetworkSpec& spec, const CompressionState& state, Precision precision) {
    spec.validate();
    const bool full = precision == Precision::full;
    if (!full && state.blocks.size() != spec.blocks.size()) {
        throw ConfigError("compression state covers " + std::to_string(state.blocks.size()) + " blocks, spec has " +
                          std::to_string(spec.blocks.size()));
    }
    CostReport r;
    auto add = [&r](LayerCost c) {
        r.binary_ops += c.binary_ops;
        r.float_ops += c.float_ops;
        r.param_bits += c.param_bits;
        r.layers.push_back(std::move(c));
    };

    const auto& st = spec.stem;
    const Shape stem_conv{1, st.c_out,
                          (spec.in_height + 2 * st.padding - st.kernel) / st.stride + 1,
                          (spec.in_width + 2 * st.padding - st.kernel) / st.stride + 1};
    const std::int64_t stem_weights = static_cast<std::int64_t>(st.c_out) * spec.in_channels * st.kernel * st.kernel;
    add({"stem", "stem", 0, stem_weights * area(stem_conv), kRealBits * stem_weights + bn_bits(st.c_out)});

    for (std::size_t i = 0; i < spec.blocks.size(); ++i) {
        const BlockSpec& b = spec.blocks[i];
        const Shape out = spec.block_conv_shape(static_cast<int>(i), 1);
        const std::int64_t weights = static_cast<std::int64_t>(b.c_out) * b.c_in * b.kernel * b.kernel;
        const std::int64_t mults = weights * area(out);
        const bool binary = b.binarized && !full;
        LayerCost main{b.name, "block", 0, 0, 0};
        if (binary) {
            main.binary_ops = mults;
            main.param_bits = weights + bn_bits(b.c_out) + kRealBits;
            r.main_bits += main.param_bits;
        } else {
            main.float_ops = mults;
            main.param_bits = kRealBits * weights + bn_bits(b.c_out);
        }
        add(main);

        if (b.downsample) {
            const std::int64_t dw = static_cast<std::int64_t>(b.c_out) * b.c_in;
            add({b.name + ".downsample", "downsample", 0, dw * area(out), kRealBits * dw + bn_bits(b.c_out)});
        }

        if (!binary) continue;
        const auto& branches = state.blocks[i];
        if (static_cast<int>(branches.size()) != b.num_shortcuts) {
            throw ConfigError("block " + b.name + " has " + std::to_string(b.num_shortcuts) +
                              " shortcuts but the compression state lists " + std::to_string(branches.size()));
        }
        for (std::size_t k = 0; k < branches.size(); ++k) {
            const BranchCostState& br = branches[k];
            LayerCost c{b.name + ".sc" + std::to_string(k), "shortcut", 0, 0, 0};
            c.binary_ops = static_cast<std::int64_t>(br.kept) * b.c_in * 9 * area(out);
            c.float_ops = static_cast<std::int64_t>(br.kept) * area(out);
            if (br.state != ShortcutState::dense) c.float_ops += br.mix_nonzeros * area(out);
            c.param_bits = shortcut_param_bits(b.c_in, br);
            r.shortcut_bits += c.param_bits;
            r.shortcut_binary_ops += c.binary_ops;
            r.shortcut_float_ops += c.float_ops;
            add(c);
        }
    }

    std::int64_t features = spec.flattened_features();
    for (std::size_t j = 0; j < spec.head.hidden.size(); ++j) {
        const std::int64_t width = spec.head.hidden[j];
        const std::int64_t weights = features * width;
        LayerCost h{"hidden" + std::to_string(j), "hidden", 0, 0, 0};
        if (spec.head.hidden_binarized && !full) {
            h.binary_ops = weights;
            h.param_bits = weights + bn_bits(static_cast<int>(width)) + kRealBits;
        } else {
            h.float_ops = weights;
            h.param_bits = kRealBits * weights + bn_bits(static_cast<int>(width));
        }
        add(h);
        features = width;
    }
    const std::int64_t fc = features * spec.head.classes;
    add({"fc", "fc", 0, fc, kRealBits * (fc + spec.head.classes)});
    return r;
}

std::string cost_table(const std::vector<CostRow>& rows) {
    std::ostringstream os;
    os << "model\tfloat_ops\tbinary_ops\tflops\tsize_mbits\toverhead\n";
    char buf[256];
    for (const auto& row : rows) {
        const CostReport& c = row.report;
        std::snprintf(buf, sizeof buf, "%lld\t%lld\t%.4e\t%.2f\t%.4f", static_cast<long long>(c.float_ops),
                      static_cast<long long>(c.binary_ops), c.effective_flops(), c.size_mbits(), c.overhead_fraction());
        os << row.label << '\t' << buf << '\n';
    }
    return os.str();
}

std::string cost_breakdown(const CostReport& report) {
    std::ostringstream os;
    os << "layer\tkind\tbinary_ops\tfloat_ops\tparam_bits\n";
    for (const auto& l : report.layers) {
        os << l.name << '\t' << l.kind << '\t' << l.binary_ops << '\t' << l.float_ops << '\t' << l.param_bits << '\n';
    }
    return os.str();
}

}  // namespace dgrl
