#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dgrl/network.hpp"
#include "dgrl/network_spec.hpp"

namespace dgrl {

// Counting conventions:
//  - ops are multiplications; additions, pooling and BN scaling are free.
//  - binary layers contribute binary_ops, everything else float_ops;
//    effective FLOPs = float_ops + binary_ops / 64.
//  - parameters: 1 bit per binarized weight, 32 bits per real value (BN
//    gamma/beta, thresholds, omega, nonzero T entries, float layers).
//  - Mbits are decimal (1e6 bits).

struct BranchCostState {
    ShortcutState state = ShortcutState::dense;
    int kept = 0;                  // squeeze channels S
    std::int64_t mix_nonzeros = 0;  // stored T entries; ignored when dense
};

/// Per block, per shortcut branch.
struct CompressionState {
    std::vector<std::vector<BranchCostState>> blocks;

    /// Every branch dense with all C' channels.
    static CompressionState dense(const NetworkSpec& spec);
    /// Each block's branches selected with the given kept counts and a
    /// one-hot T (one nonzero per kept channel).
    static CompressionState selected(const NetworkSpec& spec, const std::vector<int>& kept_per_block);
    static CompressionState of(const StudentNet& net);
};

enum class Precision { binary, full };

struct LayerCost {
    std::string name;
    std::string kind;  // stem, block, shortcut, downsample, hidden, fc
    std::int64_t binary_ops = 0;
    std::int64_t float_ops = 0;
    std::int64_t param_bits = 0;
};

struct CostReport {
    std::int64_t float_ops = 0;
    std::int64_t binary_ops = 0;
    std::int64_t param_bits = 0;
    /// Bits of binarized blocks (weights, BN, threshold); the denominator
    /// of the shortcut overhead.
    std::int64_t main_bits = 0;
    std::int64_t shortcut_bits = 0;
    std::int64_t shortcut_float_ops = 0;
    std::int64_t shortcut_binary_ops = 0;
    std::vector<LayerCost> layers;

    double effective_flops() const { return static_cast<double>(float_ops) + static_cast<double>(binary_ops) / 64.0; }
    double size_mbits() const { return static_cast<double>(param_bits) / 1e6; }
    double overhead_fraction() const {
        return main_bits == 0 ? 0.0 : static_cast<double>(shortcut_bits) / static_cast<double>(main_bits);
    }
};

/// Parameter bits of one shortcut branch with C input channels.
std::int64_t shortcut_param_bits(int c_in, const BranchCostState& branch);

CostReport cost_of(const NetworkSpec& spec, const CompressionState& state, Precision precision);

struct CostRow {
    std::string label;
    CostReport report;
};

/// Tab-separated table: label, float_ops, binary_ops, flops, size_mbits,
/// overhead. Header only for an empty list.
std::string cost_table(const std::vector<CostRow>& rows);

/// Per-layer breakdown of one report, tab-separated.
std::string cost_breakdown(const CostReport& report);

}  // namespace dgrl
