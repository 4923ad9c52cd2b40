#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dgrl/network.hpp"

namespace dgrl {

enum class SelectionStrategy { random, blockwise, global };
std::string to_string(SelectionStrategy s);
SelectionStrategy selection_strategy_from_string(const std::string& name);

struct SelectionPolicy {
    SelectionStrategy strategy = SelectionStrategy::global;
    double epsilon = 0.1;
    std::uint64_t seed = 0;
};

struct BranchSelection {
    int block = 0;
    int branch = 0;
    int channels = 0;       // C'
    std::vector<int> kept;  // ascending original channel indices
};

struct SelectionReport {
    std::string strategy;
    double epsilon = 0.0;
    int budget = 0;  // floor(epsilon * sum C')
    int total_kept = 0;
    std::vector<BranchSelection> branches;
    std::vector<std::string> warnings;

    /// Tab-separated per-branch overhead table.
    std::string table() const;
};

void to_json(nlohmann::json& j, const SelectionReport& r);
void from_json(const nlohmann::json& j, SelectionReport& r);

/// floor(epsilon * total), robust to representation error in epsilon.
int channel_budget(double epsilon, int total);

/// Keeps squeeze channels by |omega| and moves branches to the selected
/// state: discarded channels leave gamma*, omega and T. Global keeps the
/// budget's worth network-wide (ties by block, branch, channel); blockwise
/// keeps floor(C' * epsilon) per branch; random draws that many uniformly.
/// Branches already selected choose among their surviving channels, so a
/// repeated call with the same policy changes nothing.
SelectionReport select_channels(StudentNet& net, const SelectionPolicy& policy);

struct SparsifyResult {
    std::size_t zeroed = 0;
    std::vector<std::string> warnings;
};

/// Zeroes T entries with |T| < threshold (default 0.01 * max|T| per
/// branch) and freezes T. Branches must be selected or already sparsified.
SparsifyResult sparsify_interaction(StudentNet& net, std::optional<float> keep_threshold = std::nullopt);

/// Shortcut parameter bits / binarized main-branch parameter bits.
double overhead_fraction(const StudentNet& net);

}  // namespace dgrl
