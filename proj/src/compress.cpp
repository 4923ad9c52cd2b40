#include "dgrl/compress.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>
#include <tuple>

#include "dgrl/cost_model.hpp"
#include "dgrl/errors.hpp"

namespace dgrl {

std::string to_string(SelectionStrategy s) {
    switch (s) {
        case SelectionStrategy::random: return "random";
        case SelectionStrategy::blockwise: return "blockwise";
        case SelectionStrategy::global: return "global";
    }
    return "global";
}

SelectionStrategy selection_strategy_from_string(const std::string& name) {
    if (name == "random") return SelectionStrategy::random;
    if (name == "blockwise") return SelectionStrategy::blockwise;
    if (name == "global") return SelectionStrategy::global;
    throw ConfigError("unknown selection strategy '" + name + "'");
}

int channel_budget(double epsilon, int total) {
    return static_cast<int>(std::floor(epsilon * total + 1e-9));
}

std::string SelectionReport::table() const {
    std::ostringstream os;
    os << "block\tbranch\tchannels\tkept\tkept_fraction\n";
    for (const auto& b : branches) {
        const double frac = b.channels == 0 ? 0.0 : static_cast<double>(b.kept.size()) / b.channels;
        os << b.block << '\t' << b.branch << '\t' << b.channels << '\t' << b.kept.size() << '\t' << frac << '\n';
    }
    return os.str();
}

void to_json(nlohmann::json& j, const SelectionReport& r) {
    nlohmann::json branches = nlohmann::json::array();
    for (const auto& b : r.branches) {
        branches.push_back({{"block", b.block}, {"branch", b.branch}, {"channels", b.channels}, {"kept", b.kept}});
    }
    j = {{"strategy", r.strategy}, {"epsilon", r.epsilon},  {"budget", r.budget},
         {"total_kept", r.total_kept}, {"branches", branches}, {"warnings", r.warnings}};
}

void from_json(const nlohmann::json& j, SelectionReport& r) {
    r = SelectionReport{};
    r.strategy = j.at("strategy").get<std::string>();
    r.epsilon = j.at("epsilon").get<double>();
    r.budget = j.at("budget").get<int>();
    r.total_kept = j.at("total_kept").get<int>();
    for (const auto& b : j.at("branches")) {
        r.branches.push_back({b.at("block").get<int>(), b.at("branch").get<int>(), b.at("channels").get<int>(),
                              b.at("kept").get<std::vector<int>>()});
    }
    r.warnings = j.value("warnings", std::vector<std::string>{});
}

namespace {

struct Candidate {
    float magnitude;
    int block;
    int branch;
    int channel;   // original index
    int position;  // row in the branch's current arrays
};

Tensor take_rows(const Tensor& t, const std::vector<int>& rows) {
    const Shape s = t.shape();
    const std::size_t len = s.sample_size();
    Tensor out(Shape{std::max<int>(static_cast<int>(rows.size()), 1), s.c, s.h, s.w}, 0.0f);
    for (std::size_t r = 0; r < rows.size(); ++r) {
        std::copy_n(t.data() + static_cast<std::size_t>(rows[r]) * len, len, out.data() + r * len);
    }
    return out;
}

Tensor take_channels(const Tensor& t, const std::vector<int>& cols) {
    Tensor out(Shape{1, std::max<int>(static_cast<int>(cols.size()), 1), 1, 1}, 0.0f);
    for (std::size_t i = 0; i < cols.size(); ++i) out[i] = t[static_cast<std::size_t>(cols[i])];
    return out;
}

/// Restricts a branch to the rows at `positions` (ascending) of its current
/// arrays.
void apply_selection(ShortcutBranch& br, const std::vector<int>& positions) {
    std::vector<int> kept;
    for (int p : positions) kept.push_back(br.selected[static_cast<std::size_t>(p)]);
    if (br.state == ShortcutState::selected && kept == br.selected) return;

    Tensor gamma = take_rows(br.gamma_star.value(), positions);
    Tensor omega = take_channels(br.omega.value(), positions);
    Tensor mix;
    if (br.state == ShortcutState::selected) {
        const int cols = br.c_out;
        mix = Tensor(Shape{1, 1, std::max<int>(static_cast<int>(positions.size()), 1), cols}, 0.0f);
        for (std::size_t r = 0; r < positions.size(); ++r) {
            std::copy_n(br.mix.value().data() + static_cast<std::size_t>(positions[r]) * cols, cols,
                        mix.data() + r * cols);
        }
    }
    const Variable t_sc = br.t_sc;
    const bool was_dense = br.state == ShortcutState::dense;
    br.set_layout(ShortcutState::selected, kept);
    br.t_sc = t_sc;
    br.gamma_star.value() = std::move(gamma);
    br.omega.value() = std::move(omega);
    if (!was_dense) br.mix.value() = std::move(mix);
}

}  // namespace

SelectionReport select_channels(StudentNet& net, const SelectionPolicy& policy) {
    if (!(policy.epsilon >= 0.0 && policy.epsilon <= 1.0)) {
        throw ConfigError("selection epsilon must lie in [0, 1], got " + std::to_string(policy.epsilon));
    }
    SelectionReport report;
    report.strategy = to_string(policy.strategy);
    report.epsilon = policy.epsilon;

    std::vector<ShortcutBranch*> branches;
    std::vector<std::pair<int, int>> coords;
    int total_channels = 0;
    for (std::size_t i = 0; i < net.blocks().size(); ++i) {
        auto& blk = net.blocks()[i];
        for (std::size_t k = 0; k < blk.shortcuts.size(); ++k) {
            ShortcutBranch& br = blk.shortcuts[k];
            if (br.state == ShortcutState::sparsified) {
                throw UsageError("block " + blk.spec.name + " shortcut " + std::to_string(k) +
                                 " is already sparsified; selection must precede sparsification");
            }
            branches.push_back(&br);
            coords.emplace_back(static_cast<int>(i), static_cast<int>(k));
            total_channels += br.c_out;
        }
    }
    report.budget = channel_budget(policy.epsilon, total_channels);

    std::vector<std::vector<int>> keep(branches.size());
    if (policy.strategy == SelectionStrategy::global) {
        std::vector<Candidate> all;
        for (std::size_t b = 0; b < branches.size(); ++b) {
            const ShortcutBranch& br = *branches[b];
            for (int p = 0; p < br.squeeze_channels(); ++p) {
                all.push_back({std::fabs(br.omega.value()[static_cast<std::size_t>(p)]), coords[b].first,
                               coords[b].second, br.selected[static_cast<std::size_t>(p)], p});
            }
        }
        std::sort(all.begin(), all.end(), [](const Candidate& a, const Candidate& b) {
            return std::tie(b.magnitude, a.block, a.branch, a.channel) <
                   std::tie(a.magnitude, b.block, b.branch, b.channel);
        });
        const std::size_t n = std::min<std::size_t>(all.size(), static_cast<std::size_t>(report.budget));
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t b = 0; b < branches.size(); ++b) {
                if (coords[b] == std::make_pair(all[i].block, all[i].branch)) keep[b].push_back(all[i].position);
            }
        }
    } else {
        std::mt19937_64 rng(policy.seed);
        for (std::size_t b = 0; b < branches.size(); ++b) {
            const ShortcutBranch& br = *branches[b];
            const int quota = std::min(channel_budget(policy.epsilon, br.c_out), br.squeeze_channels());
            std::vector<int> order(static_cast<std::size_t>(br.squeeze_channels()));
            for (std::size_t p = 0; p < order.size(); ++p) order[p] = static_cast<int>(p);
            if (policy.strategy == SelectionStrategy::random) {
                std::shuffle(order.begin(), order.end(), rng);
            } else {
                std::stable_sort(order.begin(), order.end(), [&](int a, int c) {
                    return std::fabs(br.omega.value()[static_cast<std::size_t>(a)]) >
                           std::fabs(br.omega.value()[static_cast<std::size_t>(c)]);
                });
            }
            keep[b].assign(order.begin(), order.begin() + quota);
        }
    }

    for (std::size_t b = 0; b < branches.size(); ++b) {
        std::sort(keep[b].begin(), keep[b].end());
        apply_selection(*branches[b], keep[b]);
        report.branches.push_back({coords[b].first, coords[b].second, branches[b]->c_out, branches[b]->selected});
        report.total_kept += branches[b]->squeeze_channels();
        if (branches[b]->empty()) {
            report.warnings.push_back("block " + std::to_string(coords[b].first) + " shortcut " +
                                      std::to_string(coords[b].second) + " kept no channels");
        }
    }
    if (policy.epsilon == 0.0) report.warnings.push_back("epsilon is 0: every shortcut branch is now zero");
    if (report.total_kept > report.budget && policy.strategy == SelectionStrategy::global) {
        throw std::logic_error("global selection exceeded its budget");
    }
    return report;
}

SparsifyResult sparsify_interaction(StudentNet& net, std::optional<float> keep_threshold) {
    SparsifyResult result;
    for (std::size_t i = 0; i < net.blocks().size(); ++i) {
        auto& blk = net.blocks()[i];
        for (std::size_t k = 0; k < blk.shortcuts.size(); ++k) {
            ShortcutBranch& br = blk.shortcuts[k];
            const std::string where = "block " + blk.spec.name + " shortcut " + std::to_string(k);
            if (br.state == ShortcutState::dense) throw UsageError(where + " must be selected before sparsification");
            Tensor& t = br.mix.value();
            float threshold = 0.0f;
            if (keep_threshold) {
                threshold = *keep_threshold;
            } else {
                float peak = 0.0f;
                for (float v : t.span()) peak = std::max(peak, std::fabs(v));
                threshold = 0.01f * peak;
            }
            for (float& v : t.span()) {
                if (v != 0.0f && std::fabs(v) < threshold) {
                    v = 0.0f;
                    ++result.zeroed;
                }
            }
            br.state = ShortcutState::sparsified;
            if (!br.empty() && br.mix_nonzeros() == 0) result.warnings.push_back(where + " has an all-zero T");
        }
    }
    return result;
}

double overhead_fraction(const StudentNet& net) {
    return cost_of(net.spec(), CompressionState::of(net), Precision::binary).overhead_fraction();
}

}  // namespace dgrl
