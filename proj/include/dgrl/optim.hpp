#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "dgrl/autograd.hpp"

namespace dgrl {

enum class OptimizerKind { sgd_momentum, adam };
std::string to_string(OptimizerKind kind);
OptimizerKind optimizer_kind_from_string(const std::string& name);

struct OptimizerConfig {
    OptimizerKind kind = OptimizerKind::adam;
    double momentum = 0.9;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;  // applied only to params with decay set
};

struct TrainableParam {
    std::string name;
    Variable param;
    bool clip = false;   // shadow weight, kept in [-1, 1]
    bool decay = false;
};

/// Step-wise learning rate: base * product of multipliers at points <= epoch.
struct LrSchedule {
    double base = 0.01;
    std::vector<std::pair<int, double>> points;

    double at(int epoch) const;
    /// Points strictly increasing, within [0, epochs), positive multipliers.
    void validate(int epochs) const;

    /// "120:0.1,200:0.1"; empty string for no points.
    std::string points_str() const;
    static std::vector<std::pair<int, double>> parse_points(const std::string& text);
};

/// Per-parameter state keyed by name. A parameter without a gradient, or
/// with an all-zero one, is skipped entirely: value and state unchanged.
class Optimizer {
public:
    struct Slot {
        Tensor m;  // first moment / velocity
        Tensor v;  // second moment (adam only)
        std::int64_t steps = 0;
    };

    explicit Optimizer(OptimizerConfig config = {}) : config_(config) {}

    const OptimizerConfig& config() const { return config_; }
    void step(const std::vector<TrainableParam>& params, double lr);
    void reset() { slots_.clear(); }

    std::map<std::string, Slot>& slots() { return slots_; }
    const std::map<std::string, Slot>& slots() const { return slots_; }

private:
    OptimizerConfig config_;
    std::map<std::string, Slot> slots_;
};

}  // namespace dgrl
