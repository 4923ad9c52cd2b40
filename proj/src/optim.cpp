#include "dgrl/optim.hpp"

#include <algorithm>
#include <cmath>
#include <cctype>
#include <sstream>

#include "dgrl/errors.hpp"

namespace dgrl {

std::string to_string(OptimizerKind kind) { return kind == OptimizerKind::adam ? "adam" : "sgd-momentum"; }

OptimizerKind optimizer_kind_from_string(const std::string& name) {
    if (name == "adam") return OptimizerKind::adam;
    if (name == "sgd-momentum") return OptimizerKind::sgd_momentum;
    throw ConfigError("unknown optimizer '" + name + "' (expected adam or sgd-momentum)");
}

double LrSchedule::at(int epoch) const {
    double lr = base;
    for (const auto& [e, k] : points) {
        if (e <= epoch) lr *= k;
    }
    return lr;
}

void LrSchedule::validate(int epochs) const {
    if (!(base >= 0.0) || !std::isfinite(base)) throw ConfigError("learning rate must be finite and >= 0");
    int previous = -1;
    for (const auto& [e, k] : points) {
        if (e <= previous) throw ConfigError("schedule epochs must be strictly increasing");
        if (e >= epochs) {
            throw ConfigError("schedule epoch " + std::to_string(e) + " is not below epochs=" + std::to_string(epochs));
        }
        if (!(k > 0.0) || !std::isfinite(k)) throw ConfigError("schedule multipliers must be positive");
        previous = e;
    }
}

std::string LrSchedule::points_str() const {
    std::ostringstream os;
    for (std::size_t i = 0; i < points.size(); ++i) {
        if (i) os << ',';
        os << points[i].first << ':' << points[i].second;
    }
    return os.str();
}

std::vector<std::pair<int, double>> LrSchedule::parse_points(const std::string& text) {
    std::vector<std::pair<int, double>> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item.erase(std::remove_if(item.begin(), item.end(), [](unsigned char c) { return std::isspace(c); }), item.end());
        if (item.empty()) continue;
        const auto colon = item.find(':');
        if (colon == std::string::npos) throw ConfigError("schedule entry '" + item + "' is not epoch:multiplier");
        try {
            std::size_t used = 0;
            const int e = std::stoi(item.substr(0, colon), &used);
            if (used != colon) throw std::invalid_argument("epoch");
            const std::string rest = item.substr(colon + 1);
            const double k = std::stod(rest, &used);
            if (used != rest.size()) throw std::invalid_argument("multiplier");
            out.emplace_back(e, k);
        } catch (const std::logic_error&) {
            throw ConfigError("schedule entry '" + item + "' is not epoch:multiplier");
        }
    }
    return out;
}

void Optimizer::step(const std::vector<TrainableParam>& params, double lr) {
    for (const auto& p : params) {
        if (!p.param.has_grad()) continue;
        const Tensor& g = p.param.grad();
        if (std::all_of(g.span().begin(), g.span().end(), [](float v) { return v == 0.0f; })) continue;

        Variable handle = p.param;
        Tensor& w = handle.value();
        Slot& slot = slots_[p.name];
        if (slot.m.shape() != w.shape()) {
            slot = Slot{Tensor(w.shape(), 0.0f), Tensor(), 0};
            if (config_.kind == OptimizerKind::adam) slot.v = Tensor(w.shape(), 0.0f);
        }
        ++slot.steps;
        const double wd = p.decay ? config_.weight_decay : 0.0;
        const std::size_t n = w.numel();
        if (config_.kind == OptimizerKind::sgd_momentum) {
            for (std::size_t i = 0; i < n; ++i) {
                const double grad = g[i] + wd * w[i];
                slot.m[i] = static_cast<float>(config_.momentum * slot.m[i] + grad);
                w[i] = static_cast<float>(w[i] - lr * slot.m[i]);
            }
        } else {
            const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(slot.steps));
            const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(slot.steps));
            for (std::size_t i = 0; i < n; ++i) {
                const double grad = g[i] + wd * w[i];
                const double m = config_.beta1 * slot.m[i] + (1.0 - config_.beta1) * grad;
                const double v = config_.beta2 * slot.v[i] + (1.0 - config_.beta2) * grad * grad;
                slot.m[i] = static_cast<float>(m);
                slot.v[i] = static_cast<float>(v);
                w[i] = static_cast<float>(w[i] - lr * (m / c1) / (std::sqrt(v / c2) + config_.eps));
            }
        }
        if (p.clip) {
            for (std::size_t i = 0; i < n; ++i) w[i] = std::clamp(w[i], -1.0f, 1.0f);
        }
    }
}

}  // namespace dgrl
