#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "dgrl/tensor.hpp"

namespace dgrl {

/// Shared handle to a value plus its gradient accumulator. Copies alias the
/// same storage, so a parameter held by a network and captured by a tape
/// record are one object.
class Variable {
public:
    Variable() = default;

    static Variable parameter(Tensor value) { return Variable(std::move(value), true); }
    static Variable constant(Tensor value) { return Variable(std::move(value), false); }

    bool defined() const { return node_ != nullptr; }
    const Tensor& value() const { return node_->value; }
    Tensor& value() { return node_->value; }
    const Shape& shape() const { return node_->value.shape(); }

    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool on) { node_->requires_grad = on; }

    bool has_grad() const { return !node_->grad.empty(); }
    const Tensor& grad() const { return node_->grad; }
    /// Gradient buffer, allocated (zero) on first access. Handle constness
    /// does not cover the shared accumulator.
    Tensor& grad_buffer() const;
    void zero_grad() const { node_->grad = Tensor(); }

    bool same_node(const Variable& other) const { return node_ == other.node_; }

private:
    struct Node {
        Tensor value;
        Tensor grad;
        bool requires_grad = false;
    };

    Variable(Tensor value, bool requires_grad);

    std::shared_ptr<Node> node_;
};

/// Records differentiable operations in execution order and replays their
/// backward rules in reverse. A tape belongs to one thread; build a fresh
/// one per forward pass.
class Tape {
public:
    using BackwardFn = std::function<void()>;

    Tape() = default;
    /// A tape that records nothing (inference).
    static Tape inference() {
        Tape t;
        t.enabled_ = false;
        return t;
    }

    bool enabled() const { return enabled_; }

    /// Whether an op over `inputs` must be recorded.
    bool tracks(std::initializer_list<const Variable*> inputs) const;

    void record(std::string op, BackwardFn backward);

    /// Seeds d(loss)/d(loss) = 1 and runs every record once, newest first.
    void backward(const Variable& loss);

    std::size_t size() const { return records_.size(); }
    const std::string& op_name(std::size_t i) const { return records_[i].op; }

    /// Number of l2_normalize calls that hit the zero-norm guard.
    std::size_t zero_norm_events() const { return zero_norm_events_; }
    void note_zero_norm() { ++zero_norm_events_; }

private:
    struct Record {
        std::string op;
        BackwardFn backward;
    };
    std::vector<Record> records_;
    bool enabled_ = true;
    bool consumed_ = false;
    std::size_t zero_norm_events_ = 0;
};

/// Fresh non-leaf result of an op: requires_grad mirrors whether it was taped.
Variable make_result(Tensor value, bool tracked);

}  // namespace dgrl
