#include "dgrl/autograd.hpp"

#include "dgrl/errors.hpp"

namespace dgrl {

Variable::Variable(Tensor value, bool requires_grad) : node_(std::make_shared<Node>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
}

Tensor& Variable::grad_buffer() const {
    if (node_->grad.empty()) node_->grad = Tensor(node_->value.shape(), 0.0f);
    return node_->grad;
}

bool Tape::tracks(std::initializer_list<const Variable*> inputs) const {
    if (!enabled_) return false;
    for (const Variable* v : inputs) {
        if (v != nullptr && v->defined() && v->requires_grad()) return true;
    }
    return false;
}

void Tape::record(std::string op, BackwardFn backward) {
    if (!enabled_) return;
    records_.push_back(Record{std::move(op), std::move(backward)});
}

void Tape::backward(const Variable& loss) {
    if (!loss.defined() || loss.value().numel() != 1) {
        throw UsageError("backward() requires a scalar loss, got shape " +
                         (loss.defined() ? loss.shape().str() : std::string("<undefined>")));
    }
    if (consumed_) throw UsageError("backward() already ran on this tape");
    consumed_ = true;
    if (!loss.requires_grad()) return;
    loss.grad_buffer()[0] += 1.0f;
    for (auto it = records_.rbegin(); it != records_.rend(); ++it) it->backward();
    records_.clear();
}

Variable make_result(Tensor value, bool tracked) {
    return tracked ? Variable::parameter(std::move(value)) : Variable::constant(std::move(value));
}

}  // namespace dgrl
