#include "dgrl/distill.hpp"

#include "dgrl/errors.hpp"
#include "dgrl/ops.hpp"

namespace dgrl {

namespace {

Variable descriptor_distance(Tape& tape, const Variable& teacher, const Variable& student) {
    Variable d = ops::sub(tape, ops::l2_normalize(tape, teacher), ops::l2_normalize(tape, student));
    return ops::row_norm(tape, d);
}

}  // namespace

DistillTerms distill_block_terms(Tape& tape, const Tensor& teacher_feature, const Variable& student_feature) {
    require_same_shape(teacher_feature.shape(), student_feature.shape(), "distillation features");
    const Variable teacher = Variable::constant(teacher_feature);
    return {descriptor_distance(tape, ops::spatial_max(tape, teacher), ops::spatial_max(tape, student_feature)),
            descriptor_distance(tape, ops::channel_max(tape, teacher), ops::channel_max(tape, student_feature))};
}

Variable distill_block_loss(Tape& tape, const Tensor& teacher_feature, const Variable& student_feature) {
    const DistillTerms t = distill_block_terms(tape, teacher_feature, student_feature);
    return ops::mean(tape, ops::add(tape, t.spatial, t.channel));
}

LossBreakdown total_loss(Tape& tape, const Variable& logits, std::span<const int> labels,
                         const std::vector<Tensor>& teacher_features,
                         const std::vector<Variable>& student_features, const DistillConfig& config) {
    if (config.alpha < 0.0f) throw ConfigError("distillation weight alpha must be >= 0");
    LossBreakdown r;
    r.cross_entropy = ops::cross_entropy(tape, logits, labels);
    r.total = r.cross_entropy;
    if (config.alpha == 0.0f) return r;

    std::vector<std::pair<int, int>> pairs = config.pairs;
    if (pairs.empty()) {
        if (teacher_features.size() != student_features.size()) {
            throw ConfigError("teacher has " + std::to_string(teacher_features.size()) + " blocks, student has " +
                              std::to_string(student_features.size()));
        }
        for (std::size_t i = 0; i < student_features.size(); ++i) pairs.emplace_back(i, i);
    }
    Variable distill;
    for (const auto& [ti, si] : pairs) {
        if (ti < 0 || si < 0 || ti >= static_cast<int>(teacher_features.size()) ||
            si >= static_cast<int>(student_features.size())) {
            throw ConfigError("distillation pair (" + std::to_string(ti) + ", " + std::to_string(si) +
                              ") out of range");
        }
        Variable l = distill_block_loss(tape, teacher_features[static_cast<std::size_t>(ti)],
                                        student_features[static_cast<std::size_t>(si)]);
        r.block.push_back(l);
        distill = distill.defined() ? ops::add(tape, distill, l) : l;
    }
    if (distill.defined()) r.total = ops::add(tape, r.cross_entropy, ops::scale(tape, distill, config.alpha));
    return r;
}

}  // namespace dgrl
