#pragma once

#include <span>
#include <vector>

#include "dgrl/autograd.hpp"

namespace dgrl {

struct DistillConfig {
    float alpha = 0.1f;
    /// (teacher block, student block) pairs; empty pairs every block with
    /// its counterpart.
    std::vector<std::pair<int, int>> pairs;
};

/// Block-wise feature loss, averaged over the batch:
///   |n(SP(O)) - n(SP(S))| + |n(CP(O)) - n(CP(S))|
/// with SP the spatial max (a C-vector), CP the channel max (an HxW map)
/// and n the per-sample L2 normalization. The teacher side is a constant.
Variable distill_block_loss(Tape& tape, const Tensor& teacher_feature, const Variable& student_feature);

/// The two per-sample distances, each (N, 1, 1, 1) and at most 2.
struct DistillTerms {
    Variable spatial;  // over the spatial-max C-vectors
    Variable channel;  // over the channel-max HxW maps
};
DistillTerms distill_block_terms(Tape& tape, const Tensor& teacher_feature, const Variable& student_feature);

struct LossBreakdown {
    Variable total;
    Variable cross_entropy;
    std::vector<Variable> block;  // one per pair
};

/// cross_entropy(logits, labels) + alpha * sum of block losses. With
/// alpha == 0 no block losses are computed.
LossBreakdown total_loss(Tape& tape, const Variable& logits, std::span<const int> labels,
                         const std::vector<Tensor>& teacher_features,
                         const std::vector<Variable>& student_features, const DistillConfig& config);

}  // namespace dgrl
