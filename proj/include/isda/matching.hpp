#pragma once

#include <cstdint>
#include <vector>

#include "isda/tensor.hpp"

namespace isda {

struct GroundTruthInstance {
    int class_id = 0;
    int h = 0, w = 0;
    std::vector<std::uint8_t> mask;  // row-major, values 0/1

    int area() const;
    Tensor to_tensor() const;  // [H,W] constant
};

/// Result of bipartite matching: (gt_index, prediction_index) pairs plus
/// the predictions left unmatched.
struct Assignment {
    std::vector<std::pair<int, int>> pairs;
    std::vector<int> unmatched_predictions;
};

/// Soft IoU = sum(p*g) / (sum(p) + sum(g) - sum(p*g)); differentiable in
/// pred and equal to discrete IoU on binary inputs.
Tensor soft_mask_iou(const Tensor& pred, const Tensor& gt);

/// cost[i][j] = -lambda_cls * P_j(class_i) + lambda_mask * (1 - iou(m_j, m_i)).
/// class_probs [N,C+1], masks [N,H*W] probabilities at image resolution.
/// Throws when there are more ground-truth objects than predictions.
std::vector<std::vector<real>> match_cost(const Tensor& class_probs, const Tensor& masks,
                                          const std::vector<GroundTruthInstance>& gts,
                                          real lambda_cls, real lambda_mask);

/// Kuhn-Munkres on a rectangular G x N matrix (G <= N); minimizes total
/// cost with deterministic ties broken toward lower prediction indices.
Assignment hungarian(const std::vector<std::vector<real>>& cost, int num_predictions);

struct LossBreakdown {
    Tensor total, cls_term, mask_term;
    real lambda_cls = 1.0, lambda_mask = 3.0;
    Assignment assignment;
};

/// Set-prediction loss at a fixed assignment: weighted cross-entropy over
/// all predictions (unmatched rows target the no-object class at
/// `noobj_weight`) plus the mean mask-IoU loss over matched pairs.
LossBreakdown set_loss_with_assignment(const Tensor& class_logits, const Tensor& masks,
                                       const std::vector<GroundTruthInstance>& gts,
                                       const Assignment& assignment, real lambda_cls,
                                       real lambda_mask, real noobj_weight);

/// Matches via hungarian(match_cost(...)) first; the matching itself is
/// treated as a non-differentiable oracle.
LossBreakdown set_loss(const Tensor& class_logits, const Tensor& masks,
                       const std::vector<GroundTruthInstance>& gts, real lambda_cls = 1.0,
                       real lambda_mask = 3.0, real noobj_weight = 0.1);

}  // namespace isda
