#pragma once

#include <map>
#include <vector>

#include "isda/matching.hpp"

namespace isda {

struct PredictionInstance {
    int class_id = 0;
    real confidence = 0.0;
    int h = 0, w = 0;
    std::vector<std::uint8_t> mask;  // binary, image resolution

    int area() const;
};

struct EvalReport {
    real ap = 0, ap50 = 0, ap75 = 0;
    real ap_s = 0, ap_m = 0, ap_l = 0;
    std::map<int, real> per_class;
};

/// Mask AP over IoU thresholds 0.50:0.05:0.95 with greedy confidence-ordered
/// matching and 101-point interpolated precision, per class, averaged over
/// classes that appear in the ground truth. Size buckets use the fraction of
/// image area: S < 1.5%, M < 10%, L otherwise.
EvalReport evaluate(const std::vector<std::vector<PredictionInstance>>& predictions,
                    const std::vector<std::vector<GroundTruthInstance>>& ground_truth);

real mask_iou(const std::vector<std::uint8_t>& a, const std::vector<std::uint8_t>& b);

}  // namespace isda
