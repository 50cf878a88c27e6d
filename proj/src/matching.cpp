#include "isda/matching.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "isda/ops.hpp"

namespace isda {

int GroundTruthInstance::area() const {
    int a = 0;
    for (auto v : mask) a += v ? 1 : 0;
    return a;
}

Tensor GroundTruthInstance::to_tensor() const {
    std::vector<real> data(mask.size());
    for (size_t i = 0; i < mask.size(); ++i) data[i] = mask[i] ? 1.0 : 0.0;
    return Tensor::from_data({h, w}, std::move(data));
}

Tensor soft_mask_iou(const Tensor& pred, const Tensor& gt) {
    if (pred.shape() != gt.shape()) throw std::invalid_argument("soft_mask_iou: shape mismatch");
    Tensor inter = sum(mul(pred, gt));
    Tensor uni = sub(add(sum(pred), sum(gt)), inter);
    return div(inter, uni);
}

std::vector<std::vector<real>> match_cost(const Tensor& class_probs, const Tensor& masks,
                                          const std::vector<GroundTruthInstance>& gts,
                                          real lambda_cls, real lambda_mask) {
    const int n = class_probs.dim(0);
    const int g = static_cast<int>(gts.size());
    if (g > n) throw std::invalid_argument("match_cost: more objects than queries");
    if (masks.dim(0) != n) throw std::invalid_argument("match_cost: prediction count mismatch");

    NoGradGuard ng;
    std::vector<std::vector<real>> cost(static_cast<size_t>(g), std::vector<real>(static_cast<size_t>(n)));
    const int classes = class_probs.dim(1);
    const std::int64_t hw = masks.dim(1);
    const real* pm = masks.data();
    const real* pc = class_probs.data();
    for (int i = 0; i < g; ++i) {
        const auto& gt = gts[static_cast<size_t>(i)];
        if (static_cast<std::int64_t>(gt.mask.size()) != hw)
            throw std::invalid_argument("match_cost: mask resolution mismatch");
        if (gt.class_id < 0 || gt.class_id >= classes - 1)
            throw std::invalid_argument("match_cost: class id out of range");
        real gt_sum = 0;
        for (auto v : gt.mask) gt_sum += v ? 1.0 : 0.0;
        for (int j = 0; j < n; ++j) {
            const real* row = pm + static_cast<std::int64_t>(j) * hw;
            real inter = 0, psum = 0;
            for (std::int64_t k = 0; k < hw; ++k) {
                psum += row[k];
                if (gt.mask[static_cast<size_t>(k)]) inter += row[k];
            }
            const real iou = inter / (psum + gt_sum - inter);
            cost[static_cast<size_t>(i)][static_cast<size_t>(j)] =
                -lambda_cls * pc[static_cast<std::int64_t>(j) * classes + gt.class_id] +
                lambda_mask * (1.0 - iou);
        }
    }
    return cost;
}

Assignment hungarian(const std::vector<std::vector<real>>& cost, int num_predictions) {
    const int g = static_cast<int>(cost.size());
    const int n = num_predictions;
    if (g > n) throw std::invalid_argument("hungarian: more rows than columns");
    for (const auto& row : cost) {
        if (static_cast<int>(row.size()) != n)
            throw std::invalid_argument("hungarian: ragged cost matrix");
        for (real v : row)
            if (!std::isfinite(v)) throw std::invalid_argument("hungarian: non-finite cost");
    }

    Assignment out;
    if (g == 0) {
        for (int j = 0; j < n; ++j) out.unmatched_predictions.push_back(j);
        return out;
    }

    // Shortest augmenting path with potentials (1-based arrays); the strict
    // minimum test prefers the lowest column index on ties.
    const real inf = std::numeric_limits<real>::infinity();
    std::vector<real> u(static_cast<size_t>(g) + 1, 0.0), v(static_cast<size_t>(n) + 1, 0.0);
    std::vector<int> p(static_cast<size_t>(n) + 1, 0), way(static_cast<size_t>(n) + 1, 0);
    for (int i = 1; i <= g; ++i) {
        p[0] = i;
        int j0 = 0;
        std::vector<real> minv(static_cast<size_t>(n) + 1, inf);
        std::vector<char> used(static_cast<size_t>(n) + 1, 0);
        do {
            used[static_cast<size_t>(j0)] = 1;
            const int i0 = p[static_cast<size_t>(j0)];
            real delta = inf;
            int j1 = -1;
            for (int j = 1; j <= n; ++j) {
                if (used[static_cast<size_t>(j)]) continue;
                const real cur = cost[static_cast<size_t>(i0 - 1)][static_cast<size_t>(j - 1)] -
                                 u[static_cast<size_t>(i0)] - v[static_cast<size_t>(j)];
                if (cur < minv[static_cast<size_t>(j)]) {
                    minv[static_cast<size_t>(j)] = cur;
                    way[static_cast<size_t>(j)] = j0;
                }
                if (minv[static_cast<size_t>(j)] < delta) {
                    delta = minv[static_cast<size_t>(j)];
                    j1 = j;
                }
            }
            for (int j = 0; j <= n; ++j) {
                if (used[static_cast<size_t>(j)]) {
                    u[static_cast<size_t>(p[static_cast<size_t>(j)])] += delta;
                    v[static_cast<size_t>(j)] -= delta;
                } else {
                    minv[static_cast<size_t>(j)] -= delta;
                }
            }
            j0 = j1;
        } while (p[static_cast<size_t>(j0)] != 0);
        do {
            const int j1 = way[static_cast<size_t>(j0)];
            p[static_cast<size_t>(j0)] = p[static_cast<size_t>(j1)];
            j0 = j1;
        } while (j0);
    }

    std::vector<int> row_to_col(static_cast<size_t>(g), -1);
    for (int j = 1; j <= n; ++j)
        if (p[static_cast<size_t>(j)] > 0) row_to_col[static_cast<size_t>(p[static_cast<size_t>(j)] - 1)] = j - 1;
    std::vector<char> matched(static_cast<size_t>(n), 0);
    for (int i = 0; i < g; ++i) {
        out.pairs.emplace_back(i, row_to_col[static_cast<size_t>(i)]);
        matched[static_cast<size_t>(row_to_col[static_cast<size_t>(i)])] = 1;
    }
    for (int j = 0; j < n; ++j)
        if (!matched[static_cast<size_t>(j)]) out.unmatched_predictions.push_back(j);
    return out;
}

LossBreakdown set_loss_with_assignment(const Tensor& class_logits, const Tensor& masks,
                                       const std::vector<GroundTruthInstance>& gts,
                                       const Assignment& assignment, real lambda_cls,
                                       real lambda_mask, real noobj_weight) {
    const int n = class_logits.dim(0);
    const int classes = class_logits.dim(1);
    const int g = static_cast<int>(gts.size());
    if (g > n) throw std::invalid_argument("set_loss: more objects than queries");

    std::vector<int> targets(static_cast<size_t>(n), classes - 1);
    std::vector<real> weights(static_cast<size_t>(n), noobj_weight);
    for (const auto& [gi, pj] : assignment.pairs) {
        targets[static_cast<size_t>(pj)] = gts[static_cast<size_t>(gi)].class_id;
        weights[static_cast<size_t>(pj)] = 1.0;
    }

    LossBreakdown lb;
    lb.lambda_cls = lambda_cls;
    lb.lambda_mask = lambda_mask;
    lb.assignment = assignment;
    lb.cls_term = cross_entropy_rows(class_logits, targets, weights);

    if (g == 0) {
        lb.mask_term = Tensor::scalar(0.0);
    } else {
        Tensor acc;
        for (const auto& [gi, pj] : assignment.pairs) {
            const auto& gt = gts[static_cast<size_t>(gi)];
            Tensor pred = reshape(slice_rows(masks, pj, 1), {gt.h, gt.w});
            Tensor one_minus = sub(Tensor::scalar(1.0), soft_mask_iou(pred, gt.to_tensor()));
            acc = acc.defined() ? add(acc, one_minus) : one_minus;
        }
        lb.mask_term = scale(acc, 1.0 / static_cast<real>(g));
    }
    lb.total = add(scale(lb.cls_term, lambda_cls), scale(lb.mask_term, lambda_mask));
    return lb;
}

LossBreakdown set_loss(const Tensor& class_logits, const Tensor& masks,
                       const std::vector<GroundTruthInstance>& gts, real lambda_cls,
                       real lambda_mask, real noobj_weight) {
    Tensor probs;
    {
        NoGradGuard ng;
        probs = softmax_rows(class_logits);
    }
    const auto cost = match_cost(probs, masks, gts, lambda_cls, lambda_mask);
    const Assignment assignment = hungarian(cost, class_logits.dim(0));
    return set_loss_with_assignment(class_logits, masks, gts, assignment, lambda_cls,
                                    lambda_mask, noobj_weight);
}

}  // namespace isda
