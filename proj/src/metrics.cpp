#include "isda/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>

namespace isda {

int PredictionInstance::area() const {
    int a = 0;
    for (auto v : mask) a += v ? 1 : 0;
    return a;
}

real mask_iou(const std::vector<std::uint8_t>& a, const std::vector<std::uint8_t>& b) {
    if (a.size() != b.size()) throw std::invalid_argument("mask_iou: size mismatch");
    long long inter = 0, uni = 0;
    for (size_t i = 0; i < a.size(); ++i) {
        const bool va = a[i] != 0, vb = b[i] != 0;
        inter += va && vb;
        uni += va || vb;
    }
    return uni == 0 ? 0.0 : static_cast<real>(inter) / static_cast<real>(uni);
}

namespace {

constexpr real kSmallFrac = 0.015, kMediumFrac = 0.10;

int size_bucket(int area, int image_area) {
    const real frac = static_cast<real>(area) / image_area;
    if (frac < kSmallFrac) return 0;
    if (frac < kMediumFrac) return 1;
    return 2;
}

struct Det {
    int image = 0;
    int index = 0;  // original per-image index, for deterministic ties
    real score = 0;
    int bucket = 0;
};

struct Gt {
    int image = 0;
    int index = 0;
    int bucket = 0;
};

// AP for one class at one IoU threshold, optionally restricted to a size
// bucket (-1 = all). Ground truth outside the bucket is ignored: detections
// matched to it drop out of the curve, as do unmatched detections whose own
// area is outside the bucket.
real class_ap(const std::vector<Det>& dets, const std::vector<Gt>& gts,
              const std::vector<std::vector<real>>& iou,  // [det][gt] within class
              real threshold, int bucket) {
    int n_gt = 0;
    for (const auto& g : gts)
        if (bucket < 0 || g.bucket == bucket) ++n_gt;
    if (n_gt == 0) return -1.0;  // undefined; caller skips

    std::vector<char> gt_used(gts.size(), 0);
    std::vector<int> flags;  // 1 TP, 0 FP per kept detection, score order
    flags.reserve(dets.size());
    for (size_t d = 0; d < dets.size(); ++d) {
        int best = -1;
        real best_iou = threshold;
        int best_ignored = -1;
        real best_ignored_iou = threshold;
        for (size_t g = 0; g < gts.size(); ++g) {
            if (gt_used[g] || gts[g].image != dets[d].image) continue;
            const real v = iou[d][g];
            const bool ignored = bucket >= 0 && gts[g].bucket != bucket;
            if (ignored) {
                if (v >= best_ignored_iou) {
                    best_ignored_iou = v;
                    best_ignored = static_cast<int>(g);
                }
            } else if (v > best_iou || (v == best_iou && best < 0)) {
                best_iou = v;
                best = static_cast<int>(g);
            }
        }
        if (best >= 0) {
            gt_used[static_cast<size_t>(best)] = 1;
            flags.push_back(1);
        } else if (best_ignored >= 0) {
            gt_used[static_cast<size_t>(best_ignored)] = 1;  // consumed, detection ignored
        } else if (bucket >= 0 && dets[d].bucket != bucket) {
            // unmatched detection outside the bucket: ignored
        } else {
            flags.push_back(0);
        }
    }

    // 101-point interpolated precision over the cumulative curve.
    std::vector<real> precision, recall;
    int tp = 0, fp = 0;
    for (int f : flags) {
        (f ? tp : fp) += 1;
        precision.push_back(static_cast<real>(tp) / (tp + fp));
        recall.push_back(static_cast<real>(tp) / n_gt);
    }
    for (int i = static_cast<int>(precision.size()) - 2; i >= 0; --i)
        precision[static_cast<size_t>(i)] =
            std::max(precision[static_cast<size_t>(i)], precision[static_cast<size_t>(i + 1)]);
    real ap = 0;
    size_t ptr = 0;
    for (int r = 0; r <= 100; ++r) {
        const real rec = r / 100.0;
        while (ptr < recall.size() && recall[ptr] < rec) ++ptr;
        ap += ptr < precision.size() ? precision[ptr] : 0.0;
    }
    return ap / 101.0;
}

}  // namespace

EvalReport evaluate(const std::vector<std::vector<PredictionInstance>>& predictions,
                    const std::vector<std::vector<GroundTruthInstance>>& ground_truth) {
    if (predictions.size() != ground_truth.size())
        throw std::invalid_argument("evaluate: image count mismatch");
    const int n_images = static_cast<int>(predictions.size());

    std::set<int> classes;
    for (const auto& per_img : ground_truth)
        for (const auto& g : per_img) classes.insert(g.class_id);

    const std::vector<real> thresholds = [] {
        std::vector<real> t;
        for (int i = 0; i < 10; ++i) t.push_back(0.5 + 0.05 * i);
        return t;
    }();

    EvalReport report;
    // mean_acc[bucket+1] accumulates (sum, count) over classes and thresholds.
    real sum_all = 0, sum50 = 0, sum75 = 0;
    int cnt_all = 0, cnt50 = 0, cnt75 = 0;
    real sum_b[3] = {0, 0, 0};
    int cnt_b[3] = {0, 0, 0};

    for (int cls : classes) {
        std::vector<Det> dets;
        std::vector<Gt> gts;
        std::vector<std::vector<std::uint8_t>> det_masks, gt_masks;
        for (int img = 0; img < n_images; ++img) {
            for (size_t i = 0; i < predictions[static_cast<size_t>(img)].size(); ++i) {
                const auto& p = predictions[static_cast<size_t>(img)][i];
                if (p.class_id != cls) continue;
                dets.push_back({img, static_cast<int>(i), p.confidence,
                                size_bucket(p.area(), p.h * p.w)});
                det_masks.push_back(p.mask);
            }
            for (size_t i = 0; i < ground_truth[static_cast<size_t>(img)].size(); ++i) {
                const auto& g = ground_truth[static_cast<size_t>(img)][i];
                if (g.class_id != cls) continue;
                gts.push_back({img, static_cast<int>(i), size_bucket(g.area(), g.h * g.w)});
                gt_masks.push_back(g.mask);
            }
        }
        // Stable confidence ordering: score desc, then image, then index.
        std::vector<size_t> order(dets.size());
        for (size_t i = 0; i < order.size(); ++i) order[i] = i;
        std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
            if (dets[a].score != dets[b].score) return dets[a].score > dets[b].score;
            if (dets[a].image != dets[b].image) return dets[a].image < dets[b].image;
            return dets[a].index < dets[b].index;
        });
        std::vector<Det> sorted_dets;
        std::vector<std::vector<std::uint8_t>> sorted_masks;
        for (size_t i : order) {
            sorted_dets.push_back(dets[i]);
            sorted_masks.push_back(std::move(det_masks[i]));
        }

        std::vector<std::vector<real>> iou(sorted_dets.size(),
                                           std::vector<real>(gts.size(), 0.0));
        for (size_t d = 0; d < sorted_dets.size(); ++d)
            for (size_t g = 0; g < gts.size(); ++g)
                if (sorted_dets[d].image == gts[g].image)
                    iou[d][g] = mask_iou(sorted_masks[d], gt_masks[g]);

        real cls_sum = 0;
        int cls_cnt = 0;
        for (real t : thresholds) {
            const real ap = class_ap(sorted_dets, gts, iou, t, -1);
            if (ap >= 0) {
                sum_all += ap;
                ++cnt_all;
                cls_sum += ap;
                ++cls_cnt;
                if (t == thresholds.front()) {
                    sum50 += ap;
                    ++cnt50;
                }
                if (std::abs(t - 0.75) < 1e-9) {
                    sum75 += ap;
                    ++cnt75;
                }
            }
            for (int b = 0; b < 3; ++b) {
                const real apb = class_ap(sorted_dets, gts, iou, t, b);
                if (apb >= 0) {
                    sum_b[b] += apb;
                    ++cnt_b[b];
                }
            }
        }
        if (cls_cnt > 0) report.per_class[cls] = cls_sum / cls_cnt;
    }

    report.ap = cnt_all ? sum_all / cnt_all : 0;
    report.ap50 = cnt50 ? sum50 / cnt50 : 0;
    report.ap75 = cnt75 ? sum75 / cnt75 : 0;
    report.ap_s = cnt_b[0] ? sum_b[0] / cnt_b[0] : 0;
    report.ap_m = cnt_b[1] ? sum_b[1] / cnt_b[1] : 0;
    report.ap_l = cnt_b[2] ? sum_b[2] / cnt_b[2] : 0;
    return report;
}

}  // namespace isda
