// Test-only reference implementation of the mask-AP protocol, structured
// around per-detection scans and a direct definition of the 101-point
// integral. Shares no code with src/metrics.cpp.
#pragma once

#include <algorithm>
#include <set>
#include <vector>

#include "isda/metrics.hpp"

namespace ap_oracle {

using isda::EvalReport;
using isda::GroundTruthInstance;
using isda::PredictionInstance;
using isda::real;

struct Item {
    int image, cls, area;
    real score;
    const std::vector<std::uint8_t>* mask;
    int hw;
};

inline real iou(const std::vector<std::uint8_t>& a, const std::vector<std::uint8_t>& b) {
    int i = 0, u = 0;
    for (size_t k = 0; k < a.size(); ++k) {
        if (a[k] && b[k]) ++i;
        if (a[k] || b[k]) ++u;
    }
    return u ? static_cast<real>(i) / u : 0.0;
}

inline int bucket_of(int area, int hw) {
    const real f = static_cast<real>(area) / hw;
    return f < 0.015 ? 0 : (f < 0.10 ? 1 : 2);
}

inline real ap_one(std::vector<Item> dets, const std::vector<Item>& gts, real thr, int bucket) {
    std::stable_sort(dets.begin(), dets.end(), [](const Item& a, const Item& b) {
        if (a.score != b.score) return a.score > b.score;
        return a.image < b.image;
    });
    int relevant = 0;
    for (const auto& g : gts)
        if (bucket < 0 || bucket_of(g.area, g.hw) == bucket) ++relevant;
    if (relevant == 0) return -1;

    std::vector<bool> taken(gts.size(), false);
    std::vector<char> outcome;  // 'T' or 'F'
    for (const auto& d : dets) {
        int pick = -1;
        real pick_iou = -1;
        bool pick_ignored = false;
        for (size_t g = 0; g < gts.size(); ++g) {
            if (taken[g] || gts[g].image != d.image) continue;
            const real v = iou(*d.mask, *gts[g].mask);
            if (v < thr) continue;
            const bool ignored = bucket >= 0 && bucket_of(gts[g].area, gts[g].hw) != bucket;
            if (pick >= 0 && !pick_ignored && ignored) continue;
            if (pick >= 0 && pick_ignored == ignored && v <= pick_iou) continue;
            if (pick >= 0 && pick_ignored && !ignored) {
                // a real match always displaces an ignored one
            }
            pick = static_cast<int>(g);
            pick_iou = v;
            pick_ignored = ignored;
        }
        if (pick >= 0 && !pick_ignored) {
            taken[static_cast<size_t>(pick)] = true;
            outcome.push_back('T');
        } else if (pick >= 0) {
            taken[static_cast<size_t>(pick)] = true;  // detection ignored
        } else if (bucket >= 0 && bucket_of(d.area, d.hw) != bucket) {
            // unmatched detection outside the bucket: ignored
        } else {
            outcome.push_back('F');
        }
    }

    real ap = 0;
    for (int r = 0; r <= 100; ++r) {
        const real target = r / 100.0;
        real best_p = 0;
        int tp = 0, n = 0;
        for (char c : outcome) {
            ++n;
            if (c == 'T') ++tp;
            if (static_cast<real>(tp) / relevant >= target)
                best_p = std::max(best_p, static_cast<real>(tp) / n);
        }
        ap += best_p;
    }
    return ap / 101.0;
}

inline EvalReport run(const std::vector<std::vector<PredictionInstance>>& preds,
                      const std::vector<std::vector<GroundTruthInstance>>& gts) {
    std::set<int> classes;
    for (const auto& img : gts)
        for (const auto& g : img) classes.insert(g.class_id);
    EvalReport rep;
    real acc[6] = {0, 0, 0, 0, 0, 0};
    int cnt[6] = {0, 0, 0, 0, 0, 0};
    for (int cls : classes) {
        std::vector<Item> d, g;
        for (size_t img = 0; img < preds.size(); ++img) {
            for (const auto& p : preds[img])
                if (p.class_id == cls)
                    d.push_back({static_cast<int>(img), cls, p.area(), p.confidence, &p.mask,
                                 p.h * p.w});
            for (const auto& q : gts[img])
                if (q.class_id == cls)
                    g.push_back({static_cast<int>(img), cls, q.area(), 0.0, &q.mask, q.h * q.w});
        }
        for (int t = 0; t < 10; ++t) {
            const real thr = 0.5 + 0.05 * t;
            const real v = ap_one(d, g, thr, -1);
            if (v >= 0) {
                acc[0] += v;
                ++cnt[0];
                if (t == 0) {
                    acc[1] += v;
                    ++cnt[1];
                }
                if (t == 5) {
                    acc[2] += v;
                    ++cnt[2];
                }
            }
            for (int b = 0; b < 3; ++b) {
                const real vb = ap_one(d, g, thr, b);
                if (vb >= 0) {
                    acc[3 + b] += vb;
                    ++cnt[3 + b];
                }
            }
        }
    }
    rep.ap = cnt[0] ? acc[0] / cnt[0] : 0;
    rep.ap50 = cnt[1] ? acc[1] / cnt[1] : 0;
    rep.ap75 = cnt[2] ? acc[2] / cnt[2] : 0;
    rep.ap_s = cnt[3] ? acc[3] / cnt[3] : 0;
    rep.ap_m = cnt[4] ? acc[4] / cnt[4] : 0;
    rep.ap_l = cnt[5] ? acc[5] / cnt[5] : 0;
    return rep;
}

}  // namespace ap_oracle
