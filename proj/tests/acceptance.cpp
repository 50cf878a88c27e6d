// Acceptance suite: one PASS/FAIL line per criterion, exit code = number of
// failures. Criterion 5 performs the full default training run, 6 and 7 the
// short ablation grids, so expect tens of minutes wall clock.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <sstream>

#include "ap_oracle.hpp"
#include "isda/ablation.hpp"
#include "isda/checkpoint.hpp"
#include "isda/config.hpp"
#include "isda/gradcheck.hpp"
#include "isda/trainer.hpp"

using namespace isda;
namespace fs = std::filesystem;

namespace {

int g_failures = 0;

void report(int id, const std::string& name, bool pass, const std::string& detail) {
    std::cout << "criterion " << id << " [" << name << "]: " << (pass ? "PASS" : "FAIL") << " — "
              << detail << "\n"
              << std::flush;
    if (!pass) ++g_failures;
}

double seconds_since(const std::chrono::steady_clock::time_point& t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// ---- criterion 1: gradient suite -------------------------------------------

void criterion_gradients() {
    const auto t0 = std::chrono::steady_clock::now();
    auto results = run_gradcheck_suite(0);
    const double secs = seconds_since(t0);
    bool ok = secs < 300.0;
    real worst = 0;
    std::string failed;
    for (const auto& r : results) {
        worst = std::max(worst, r.max_rel_err);
        if (!r.pass) {
            ok = false;
            failed += " " + r.name;
        }
    }
    std::ostringstream d;
    d << results.size() << " checks, worst rel err " << worst << " (tol 1e-4), " << secs << "s";
    if (!failed.empty()) d << ", failed:" << failed;
    report(1, "gradient suite", ok, d.str());
}

// ---- criterion 2: hungarian vs brute force ---------------------------------

real brute_force_min(const std::vector<std::vector<real>>& cost, int n) {
    const int g = static_cast<int>(cost.size());
    real best = std::numeric_limits<real>::infinity();
    std::vector<char> used(static_cast<size_t>(n), 0);
    auto rec = [&](auto&& self, int row, real acc) -> void {
        if (row == g) {
            best = std::min(best, acc);
            return;
        }
        for (int j = 0; j < n; ++j) {
            if (used[static_cast<size_t>(j)]) continue;
            used[static_cast<size_t>(j)] = 1;
            self(self, row + 1, acc + cost[static_cast<size_t>(row)][static_cast<size_t>(j)]);
            used[static_cast<size_t>(j)] = 0;
        }
    };
    rec(rec, 0, 0.0);
    return best;
}

void criterion_hungarian() {
    const auto t0 = std::chrono::steady_clock::now();
    Rng rng(4242);
    int exact = 0;
    const int trials = 250;
    for (int trial = 0; trial < trials; ++trial) {
        const int g = static_cast<int>(rng.uniform_int(1, 6));
        const int n = static_cast<int>(rng.uniform_int(g, 8));
        std::vector<std::vector<real>> cost(static_cast<size_t>(g),
                                            std::vector<real>(static_cast<size_t>(n)));
        for (auto& row : cost)
            for (auto& v : row) v = static_cast<real>(rng.uniform_int(-1024, 1024)) / 128.0;
        Assignment a = hungarian(cost, n);
        real total = 0;
        for (const auto& [i, j] : a.pairs)
            total += cost[static_cast<size_t>(i)][static_cast<size_t>(j)];
        if (total == brute_force_min(cost, n)) ++exact;
    }
    const double secs = seconds_since(t0);
    std::ostringstream d;
    d << exact << "/" << trials << " totals exactly equal enumeration, " << secs << "s (limit 10)";
    report(2, "hungarian oracle", exact == trials && secs < 10.0, d.str());
}

// ---- criterion 3: loss invariants -------------------------------------------

GroundTruthInstance block(int h, int w, int y0, int x0, int bh, int bw, int cls) {
    GroundTruthInstance gt;
    gt.class_id = cls;
    gt.h = h;
    gt.w = w;
    gt.mask.assign(static_cast<size_t>(h) * w, 0);
    for (int y = y0; y < y0 + bh; ++y)
        for (int x = x0; x < x0 + bw; ++x) gt.mask[static_cast<size_t>(y * w + x)] = 1;
    return gt;
}

void criterion_loss_invariants() {
    Rng rng(11);
    const int h = 8, w = 8, n = 6;
    bool ok = true;
    std::ostringstream d;

    // permutation invariance over shuffled ground-truth lists
    real worst_drift = 0;
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<GroundTruthInstance> gts = {
            block(h, w, 0, 0, 3, 3, 0), block(h, w, 4, 4, 3, 3, 1), block(h, w, 0, 5, 2, 2, 2),
            block(h, w, 5, 0, 2, 2, static_cast<int>(rng.uniform_int(0, 2)))};
        Tensor logits = Tensor::zeros({n, 4});
        for (auto& v : logits.vec()) v = rng.normal();
        Tensor masks = Tensor::zeros({n, h * w});
        for (auto& v : masks.vec()) v = rng.uniform(0.01, 0.99);
        const real base = set_loss(logits, masks, gts).total.item();
        std::vector<GroundTruthInstance> shuffled;
        for (int k : {3, 1, 0, 2}) shuffled.push_back(gts[static_cast<size_t>(k)]);
        worst_drift = std::max(worst_drift,
                               std::abs(base - set_loss(logits, masks, shuffled).total.item()));
    }
    ok = ok && worst_drift <= 1e-12;
    d << "gt-shuffle drift " << worst_drift << " (tol 1e-12)";

    // G = 0 handling
    Tensor logits = Tensor::zeros({n, 4});
    for (auto& v : logits.vec()) v = rng.normal();
    Tensor masks = Tensor::full({n, h * w}, 0.5);
    LossBreakdown empty = set_loss(logits, masks, {});
    ok = ok && empty.mask_term.item() == 0.0 && std::isfinite(empty.total.item());
    d << "; empty-image mask term " << empty.mask_term.item();

    // perfect predictions sit at the minimum
    std::vector<GroundTruthInstance> gts = {block(h, w, 0, 0, 4, 4, 1)};
    Tensor perfect_logits = Tensor::full({n, 4}, -40.0);
    for (int q = 1; q < n; ++q) perfect_logits.data()[q * 4 + 3] = 40.0;
    perfect_logits.data()[0 * 4 + 1] = 40.0;
    Tensor perfect_masks = Tensor::zeros({n, h * w});
    for (int i = 0; i < h * w; ++i)
        perfect_masks.data()[i] = gts[0].mask[static_cast<size_t>(i)] ? 1.0 : 0.0;
    LossBreakdown perfect = set_loss(perfect_logits, perfect_masks, gts);
    ok = ok && perfect.mask_term.item() == 0.0 && perfect.total.item() < 1e-8;
    d << "; perfect-prediction total " << perfect.total.item();

    report(3, "loss invariants", ok, d.str());
}

// ---- criterion 4: deformable attention contracts ----------------------------

void criterion_attention() {
    Rng rng(21);
    bool ok = true;
    std::ostringstream d;

    // degenerate case == bilinear sampling, 1e-12
    Tensor value = Tensor::zeros({4, 6, 5});
    for (auto& v : value.vec()) v = rng.normal();
    Tensor ref = Tensor::zeros({9, 2});
    for (auto& v : ref.vec()) v = rng.uniform();
    Tensor agg = deform_aggregate({value}, ref, Tensor::zeros({9, 2}), Tensor::full({9, 1}, 1.0),
                                  1, 1);
    Tensor direct = bilinear_sample(value, ref);
    real worst = 0;
    for (std::int64_t i = 0; i < agg.size(); ++i)
        worst = std::max(worst, std::abs(agg.data()[i] - direct.data()[i]));
    ok = ok && worst < 1e-12;
    d << "degenerate-vs-bilinear " << worst << " (tol 1e-12)";

    // attention weights sum to one per (query, head)
    Tensor logits = Tensor::zeros({7, 2 * 4 * 4});
    for (auto& v : logits.vec()) v = rng.normal(0, 3);
    Tensor wts = softmax_blocks(logits, 16);
    real worst_sum = 0;
    for (int q = 0; q < 7; ++q)
        for (int m = 0; m < 2; ++m) {
            real s = 0;
            for (int i = 0; i < 16; ++i) s += wts.data()[q * 32 + m * 16 + i];
            worst_sum = std::max(worst_sum, std::abs(s - 1.0));
        }
    ok = ok && worst_sum < 1e-9;
    d << "; weight-sum err " << worst_sum << " (tol 1e-9)";

    // decoder permutation equivariance, exact
    ModelConfig cfg;
    cfg.base_width = 4;
    cfg.width = 8;
    cfg.heads = 2;
    cfg.points = 2;
    cfg.enc_layers = 1;
    cfg.dec_layers = 2;
    cfg.num_queries = 6;
    Tensor img = Tensor::zeros({3, 64, 64});
    for (auto& v : img.vec()) v = rng.uniform();
    IsdaModel base_model(cfg, 77), perm_model(cfg, 77);
    auto reverse_rows = [](Tensor t, int dd) {
        const int n = t.dim(0);
        for (int i = 0; i < n / 2; ++i)
            for (int j = 0; j < dd; ++j)
                std::swap(t.data()[i * dd + j], t.data()[(n - 1 - i) * dd + j]);
    };
    reverse_rows(*perm_model.params().find("transformer.query_embed"), cfg.width);
    reverse_rows(*perm_model.params().find("transformer.query_pos"), cfg.width);
    ModelOutput a = base_model.forward(img);
    ModelOutput b = perm_model.forward(img);
    bool equiv = true;
    for (int q = 0; q < cfg.num_queries; ++q)
        for (int j = 0; j < cfg.width; ++j)
            equiv = equiv && a.object_features.data()[q * cfg.width + j] ==
                                 b.object_features.data()[(cfg.num_queries - 1 - q) * cfg.width + j];
    ok = ok && equiv;
    d << "; decoder equivariance " << (equiv ? "exact" : "BROKEN");

    report(4, "deformable attention", ok, d.str());
}

// ---- criteria 5 and 8: default training run --------------------------------

void criteria_training(const RunConfig& cfg) {
    GenConfig gen;
    gen.image_size = cfg.input_size;
    auto train_scenes = generate_scenes(800, Rng::mix(cfg.seed, 1), gen);
    auto val_scenes = generate_scenes(200, Rng::mix(cfg.seed, 2), gen);

    IsdaModel model(cfg.model, cfg.seed);
    TrainOptions opts;
    opts.epochs = 30;
    opts.lr = cfg.lr;
    opts.lr_drop_epochs = cfg.lr_drop_epochs;
    opts.batch_size = cfg.batch_size;
    opts.seed = cfg.seed;
    opts.threads = cfg.threads;
    opts.early_stop_ap50 = 0.65;  // stop early once comfortably past the floor

    const auto t0 = std::chrono::steady_clock::now();
    auto history = train_model(model, train_scenes, val_scenes, opts, &std::cout);
    const double secs = seconds_since(t0);

    const EpochStats& last = history.back();
    const bool ok5 = last.ap50 >= 0.5 && secs < 45 * 60.0 &&
                     static_cast<int>(history.size()) <= 30;
    std::ostringstream d5;
    d5 << "val AP50 " << last.ap50 << " (floor 0.5) after " << history.size() << " epochs, "
       << secs << "s (limit 2700)";
    report(5, "end-to-end training", ok5, d5.str());

    // loss decreased by >= 50 percent from the first epoch (smoke property)
    const real drop = (history.front().loss - last.loss) / history.front().loss;
    std::cout << "  (training-loss drop " << drop * 100 << "% from epoch 1)\n";

    // criterion 8: confident predictions vs instance counts
    auto preds = predict_dataset(model, val_scenes, 0.5, cfg.threads);
    int within = 0;
    for (size_t i = 0; i < val_scenes.size(); ++i) {
        const int diff = static_cast<int>(preds[i].size()) -
                         static_cast<int>(val_scenes[i].instances.size());
        if (std::abs(diff) <= 1) ++within;
    }
    const real frac = static_cast<real>(within) / static_cast<real>(val_scenes.size());
    std::ostringstream d8;
    d8 << "count within +-1 on " << within << "/" << val_scenes.size() << " = " << frac * 100
       << "% (floor 80%)";
    report(8, "NMS-free duplicate behavior", frac >= 0.8, d8.str());
}

// ---- criteria 6 and 7: directional ablations --------------------------------

void criterion_position(const RunConfig& cfg) {
    auto cells = run_position_ablation(cfg, &std::cout);
    write_ablation_csv("acceptance_position.csv", cells);
    const PositionVerdict v = judge_position(cells);
    std::ostringstream d;
    d << "(MP,KP) best AP50 majority: " << (v.both_best ? "yes" : "no")
      << "; MP>baseline majority: " << (v.mp_beats_base ? "yes" : "no") << " over "
      << cfg.ablate_seeds << " seeds";
    report(6, "positional-information ablation", v.both_best && v.mp_beats_base, d.str());
}

void criterion_resolution(const RunConfig& cfg) {
    auto cells = run_resolution_ablation(cfg, &std::cout, {8, 4});
    write_ablation_csv("acceptance_resolution.csv", cells);
    const ResolutionVerdict v = judge_resolution(cells);
    std::ostringstream d;
    d << "AP(1/4)>=AP(1/8) majority: " << (v.quarter_ap_ge_eighth ? "yes" : "no")
      << "; 1/8 most large-skewed AP_L/AP_S majority: "
      << (v.eighth_best_ls_ratio ? "yes" : "no");
    report(7, "resolution ablation", v.quarter_ap_ge_eighth && v.eighth_best_ls_ratio, d.str());
}

// ---- criterion 9: infrastructure --------------------------------------------

void criterion_infrastructure(const RunConfig& cfg) {
    bool ok = true;
    std::ostringstream d;

    // checkpoint round-trip bit-exactness
    ModelConfig tiny = cfg.model;
    tiny.base_width = 4;
    tiny.width = 8;
    tiny.num_queries = 4;
    tiny.enc_layers = 1;
    tiny.dec_layers = 1;
    IsdaModel m1(tiny, 13);
    const std::string ckpt = "acceptance_ckpt.bin";
    save_checkpoint(ckpt, m1.params());
    IsdaModel m2(tiny, 14);
    load_checkpoint(ckpt, m2.params());
    bool bit_exact = true;
    for (size_t i = 0; i < m1.params().entries().size(); ++i)
        bit_exact = bit_exact &&
                    m1.params().entries()[i].second.vec() == m2.params().entries()[i].second.vec();
    ok = ok && bit_exact;
    d << "checkpoint round-trip " << (bit_exact ? "bit-exact" : "MISMATCH");
    std::remove(ckpt.c_str());

    // seeded end-to-end reproducibility of a short run
    GenConfig gen;
    gen.image_size = 32;
    gen.max_instances = 2;
    auto scenes = generate_scenes(8, 5, gen);
    TrainOptions opts;
    opts.epochs = 2;
    opts.batch_size = 4;
    opts.seed = 7;
    opts.threads = cfg.threads;
    std::string blobs[2];
    for (int r = 0; r < 2; ++r) {
        IsdaModel m(tiny, 7);
        train_model(m, scenes, {}, opts);
        const std::string path = "acceptance_repro.bin";
        save_checkpoint(path, m.params());
        std::ifstream is(path, std::ios::binary);
        blobs[r].assign(std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>());
        std::remove(path.c_str());
    }
    ok = ok && blobs[0] == blobs[1] && !blobs[0].empty();
    d << "; seeded rerun " << (blobs[0] == blobs[1] ? "byte-identical" : "DIVERGED");

    // RLE round-trip identity on 1000 random masks
    Rng rng(31);
    bool rle_ok = true;
    for (int trial = 0; trial < 1000; ++trial) {
        const int h = static_cast<int>(rng.uniform_int(1, 16));
        const int w = static_cast<int>(rng.uniform_int(1, 16));
        std::vector<std::uint8_t> mask(static_cast<size_t>(h) * w);
        for (auto& v : mask) v = rng.uniform() < 0.5 ? 1 : 0;
        rle_ok = rle_ok && rle_decode(rle_encode(mask, h, w), h, w) == mask;
    }
    ok = ok && rle_ok;
    d << "; RLE 1000 round-trips " << (rle_ok ? "identity" : "BROKEN");

    // AP evaluator vs the independent oracle
    GenConfig gen64;
    gen64.image_size = 64;
    auto escenes = generate_scenes(10, 19, gen64);
    std::vector<std::vector<GroundTruthInstance>> gts;
    std::vector<std::vector<PredictionInstance>> preds;
    for (const auto& s : escenes) {
        gts.push_back(s.instances);
        std::vector<PredictionInstance> p;
        for (const auto& g : s.instances) {
            if (rng.uniform() < 0.2) continue;
            PredictionInstance pi;
            pi.class_id = g.class_id;
            pi.confidence = rng.uniform(0.05, 1.0);
            pi.h = g.h;
            pi.w = g.w;
            pi.mask = g.mask;
            for (int k = 0; k < static_cast<int>(rng.uniform_int(0, 100)); ++k)
                pi.mask[static_cast<size_t>(rng.uniform_int(0, 64 * 64 - 1))] ^= 1;
            p.push_back(std::move(pi));
        }
        preds.push_back(std::move(p));
    }
    EvalReport mine = evaluate(preds, gts);
    EvalReport ref = ap_oracle::run(preds, gts);
    const real ap_err = std::max({std::abs(mine.ap - ref.ap), std::abs(mine.ap50 - ref.ap50),
                                  std::abs(mine.ap75 - ref.ap75), std::abs(mine.ap_s - ref.ap_s),
                                  std::abs(mine.ap_m - ref.ap_m), std::abs(mine.ap_l - ref.ap_l)});
    ok = ok && ap_err < 1e-9;
    d << "; AP-vs-oracle err " << ap_err << " (tol 1e-9)";

    report(9, "infrastructure", ok, d.str());
}

}  // namespace

int main() {
    std::cout.setf(std::ios::fixed);
    std::cout.precision(4);
    RunConfig cfg;  // spec defaults

    criterion_gradients();
    criterion_hungarian();
    criterion_loss_invariants();
    criterion_attention();
    criteria_training(cfg);
    criterion_position(cfg);
    criterion_resolution(cfg);
    criterion_infrastructure(cfg);

    std::cout << (g_failures == 0 ? "ACCEPTANCE: all criteria passed"
                                  : "ACCEPTANCE: " + std::to_string(g_failures) + " criteria failed")
              << "\n";
    return g_failures;
}
