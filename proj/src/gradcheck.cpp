#include "isda/gradcheck.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <thread>

#include "isda/dataset.hpp"
#include "isda/model.hpp"
#include "isda/ops.hpp"
#include "isda/rng.hpp"
#include "isda/trainer.hpp"

namespace isda {

namespace {

constexpr real kTol = 1e-4;

Tensor randn(std::vector<int> shape, Rng& rng, real stddev = 1.0, bool rg = true) {
    Tensor t = Tensor::zeros(std::move(shape), rg);
    for (auto& v : t.vec()) v = rng.normal(0.0, stddev);
    return t;
}

real rel_err(real a, real n) {
    return std::abs(a - n) / std::max({std::abs(a), std::abs(n), static_cast<real>(1e-3)});
}

}  // namespace

real fd_gradcheck(const std::vector<Tensor>& wrt, const std::function<Tensor()>& loss_fn,
                  real h) {
    for (auto t : wrt) {
        Tensor z = t;
        z.zero_grad();
    }
    Tensor loss = loss_fn();
    backward(loss);

    std::vector<std::vector<real>> analytic;
    for (auto t : wrt) {
        Tensor z = t;
        analytic.emplace_back(z.grad(), z.grad() + z.size());
    }

    real max_err = 0;
    NoGradGuard ng;
    for (size_t w = 0; w < wrt.size(); ++w) {
        Tensor t = wrt[w];
        real* data = t.data();
        for (std::int64_t i = 0; i < t.size(); ++i) {
            const real saved = data[i];
            data[i] = saved + h;
            const real up = loss_fn().item();
            data[i] = saved - h;
            const real dn = loss_fn().item();
            data[i] = saved;
            const real numeric = (up - dn) / (2 * h);
            max_err = std::max(max_err, rel_err(analytic[w][static_cast<size_t>(i)], numeric));
        }
    }
    return max_err;
}

namespace {

void run_check(std::vector<CheckResult>& results, const std::string& name,
               const std::vector<Tensor>& wrt, const std::function<Tensor()>& loss_fn) {
    const real err = fd_gradcheck(wrt, loss_fn);
    results.push_back({name, err, err < kTol});
}

// Weighted scalarization so every output element carries a distinct weight.
Tensor weighted(const Tensor& out, const Tensor& wts) { return sum(mul(out, wts)); }

void op_checks(std::vector<CheckResult>& results) {
    Rng rng(2024);

    {
        Tensor a = randn({3, 5}, rng), b = randn({3, 5}, rng);
        Tensor w = randn({3, 5}, rng, 1.0, false);
        run_check(results, "add", {a, b}, [=] { return weighted(add(a, b), w); });
        run_check(results, "sub", {a, b}, [=] { return weighted(sub(a, b), w); });
        run_check(results, "mul", {a, b}, [=] { return weighted(mul(a, b), w); });
        Tensor bpos = Tensor::from_data({3, 5}, b.vec(), true);
        for (auto& v : bpos.vec()) v = 1.5 + std::abs(v);
        run_check(results, "div", {a, bpos}, [=] { return weighted(div(a, bpos), w); });
        Tensor s = Tensor::scalar(2.0, true);
        run_check(results, "div_scalar", {a, s}, [=] { return weighted(div(a, s), w); });
        run_check(results, "scale", {a}, [=] { return weighted(scale(a, -1.7), w); });
        run_check(results, "add_scalar_t", {a, s}, [=] { return weighted(add_scalar_t(a, s), w); });
        Tensor row = randn({1, 5}, rng);
        run_check(results, "add_rows", {a, row}, [=] { return weighted(add_rows(a, row), w); });
        run_check(results, "sigmoid", {a}, [=] { return weighted(sigmoid(a), w); });
        run_check(results, "mean", {a}, [=] { return mean(a); });

        Tensor r = randn({4, 4}, rng);
        for (auto& v : r.vec()) v = v < 0 ? v - 0.5 : v + 0.5;  // keep clear of the kink
        Tensor wr = randn({4, 4}, rng, 1.0, false);
        run_check(results, "relu", {r}, [=] { return weighted(relu(r), wr); });
    }
    {
        Tensor a = randn({4, 3}, rng), b = randn({3, 5}, rng);
        Tensor w = randn({4, 5}, rng, 1.0, false);
        run_check(results, "matmul", {a, b}, [=] { return weighted(matmul(a, b), w); });
        Tensor x = randn({4, 6}, rng), lw = randn({3, 6}, rng), lb = randn({3}, rng);
        Tensor w2 = randn({4, 3}, rng, 1.0, false);
        run_check(results, "linear", {x, lw, lb}, [=] { return weighted(linear(x, lw, lb), w2); });
        Tensor w3 = randn({3, 4}, rng, 1.0, false);
        run_check(results, "transpose2d", {a}, [=] { return weighted(transpose2d(a), w3); });
    }
    {
        Tensor a = randn({2, 6}, rng), b = randn({2, 4}, rng);
        Tensor w = randn({2, 10}, rng, 1.0, false);
        run_check(results, "concat_cols", {a, b}, [=] { return weighted(concat_cols(a, b), w); });
        Tensor c = randn({3, 6}, rng);
        Tensor w2 = randn({5, 6}, rng, 1.0, false);
        run_check(results, "concat_rows", {a, c}, [=] { return weighted(concat_rows(a, c), w2); });
        Tensor w3 = randn({2, 3}, rng, 1.0, false);
        run_check(results, "slice_cols", {a}, [=] { return weighted(slice_cols(a, 2, 3), w3); });
        Tensor p = randn({2, 3, 4}, rng), q = randn({3, 3, 4}, rng);
        Tensor w4 = randn({5, 3, 4}, rng, 1.0, false);
        run_check(results, "concat_channels", {p, q},
                  [=] { return weighted(concat_channels(p, q), w4); });
        Tensor w5 = randn({24}, rng, 1.0, false);
        run_check(results, "reshape", {p}, [=] { return weighted(reshape(p, {24}), w5); });
    }
    {
        Tensor x = randn({3, 8}, rng);
        Tensor w = randn({3, 8}, rng, 1.0, false);
        run_check(results, "softmax_rows", {x}, [=] { return weighted(softmax_rows(x), w); });
        run_check(results, "softmax_blocks", {x},
                  [=] { return weighted(softmax_blocks(x, 4), w); });
        Tensor g = randn({8}, rng), b = randn({8}, rng);
        run_check(results, "layer_norm", {x, g, b},
                  [=] { return weighted(layer_norm(x, g, b, 1e-5), w); });
    }
    {
        Tensor x = randn({6, 4, 5}, rng);
        Tensor g = randn({6}, rng), b = randn({6}, rng);
        Tensor w = randn({6, 4, 5}, rng, 1.0, false);
        run_check(results, "group_norm", {x, g, b},
                  [=] { return weighted(group_norm(x, 3, g, b, 1e-5), w); });
    }
    {
        Tensor x = randn({2, 6, 7}, rng);
        Tensor k3 = randn({3, 2, 3, 3}, rng, 0.5);
        Tensor w3 = randn({3, 6, 7}, rng, 1.0, false);
        run_check(results, "conv2d_k3", {x, k3},
                  [=] { return weighted(conv2d(x, k3, 1), w3); });
        Tensor ws = randn({3, 3, 4}, rng, 1.0, false);
        run_check(results, "conv2d_stride2", {x, k3},
                  [=] { return weighted(conv2d(x, k3, 1, 2), ws); });
        Tensor k1 = randn({4, 2, 1, 1}, rng, 0.5);
        Tensor w1 = randn({4, 6, 7}, rng, 1.0, false);
        run_check(results, "conv2d_k1", {x, k1},
                  [=] { return weighted(conv2d(x, k1, 0), w1); });
        Tensor cb = randn({2}, rng);
        Tensor wb = randn({2, 6, 7}, rng, 1.0, false);
        run_check(results, "add_channel_bias", {x, cb},
                  [=] { return weighted(add_channel_bias(x, cb), wb); });
    }
    {
        Tensor value = randn({3, 5, 6}, rng);
        Tensor points = Tensor::zeros({7, 2}, true);
        for (auto& v : points.vec()) v = 0.1 + 0.8 * rng.uniform();
        Tensor w = randn({7, 3}, rng, 1.0, false);
        run_check(results, "bilinear_sample", {value, points},
                  [=] { return weighted(bilinear_sample(value, points), w); });

        Tensor up_in = randn({2, 3, 4}, rng);
        Tensor wu = randn({2, 6, 8}, rng, 1.0, false);
        run_check(results, "bilinear_upsample2x", {up_in},
                  [=] { return weighted(bilinear_upsample2x(up_in), wu); });
    }
    {
        // deform_aggregate: 2 heads, 2 points, 2 levels, D=4
        std::vector<Tensor> values = {randn({4, 5, 5}, rng), randn({4, 3, 3}, rng)};
        Tensor ref = Tensor::zeros({3, 2}, true);
        for (auto& v : ref.vec()) v = 0.2 + 0.6 * rng.uniform();
        Tensor offsets = randn({3, 2 * 2 * 2}, rng, 0.3);
        Tensor logits = randn({3, 2 * 2 * 2}, rng, 0.5);
        Tensor w = randn({3, 4}, rng, 1.0, false);
        run_check(results, "deform_aggregate",
                  {values[0], values[1], ref, offsets, logits}, [=] {
                      Tensor weights = softmax_blocks(logits, 4);
                      return weighted(deform_aggregate(values, ref, offsets, weights, 2, 2), w);
                  });
    }
    {
        Tensor q = randn({5, 8}, rng), k = randn({5, 8}, rng), v = randn({5, 8}, rng);
        Tensor w = randn({5, 8}, rng, 1.0, false);
        run_check(results, "dense_attention", {q, k, v},
                  [=] { return weighted(dense_attention(q, k, v, 2), w); });
    }
    {
        Tensor logits = randn({4, 5}, rng);
        const std::vector<int> targets = {0, 2, 4, 1};
        const std::vector<real> weights = {1.0, 0.1, 1.0, 0.5};
        run_check(results, "cross_entropy_rows", {logits},
                  [=] { return cross_entropy_rows(logits, targets, weights); });
    }
    {
        Tensor pred = Tensor::zeros({4, 5}, true);
        for (auto& v : pred.vec()) v = rng.uniform(0.05, 0.95);
        Tensor gt = Tensor::zeros({4, 5});
        for (auto& v : gt.vec()) v = rng.uniform() < 0.4 ? 1.0 : 0.0;
        run_check(results, "soft_mask_iou", {pred}, [=] { return soft_mask_iou(pred, gt); });
    }
}

// Tiny full model: 32x32 image through the loss with the matching frozen.
void pipeline_check(std::vector<CheckResult>& results, int threads) {
    ModelConfig cfg;
    cfg.base_width = 4;
    cfg.width = 8;
    cfg.heads = 2;
    cfg.points = 2;
    cfg.enc_layers = 1;
    cfg.dec_layers = 1;
    cfg.num_queries = 4;
    const std::uint64_t seed = 7;

    GenConfig gen;
    gen.image_size = 32;
    gen.min_instances = 1;
    gen.max_instances = 2;
    Scene scene = generate_scene(seed, 0, gen);

    // Fresh init puts deformable sampling points on exact integer pixel
    // coordinates, which are kinks of bilinear interpolation where finite
    // differences are meaningless. A deterministic jitter moves every
    // parameter to a generic point; replicas repeat it bit-identically.
    auto jitter = [](IsdaModel& m, std::uint64_t s) {
        Rng jrng(Rng::mix(s, 0x1017ULL));
        for (auto& [name, p] : m.params().entries())
            for (auto& v : p.vec()) v += 0.03 * jrng.normal();
    };

    IsdaModel master(cfg, seed);
    jitter(master, seed);
    Assignment frozen;
    {
        ModelOutput out = master.forward(scene.image());
        LossBreakdown lb = set_loss(out.class_logits, out.masks_full, scene.instances);
        frozen = lb.assignment;
    }

    auto loss_of = [&scene, &frozen](const IsdaModel& m) {
        ModelOutput out = m.forward(scene.image());
        return set_loss_with_assignment(out.class_logits, out.masks_full, scene.instances,
                                        frozen, 1.0, 3.0, 0.1)
            .total;
    };

    // Analytic gradients once.
    master.params().zero_grads();
    backward(loss_of(master));
    std::vector<std::vector<real>> analytic;
    for (auto& [name, p] : master.params().entries())
        analytic.emplace_back(p.grad(), p.grad() + p.size());

    // Numeric sweep over every parameter, chunked across identical replicas.
    const int nt = std::max(1, threads == 0 ? static_cast<int>(std::thread::hardware_concurrency())
                                            : threads);
    const size_t n_params = master.params().entries().size();
    std::vector<real> max_err_per_thread(static_cast<size_t>(nt), 0.0);
    std::atomic<size_t> next{0};
    std::vector<std::thread> pool;
    for (int t = 0; t < nt; ++t)
        pool.emplace_back([&, t] {
            IsdaModel replica(cfg, seed);  // deterministic init: same values as master
            jitter(replica, seed);
            NoGradGuard ng;
            const real h = 1e-5;
            for (size_t pi = next.fetch_add(1); pi < n_params; pi = next.fetch_add(1)) {
                Tensor& p = replica.params().entries()[pi].second;
                real* data = p.data();
                for (std::int64_t i = 0; i < p.size(); ++i) {
                    const real saved = data[i];
                    data[i] = saved + h;
                    const real up = loss_of(replica).item();
                    data[i] = saved - h;
                    const real dn = loss_of(replica).item();
                    data[i] = saved;
                    const real numeric = (up - dn) / (2 * h);
                    max_err_per_thread[static_cast<size_t>(t)] =
                        std::max(max_err_per_thread[static_cast<size_t>(t)],
                                 rel_err(analytic[pi][static_cast<size_t>(i)], numeric));
                }
            }
        });
    for (auto& th : pool) th.join();
    const real err = *std::max_element(max_err_per_thread.begin(), max_err_per_thread.end());
    results.push_back({"pipeline_image_to_loss", err, err < kTol});
}

}  // namespace

std::vector<CheckResult> run_gradcheck_suite(int threads) {
    std::vector<CheckResult> results;
    op_checks(results);
    pipeline_check(results, threads);
    return results;
}

}  // namespace isda
