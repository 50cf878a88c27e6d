#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>

#include "isda/checkpoint.hpp"
#include "isda/model.hpp"
#include "isda/ops.hpp"
#include "isda/optim.hpp"
#include "isda/rng.hpp"

using namespace isda;

namespace {

Tensor randn(std::vector<int> shape, Rng& rng, bool rg = false) {
    Tensor t = Tensor::zeros(std::move(shape), rg);
    for (auto& v : t.vec()) v = rng.normal();
    return t;
}

// Direct cross-correlation, nothing shared with the conv2d implementation.
std::vector<real> conv_oracle(const Tensor& in, const Tensor& k, int pad, int stride) {
    const int ci = in.dim(0), h = in.dim(1), w = in.dim(2);
    const int co = k.dim(0), ks = k.dim(2);
    const int ho = (h + 2 * pad - ks) / stride + 1, wo = (w + 2 * pad - ks) / stride + 1;
    std::vector<real> out(static_cast<size_t>(co) * ho * wo, 0.0);
    for (int oc = 0; oc < co; ++oc)
        for (int y = 0; y < ho; ++y)
            for (int x = 0; x < wo; ++x) {
                real acc = 0;
                for (int ic = 0; ic < ci; ++ic)
                    for (int ky = 0; ky < ks; ++ky)
                        for (int kx = 0; kx < ks; ++kx) {
                            const int iy = y * stride + ky - pad, ix = x * stride + kx - pad;
                            if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
                            acc += in.data()[(ic * h + iy) * w + ix] *
                                   k.data()[((oc * ci + ic) * ks + ky) * ks + kx];
                        }
                out[static_cast<size_t>((oc * ho + y) * wo + x)] = acc;
            }
    return out;
}

}  // namespace

TEST_CASE("conv2d identity with a unit 1x1 kernel") {
    Rng rng(1);
    Tensor x = randn({2, 4, 5}, rng);
    Tensor k = Tensor::zeros({2, 2, 1, 1});
    k.data()[0] = 1.0;  // out0 <- in0
    k.data()[3] = 1.0;  // out1 <- in1
    Tensor y = conv2d(x, k, 0);
    for (std::int64_t i = 0; i < x.size(); ++i) CHECK(y.data()[i] == doctest::Approx(x.data()[i]));
}

TEST_CASE("conv2d all-ones 3x3 on all-ones 3x3 input") {
    Tensor x = Tensor::full({1, 3, 3}, 1.0);
    Tensor k = Tensor::full({1, 1, 3, 3}, 1.0);
    Tensor y = conv2d(x, k, 1);
    CHECK(y.data()[4] == doctest::Approx(9.0));  // center
    CHECK(y.data()[0] == doctest::Approx(4.0));  // corner
    CHECK(y.data()[1] == doctest::Approx(6.0));  // edge
}

TEST_CASE("conv2d matches the nested-loop oracle to 1e-12") {
    Rng rng(7);
    for (int img = 0; img < 2; ++img) {
        Tensor x = randn({3, 5, 5}, rng);
        Tensor k = randn({4, 3, 3, 3}, rng);
        Tensor y = conv2d(x, k, 0);
        auto expect = conv_oracle(x, k, 0, 1);
        REQUIRE(y.size() == static_cast<std::int64_t>(expect.size()));
        for (size_t i = 0; i < expect.size(); ++i)
            CHECK(std::abs(y.data()[i] - expect[i]) < 1e-12);
    }
    // strided, padded variant against the same oracle
    Tensor x = randn({2, 6, 6}, rng);
    Tensor k = randn({3, 2, 3, 3}, rng);
    Tensor y = conv2d(x, k, 1, 2);
    auto expect = conv_oracle(x, k, 1, 2);
    for (size_t i = 0; i < expect.size(); ++i) CHECK(std::abs(y.data()[i] - expect[i]) < 1e-12);
}

TEST_CASE("conv2d rejects channel mismatch and non-finite input") {
    Tensor x = Tensor::full({2, 4, 4}, 1.0);
    Tensor k = Tensor::full({1, 3, 3, 3}, 1.0);
    CHECK_THROWS_AS(conv2d(x, k, 1), std::invalid_argument);
    x.data()[0] = std::numeric_limits<real>::quiet_NaN();
    CHECK_FALSE(all_finite(x));
}

TEST_CASE("matmul matches the triple-loop oracle to 1e-12") {
    Rng rng(3);
    Tensor a = randn({4, 6}, rng), b = randn({6, 5}, rng);
    Tensor c = matmul(a, b);
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 5; ++j) {
            real acc = 0;
            for (int k = 0; k < 6; ++k) acc += a.data()[i * 6 + k] * b.data()[k * 5 + j];
            CHECK(std::abs(c.data()[i * 5 + j] - acc) < 1e-12);
        }
}

TEST_CASE("group_norm zero-variance and affine cases") {
    Tensor gamma = Tensor::full({4}, 1.0), beta = Tensor::zeros({4});
    Tensor x = Tensor::full({4, 3, 3}, 5.5);
    Tensor y = group_norm(x, 2, gamma, beta, 1e-5);
    for (std::int64_t i = 0; i < y.size(); ++i) CHECK(y.data()[i] == doctest::Approx(0.0));

    Rng rng(5);
    Tensor xr = randn({4, 3, 3}, rng);
    Tensor zero_gamma = Tensor::zeros({4});
    Tensor beta2 = Tensor::full({4}, -1.25);
    Tensor y2 = group_norm(xr, 2, zero_gamma, beta2, 1e-5);
    for (std::int64_t i = 0; i < y2.size(); ++i) CHECK(y2.data()[i] == doctest::Approx(-1.25));

    CHECK_THROWS_AS(group_norm(xr, 3, gamma, beta, 1e-5), std::invalid_argument);
}

TEST_CASE("group_norm statistics recomputed independently") {
    Rng rng(11);
    Tensor x = randn({6, 4, 4}, rng);
    Tensor gamma = Tensor::full({6}, 1.0), beta = Tensor::zeros({6});
    Tensor y = group_norm(x, 3, gamma, beta, 1e-5);
    const int gs = 2, plane = 16, n = gs * plane;
    for (int g = 0; g < 3; ++g) {
        real mean = 0, var = 0;
        for (int i = 0; i < n; ++i) mean += y.data()[g * n + i];
        mean /= n;
        for (int i = 0; i < n; ++i) var += (y.data()[g * n + i] - mean) * (y.data()[g * n + i] - mean);
        var /= n;
        CHECK(std::abs(mean) < 1e-10);
        CHECK(std::abs(var - 1.0) < 1e-4);  // eps shifts variance slightly below 1
    }
}

TEST_CASE("bilinear_sample hits grid-cell centers and patch centers") {
    Tensor v = Tensor::from_data({1, 2, 2}, {1, 2, 3, 4});
    Tensor pts = Tensor::from_data({2, 2}, {0.25, 0.25,   // center of cell (0,0)
                                            0.5, 0.5});   // center of the 2x2 patch
    Tensor out = bilinear_sample(v, pts);
    CHECK(out.data()[0] == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(out.data()[1] == doctest::Approx(2.5).epsilon(1e-12));
}

TEST_CASE("bilinear_sample reads zero outside the grid") {
    Tensor v = Tensor::full({1, 3, 3}, 7.0);
    Tensor pts = Tensor::from_data({3, 2}, {-0.5, 0.5, 1.5, 0.5, 0.5, -2.0});
    Tensor out = bilinear_sample(v, pts);
    for (int i = 0; i < 3; ++i) CHECK(out.data()[i] == doctest::Approx(0.0));
}

TEST_CASE("bilinear_upsample2x constant input and corner behavior") {
    Tensor c = Tensor::full({2, 3, 3}, 4.25);
    Tensor up = bilinear_upsample2x(c);
    CHECK(up.shape() == std::vector<int>{2, 6, 6});
    for (std::int64_t i = 0; i < up.size(); ++i) CHECK(up.data()[i] == doctest::Approx(4.25));

    Tensor x = Tensor::from_data({1, 2, 2}, {0, 1, 2, 3});
    Tensor y = bilinear_upsample2x(x);
    // corners equal input corners under the edge-clamped convention
    CHECK(y.data()[0] == doctest::Approx(0.0));
    CHECK(y.data()[3] == doctest::Approx(1.0));
    CHECK(y.data()[12] == doctest::Approx(2.0));
    CHECK(y.data()[15] == doctest::Approx(3.0));
    // every interior value from the reference formula evaluated by hand
    auto ref = [&](int oy, int ox) {
        auto src = [](int i) { return std::clamp(0.5 * i - 0.25, 0.0, 1.0); };
        const real sy = src(oy), sx = src(ox);
        const int y0 = static_cast<int>(sy), x0 = static_cast<int>(sx);
        const int y1 = std::min(y0 + 1, 1), x1 = std::min(x0 + 1, 1);
        const real ty = sy - y0, tx = sx - x0;
        auto at = [&](int yy, int xx) { return x.data()[yy * 2 + xx]; };
        return (at(y0, x0) * (1 - tx) + at(y0, x1) * tx) * (1 - ty) +
               (at(y1, x0) * (1 - tx) + at(y1, x1) * tx) * ty;
    };
    for (int oy = 0; oy < 4; ++oy)
        for (int ox = 0; ox < 4; ++ox)
            CHECK(y.data()[oy * 4 + ox] == doctest::Approx(ref(oy, ox)).epsilon(1e-12));
}

TEST_CASE("softmax of zeros is uniform; relu clamps negatives") {
    Tensor z = Tensor::zeros({2, 5});
    Tensor s = softmax_rows(z);
    for (std::int64_t i = 0; i < s.size(); ++i) CHECK(s.data()[i] == doctest::Approx(0.2));

    Tensor x = Tensor::from_data({1, 4}, {-3.0, -0.1, 0.0, 2.0});
    Tensor r = relu(x);
    CHECK(r.data()[0] == 0.0);
    CHECK(r.data()[1] == 0.0);
    CHECK(r.data()[2] == 0.0);
    CHECK(r.data()[3] == 2.0);
}

TEST_CASE("backward: sum and sum of squares") {
    Tensor w = Tensor::full({3, 2}, 3.0, true);
    backward(sum(w));
    for (int i = 0; i < 6; ++i) CHECK(w.grad()[i] == doctest::Approx(1.0));

    Tensor w2 = Tensor::full({4}, 3.0, true);
    backward(sum(mul(w2, w2)));
    for (int i = 0; i < 4; ++i) CHECK(w2.grad()[i] == doctest::Approx(6.0));
}

TEST_CASE("backward rejects non-scalar and non-finite losses, detects cycles") {
    Tensor v = Tensor::full({3}, 1.0, true);
    CHECK_THROWS_AS(backward(relu(v)), std::invalid_argument);

    Tensor bad = Tensor::scalar(std::numeric_limits<real>::infinity(), true);
    CHECK_THROWS_AS(backward(bad), std::runtime_error);

    Tensor a = Tensor::scalar(1.0, true);
    Tensor b = add(a, Tensor::scalar(1.0));
    Tensor c = add(b, Tensor::scalar(1.0));
    // Force a loop in the recorded graph.
    b.node()->parents.push_back(c.node_ptr());
    CHECK_THROWS_WITH_AS(backward(c), "backward: cycle detected", std::runtime_error);
}

TEST_CASE("backward is deterministic given identical inputs") {
    auto run = [] {
        Rng rng(99);
        Tensor x = randn({3, 7, 7}, rng, true);
        Tensor k = randn({4, 3, 3, 3}, rng, true);
        Tensor loss = mean(sigmoid(conv2d(x, k, 1)));
        backward(loss);
        std::vector<real> out(k.grad(), k.grad() + k.size());
        out.push_back(loss.item());
        return out;
    };
    auto a = run(), b = run();
    CHECK(a == b);  // bitwise
}

TEST_CASE("adamw analytic single steps") {
    Rng rng(1);
    ParamStore ps;
    Tensor p = Tensor::from_data({3}, {1.0, -2.0, 0.5}, true);
    ps.add("p", p);

    SUBCASE("zero gradient, zero weight decay leaves parameters unchanged") {
        AdamW opt(ps, 0.1, 0.9, 0.999, 1e-8, 0.0);
        p.zero_grad();
        opt.step();
        CHECK(p.data()[0] == doctest::Approx(1.0));
        CHECK(p.data()[1] == doctest::Approx(-2.0));
        CHECK(p.data()[2] == doctest::Approx(0.5));
    }
    SUBCASE("first step from zero state is a bias-corrected normalized step") {
        AdamW opt(ps, 0.01, 0.9, 0.999, 1e-8, 0.0);
        real g[3] = {0.3, -1.7, 0.0};
        p.zero_grad();
        for (int i = 0; i < 3; ++i) p.grad()[i] = g[i];
        const real before[3] = {1.0, -2.0, 0.5};
        opt.step();
        for (int i = 0; i < 3; ++i) {
            // mhat = g, vhat = g^2  =>  step = -lr * g / (|g| + eps)
            const real expect = before[i] - 0.01 * g[i] / (std::abs(g[i]) + 1e-8);
            CHECK(p.data()[i] == doctest::Approx(expect).epsilon(1e-12));
        }
    }
    SUBCASE("weight decay shrinks parameters at zero gradient") {
        AdamW opt(ps, 0.1, 0.9, 0.999, 1e-8, 0.01);
        p.zero_grad();
        opt.step();
        CHECK(p.data()[0] == doctest::Approx(1.0 - 0.1 * 0.01 * 1.0));
        CHECK(p.data()[1] == doctest::Approx(-2.0 - 0.1 * 0.01 * -2.0));
    }
}

TEST_CASE("checkpoint round-trip is bit-exact and rejects mismatches") {
    ModelConfig cfg;
    cfg.base_width = 4;
    cfg.width = 8;
    cfg.num_queries = 4;
    cfg.enc_layers = 1;
    cfg.dec_layers = 1;
    IsdaModel m1(cfg, 42);
    const std::string path = "test_ckpt.bin";
    save_checkpoint(path, m1.params());

    IsdaModel m2(cfg, 43);  // different init
    load_checkpoint(path, m2.params());
    for (size_t i = 0; i < m1.params().entries().size(); ++i) {
        const auto& a = m1.params().entries()[i].second;
        const auto& b = m2.params().entries()[i].second;
        CHECK(a.vec() == b.vec());  // bitwise
    }

    ModelConfig other = cfg;
    other.width = 12;
    IsdaModel m3(other, 1);
    CHECK_THROWS_AS(load_checkpoint(path, m3.params()), std::runtime_error);

    std::ofstream os(path, std::ios::binary);
    os << "JUNKDATA";
    os.close();
    CHECK_THROWS_AS(load_checkpoint(path, m2.params()), std::runtime_error);
    std::remove(path.c_str());
}

TEST_CASE("model init is bit-identical across runs with one seed") {
    ModelConfig cfg;
    cfg.base_width = 4;
    cfg.width = 8;
    cfg.num_queries = 4;
    IsdaModel a(cfg, 5), b(cfg, 5), c(cfg, 6);
    bool all_equal = true, any_diff = false;
    for (size_t i = 0; i < a.params().entries().size(); ++i) {
        if (a.params().entries()[i].second.vec() != b.params().entries()[i].second.vec())
            all_equal = false;
        if (a.params().entries()[i].second.vec() != c.params().entries()[i].second.vec())
            any_diff = true;
    }
    CHECK(all_equal);
    CHECK(any_diff);
}

TEST_CASE("no op emits NaN/Inf on finite input within documented domains") {
    Rng rng(17);
    Tensor x = randn({4, 6, 6}, rng);
    Tensor k = randn({4, 4, 3, 3}, rng);
    Tensor g = Tensor::full({4}, 1.0), b = Tensor::zeros({4});
    CHECK(all_finite(conv2d(x, k, 1)));
    CHECK(all_finite(group_norm(x, 2, g, b, 1e-5)));
    CHECK(all_finite(sigmoid(scale(x, 100.0))));
    CHECK(all_finite(softmax_rows(scale(randn({3, 5}, rng), 500.0))));
    CHECK(all_finite(bilinear_upsample2x(x)));
}
