#include "isda/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <stdexcept>
#include <string>

namespace isda {

namespace {

Tensor op_output(std::vector<int> shape, const char* opname,
                 std::initializer_list<Tensor> parents) {
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->data.resize(static_cast<size_t>(shape_size(n->shape)));
    n->op = opname;
    if (grad_enabled()) {
        bool rg = false;
        for (const auto& p : parents) rg = rg || p.requires_grad();
        if (rg) {
            n->requires_grad = true;
            for (const auto& p : parents) n->parents.push_back(p.node_ptr());
        }
    }
    return Tensor(std::move(n));
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape())
        throw std::invalid_argument(std::string(op) + ": shape mismatch");
}

}  // namespace

// ---- elementwise -----------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "add");
    Tensor out = op_output(a.shape(), "add", {a, b});
    const std::int64_t n = out.size();
    const real* pa = a.data();
    const real* pb = b.data();
    real* po = out.data();
    for (std::int64_t i = 0; i < n; ++i) po[i] = pa[i] + pb[i];
    if (out.requires_grad()) {
        Node* an = a.node();
        Node* bn = b.node();
        out.node()->backward_fn = [an, bn, n](Node& self, BackCtx& ctx) {
            auto g = ctx.grad_of(self);
            for (Node* p : {an, bn}) {
                if (!p->requires_grad) continue;
                auto gp = ctx.grad(*p);
                for (std::int64_t i = 0; i < n; ++i) gp[i] += g[i];
            }
        };
    }
    return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "sub");
    Tensor out = op_output(a.shape(), "sub", {a, b});
    const std::int64_t n = out.size();
    const real* pa = a.data();
    const real* pb = b.data();
    real* po = out.data();
    for (std::int64_t i = 0; i < n; ++i) po[i] = pa[i] - pb[i];
    if (out.requires_grad()) {
        Node* an = a.node();
        Node* bn = b.node();
        out.node()->backward_fn = [an, bn, n](Node& self, BackCtx& ctx) {
            auto g = ctx.grad_of(self);
            if (an->requires_grad) {
                auto ga = ctx.grad(*an);
                for (std::int64_t i = 0; i < n; ++i) ga[i] += g[i];
            }
            if (bn->requires_grad) {
                auto gb = ctx.grad(*bn);
                for (std::int64_t i = 0; i < n; ++i) gb[i] -= g[i];
            }
        };
    }
    return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "mul");
    Tensor out = op_output(a.shape(), "mul", {a, b});
    const std::int64_t n = out.size();
    const real* pa = a.data();
    const real* pb = b.data();
    real* po = out.data();
    for (std::int64_t i = 0; i < n; ++i) po[i] = pa[i] * pb[i];
    if (out.requires_grad()) {
        Node* an = a.node();
        Node* bn = b.node();
        out.node()->backward_fn = [an, bn, n](Node& self, BackCtx& ctx) {
            auto g = ctx.grad_of(self);
            if (an->requires_grad) {
                auto ga = ctx.grad(*an);
                const real* pb2 = bn->data.data();
                for (std::int64_t i = 0; i < n; ++i) ga[i] += g[i] * pb2[i];
            }
            if (bn->requires_grad) {
                auto gb = ctx.grad(*bn);
                const real* pa2 = an->data.data();
                for (std::int64_t i = 0; i < n; ++i) gb[i] += g[i] * pa2[i];
            }
        };
    }
    return out;
}

Tensor div(const Tensor& a, const Tensor& b) {
    const bool scalar_b = b.size() == 1;
    if (!scalar_b) check_same_shape(a, b, "div");
    Tensor out = op_output(a.shape(), "div", {a, b});
    const std::int64_t n = out.size();
    const real* pa = a.data();
    const real* pb = b.data();
    real* po = out.data();
    for (std::int64_t i = 0; i < n; ++i) po[i] = pa[i] / pb[scalar_b ? 0 : i];
    if (out.requires_grad()) {
        Node* an = a.node();
        Node* bn = b.node();
        out.node()->backward_fn = [an, bn, n, scalar_b](Node& self, BackCtx& ctx) {
            auto g = ctx.grad_of(self);
            const real* pa2 = an->data.data();
            const real* pb2 = bn->data.data();
            if (an->requires_grad) {
                auto ga = ctx.grad(*an);
                for (std::int64_t i = 0; i < n; ++i) ga[i] += g[i] / pb2[scalar_b ? 0 : i];
            }
            if (bn->requires_grad) {
                auto gb = ctx.grad(*bn);
                for (std::int64_t i = 0; i < n; ++i) {
                    const real bv = pb2[scalar_b ? 0 : i];
                    gb[scalar_b ? 0 : i] -= g[i] * pa2[i] / (bv * bv);
                }
            }
        };
    }
    return out;
}

Tensor scale(const Tensor& a, real c) {
    Tensor out = op_output(a.shape(), "scale", {a});
    const std::int64_t n = out.size();
    const real* pa = a.data();
    real* po = out.data();
    for (std::int64_t i = 0; i < n; ++i) po[i] = pa[i] * c;
    if (out.requires_grad()) {
        Node* an = a.node();
        out.node()->backward_fn = [an, n, c](Node& self, BackCtx& ctx) {
            auto g = ctx.grad_of(self);
            auto ga = ctx.grad(*an);
            for (std::int64_t i = 0; i < n; ++i) ga[i] += g[i] * c;
        };
    }
    return out;
}

Tensor add_scalar(const Tensor& a, real c) {
    Tensor out = op_output(a.shape(), "add_scalar", {a});
    const std::int64_t n = out.size();
    const real* pa = a.data();
    real* po = out.data();
    for (std::int64_t i = 0; i < n; ++i) po[i] = pa[i] + c;
    if (out.requires_grad()) {
        Node* an = a.node();
        out.node()->backward_fn = [an, n](Node& self, BackCtx& ctx) {
            auto g = ctx.grad_of(self);
            auto ga = ctx.grad(*an);
            for (std::int64_t i = 0; i < n; ++i) ga[i] += g[i];
        };
    }
    return out;
}

Tensor add_scalar_t(const Tensor& a, const Tensor& s) {
    if (s.size() != 1) throw std::invalid_argument("add_scalar_t: s must have one element");
    Tensor out = op_output(a.shape(), "add_scalar_t", {a, s});
    const std::int64_t n = out.size();
    const real* pa = a.data();
    const real sv = s.data()[0];
    real* po = out.data();
    for (std::int64_t i = 0; i < n; ++i) po[i] = pa[i] + sv;
    if (out.requires_grad()) {
        Node* an = a.node();
        Node* sn = s.node();
        out.node()->backward_fn = [an, sn, n](Node& self, BackCtx& ctx) {
            auto g = ctx.grad_of(self);
            if (an->requires_grad) {
                auto ga = ctx.grad(*an);
                for (std::int64_t i = 0; i < n; ++i) ga[i] += g[i];
            }
            if (sn->requires_grad) {
                auto gs = ctx.grad(*sn);
                real acc = 0;
                for (std::int64_t i = 0; i < n; ++i) acc += g[i];
                gs[0] += acc;
            }
        };
    }
    return out;
}

Tensor add_rows(const Tensor& x, const Tensor& v) {
    if (x.rank() != 2 || v.rank() != 2 || v.dim(0) != 1 || v.dim(1) != x.dim(1))
        throw std::invalid_argument("add_rows: x[N,D] and v[1,D] required");
    const int n = x.dim(0), d = x.dim(1);
    Tensor out = op_output({n, d}, "add_rows", {x, v});
    const real* px = x.data();
    const real* pv = v.data();
    real* po = out.data();
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j) po[i * d + j] = px[i * d + j] + pv[j];
    if (out.requires_grad()) {
        Node* xn = x.node();
        Node* vn = v.node();
        out.node()->backward_fn = [xn, vn, n, d](Node& self, BackCtx& ctx) {
            auto g = ctx.grad_of(self);
            if (xn->requires_grad) {
                auto gx = ctx.grad(*xn);
                for (std::int64_t i = 0; i < static_cast<std::int64_t>(n) * d; ++i) gx[i] += g[i];
            }
            if (vn->requires_grad) {
                auto gv = ctx.grad(*vn);
                for (int i = 0; i < n; ++i)
                    for (int j = 0; j < d; ++j) gv[j] += g[i * d + j];
            }
        };
    }
    return out;
}

Tensor relu(const Tensor& a) {
    Tensor out = op_output(a.shape(), "relu", {a});
    const std::int64_t n = out.size();
    const real* pa = a.data();
    real* po = out.data();
    for (std::int64_t i = 0; i < n; ++i) po[i] = pa[i] > 0 ? pa[i] : 0;
    if (out.requires_grad()) {
        Node* an = a.node();
        out.node()->backward_fn = [an, n](Node& self, BackCtx& ctx) {
            auto g = ctx.grad_of(self);
            auto ga = ctx.grad(*an);
            const real* pa2 = an->data.data();
            for (std::int64_t i = 0; i < n; ++i)
                if (pa2[i] > 0) ga[i] += g[i];
        };
    }
    return out;
}

Tensor sigmoid(const Tensor& a) {
    Tensor out = op_output(a.shape(), "sigmoid", {a});
    const std::int64_t n = out.size();
    const real* pa = a.data();
    real* po = out.data();
    for (std::int64_t i = 0; i < n; ++i) po[i] = 1.0 / (1.0 + std::exp(-pa[i]));
    if (out.requires_grad()) {
        Node* an = a.node();
        out.node()->backward_fn = [an, n](Node& self, BackCtx& ctx) {
            auto g = ctx.grad_of(self);
            auto ga = ctx.grad(*an);
            const real* y = self.data.data();
            for (std::int64_t i = 0; i < n; ++i) ga[i] += g[i] * y[i] * (1.0 - y[i]);
        };
    }
    return out;
}

// ---- reductions ------------------------------------------------------------

Tensor sum(const Tensor& a) {
    Tensor out = op_output({1}, "sum", {a});
    const std::int64_t n = a.size();
    const real* pa = a.data();
    real acc = 0;
    for (std::int64_t i = 0; i < n; ++i) acc += pa[i];
    out.data()[0] = acc;
    if (out.requires_grad()) {
        Node* an = a.node();
        out.node()->backward_fn = [an, n](Node& self, BackCtx& ctx) {
            auto g = ctx.grad_of(self);
            auto ga = ctx.grad(*an);
            for (std::int64_t i = 0; i < n; ++i) ga[i] += g[0];
        };
    }
    return out;
}

Tensor mean(const Tensor& a) {
    Tensor out = op_output({1}, "mean", {a});
    const std::int64_t n = a.size();
    if (n == 0) throw std::invalid_argument("mean: empty tensor");
    const real* pa = a.data();
    real acc = 0;
    for (std::int64_t i = 0; i < n; ++i) acc += pa[i];
    out.data()[0] = acc / static_cast<real>(n);
    if (out.requires_grad()) {
        Node* an = a.node();
        out.node()->backward_fn = [an, n](Node& self, BackCtx& ctx) {
            auto g = ctx.grad_of(self);
            auto ga = ctx.grad(*an);
            const real s = g[0] / static_cast<real>(n);
            for (std::int64_t i = 0; i < n; ++i) ga[i] += s;
        };
    }
    return out;
}

// ---- linear algebra --------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
        throw std::invalid_argument("matmul: incompatible shapes");
    const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
    Tensor out = op_output({m, n}, "matmul", {a, b});
    const real* pa = a.data();
    const real* pb = b.data();
    real* po = out.data();
    std::fill(po, po + static_cast<std::int64_t>(m) * n, 0.0);
    for (int i = 0; i < m; ++i)
        for (int kk = 0; kk < k; ++kk) {
            const real av = pa[i * k + kk];
            const real* brow = pb + static_cast<std::int64_t>(kk) * n;
            real* orow = po + static_cast<std::int64_t>(i) * n;
            for (int j = 0; j < n; ++j) orow[j] += av * brow[j];
        }
    if (out.requires_grad()) {
        Node* an = a.node();
        Node* bn = b.node();
        out.node()->backward_fn = [an, bn, m, k, n](Node& self, BackCtx& ctx) {
            auto g = ctx.grad_of(self);
            if (an->requires_grad) {  // dA = G B^T
                auto ga = ctx.grad(*an);
                const real* pb2 = bn->data.data();
                for (int i = 0; i < m; ++i)
                    for (int kk = 0; kk < k; ++kk) {
                        real acc = 0;
                        const real* grow = g.data() + static_cast<std::int64_t>(i) * n;
                        const real* brow = pb2 + static_cast<std::int64_t>(kk) * n;
                        for (int j = 0; j < n; ++j) acc += grow[j] * brow[j];
                        ga[i * k + kk] += acc;
                    }
            }
            if (bn->requires_grad) {  // dB = A^T G
                auto gb = ctx.grad(*bn);
                const real* pa2 = an->data.data();
                for (int i = 0; i < m; ++i)
                    for (int kk = 0; kk < k; ++kk) {
                        const real av = pa2[i * k + kk];
                        const real* grow = g.data() + static_cast<std::int64_t>(i) * n;
                        real* brow = gb.data() + static_cast<std::int64_t>(kk) * n;
                        for (int j = 0; j < n; ++j) brow[j] += av * grow[j];
                    }
            }
        };
    }
    return out;
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
    if (x.rank() != 2 || w.rank() != 2 || b.rank() != 1 || x.dim(1) != w.dim(1) ||
        w.dim(0) != b.dim(0))
        throw std::invalid_argument("linear: incompatible shapes");
    const int n = x.dim(0), di = x.dim(1), dout = w.dim(0);
    Tensor out = op_output({n, dout}, "linear", {x, w, b});
    const real* px = x.data();
    const real* pw = w.data();
    const real* pb = b.data();
    real* po = out.data();
    for (int i = 0; i < n; ++i)
        for (int o = 0; o < dout; ++o) {
            const real* xrow = px + static_cast<std::int64_t>(i) * di;
            const real* wrow = pw + static_cast<std::int64_t>(o) * di;
            real acc = pb[o];
            for (int j = 0; j < di; ++j) acc += xrow[j] * wrow[j];
            po[i * dout + o] = acc;
        }
    if (out.requires_grad()) {
        Node* xn = x.node();
        Node* wn = w.node();
        Node* bn = b.node();
        out.node()->backward_fn = [xn, wn, bn, n, di, dout](Node& self, BackCtx& ctx) {
            auto g = ctx.grad_of(self);
            if (xn->requires_grad) {
                auto gx = ctx.grad(*xn);
                const real* pw2 = wn->data.data();
                for (int i = 0; i < n; ++i)
                    for (int o = 0; o < dout; ++o) {
                        const real gv = g[i * dout + o];
                        const real* wrow = pw2 + static_cast<std::int64_t>(o) * di;
                        real* xrow = gx.data() + static_cast<std::int64_t>(i) * di;
                        for (int j = 0; j < di; ++j) xrow[j] += gv * wrow[j];
                    }
            }
            if (wn->requires_grad) {
                auto gw = ctx.grad(*wn);
                const real* px2 = xn->data.data();
                for (int i = 0; i < n; ++i)
                    for (int o = 0; o < dout; ++o) {
                        const real gv = g[i * dout + o];
                        const real* xrow = px2 + static_cast<std::int64_t>(i) * di;
                        real* wrow = gw.data() + static_cast<std::int64_t>(o) * di;
                        for (int j = 0; j < di; ++j) wrow[j] += gv * xrow[j];
                    }
            }
            if (bn->requires_grad) {
                auto gb = ctx.grad(*bn);
                for (int i = 0; i < n; ++i)
                    for (int o = 0; o < dout; ++o) gb[o] += g[i * dout + o];
            }
        };
    }
    return out;
}

Tensor transpose2d(const Tensor& a) {
    if (a.rank() != 2) throw std::invalid_argument("transpose2d: rank-2 tensor required");
    const int m = a.dim(0), n = a.dim(1);
    Tensor out = op_output({n, m}, "transpose2d", {a});
    const real* pa = a.data();
    real* po = out.data();
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) po[j * m + i] = pa[i * n + j];
    if (out.requires_grad()) {
        Node* an = a.node();
        out.node()->backward_fn = [an, m, n](Node& self, BackCtx& ctx) {
            auto g = ctx.grad_of(self);
            auto ga = ctx.grad(*an);
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < n; ++j) ga[i * n + j] += g[j * m + i];
        };
    }
    return out;
}

// ---- shape plumbing --------------------------------------------------------

Tensor reshape(const Tensor& a, std::vector<int> shape) {
    if (shape_size(shape) != a.size())
        throw std::invalid_argument("reshape: element count mismatch");
    Tensor out = op_output(std::move(shape), "reshape", {a});
    std::memcpy(out.data(), a.data(), sizeof(real) * static_cast<size_t>(a.size()));
    if (out.requires_grad()) {
        Node* an = a.node();
        const std::int64_t n = a.size();
        out.node()->backward_fn = [an, n](Node& self, BackCtx& ctx) {
            auto g = ctx.grad_of(self);
            auto ga = ctx.grad(*an);
            for (std::int64_t i = 0; i < n; ++i) ga[i] += g[i];
        };
    }
    return out;
}

Tensor slice_rows(const Tensor& a, int start, int count) {
    if (a.rank() != 2 || start < 0 || count < 0 || start + count > a.dim(0))
        throw std::invalid_argument("slice_rows: out of range");
    const int n = a.dim(1);
    Tensor out = op_output({count, n}, "slice_rows", {a});
    std::memcpy(out.data(), a.data() + static_cast<std::int64_t>(start) * n,
                sizeof(real) * static_cast<size_t>(count) * n);
    if (out.requires_grad()) {
        Node* an = a.node();
        out.node()->backward_fn = [an, start, count, n](Node& self, BackCtx& ctx) {
            auto g = ctx.grad_of(self);
            auto ga = ctx.grad(*an);
            for (std::int64_t i = 0; i < static_cast<std::int64_t>(count) * n; ++i)
                ga[static_cast<std::int64_t>(start) * n + i] += g[i];
        };
    }
    return out;
}

Tensor slice_cols(const Tensor& a, int start, int count) {
    if (a.rank() != 2 || start < 0 || count < 0 || start + count > a.dim(1))
        throw std::invalid_argument("slice_cols: out of range");
    const int m = a.dim(0), n = a.dim(1);
    Tensor out = op_output({m, count}, "slice_cols", {a});
    const real* pa = a.data();
    real* po = out.data();
    for (int i = 0; i < m; ++i)
        std::memcpy(po + static_cast<std::int64_t>(i) * count, pa + static_cast<std::int64_t>(i) * n + start,
                    sizeof(real) * static_cast<size_t>(count));
    if (out.requires_grad()) {
        Node* an = a.node();
        out.node()->backward_fn = [an, start, count, m, n](Node& self, BackCtx& ctx) {
            auto g = ctx.grad_of(self);
            auto ga = ctx.grad(*an);
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < count; ++j)
                    ga[static_cast<std::int64_t>(i) * n + start + j] += g[i * count + j];
        };
    }
    return out;
}

Tensor concat_cols(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(0) != b.dim(0))
        throw std::invalid_argument("concat_cols: row count mismatch");
    const int m = a.dim(0), na = a.dim(1), nb = b.dim(1);
    Tensor out = op_output({m, na + nb}, "concat_cols", {a, b});
    const real* pa = a.data();
    const real* pb = b.data();
    real* po = out.data();
    for (int i = 0; i < m; ++i) {
        std::memcpy(po + static_cast<std::int64_t>(i) * (na + nb), pa + static_cast<std::int64_t>(i) * na,
                    sizeof(real) * static_cast<size_t>(na));
        std::memcpy(po + static_cast<std::int64_t>(i) * (na + nb) + na, pb + static_cast<std::int64_t>(i) * nb,
                    sizeof(real) * static_cast<size_t>(nb));
    }
    if (out.requires_grad()) {
        Node* an = a.node();
        Node* bn = b.node();
        out.node()->backward_fn = [an, bn, m, na, nb](Node& self, BackCtx& ctx) {
            auto g = ctx.grad_of(self);
            if (an->requires_grad) {
                auto ga = ctx.grad(*an);
                for (int i = 0; i < m; ++i)
                    for (int j = 0; j < na; ++j) ga[i * na + j] += g[i * (na + nb) + j];
            }
            if (bn->requires_grad) {
                auto gb = ctx.grad(*bn);
                for (int i = 0; i < m; ++i)
                    for (int j = 0; j < nb; ++j) gb[i * nb + j] += g[i * (na + nb) + na + j];
            }
        };
    }
    return out;
}

Tensor concat_rows(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(1))
        throw std::invalid_argument("concat_rows: column count mismatch");
    const int ma = a.dim(0), mb = b.dim(0), n = a.dim(1);
    Tensor out = op_output({ma + mb, n}, "concat_rows", {a, b});
    std::memcpy(out.data(), a.data(), sizeof(real) * static_cast<size_t>(ma) * n);
    std::memcpy(out.data() + static_cast<std::int64_t>(ma) * n, b.data(),
                sizeof(real) * static_cast<size_t>(mb) * n);
    if (out.requires_grad()) {
        Node* an = a.node();
        Node* bn = b.node();
        out.node()->backward_fn = [an, bn, ma, mb, n](Node& self, BackCtx& ctx) {
            auto g = ctx.grad_of(self);
            if (an->requires_grad) {
                auto ga = ctx.grad(*an);
                for (std::int64_t i = 0; i < static_cast<std::int64_t>(ma) * n; ++i) ga[i] += g[i];
            }
            if (bn->requires_grad) {
                auto gb = ctx.grad(*bn);
                for (std::int64_t i = 0; i < static_cast<std::int64_t>(mb) * n; ++i)
                    gb[i] += g[static_cast<std::int64_t>(ma) * n + i];
            }
        };
    }
    return out;
}

Tensor concat_vec(const Tensor& a, const Tensor& b) {
    if (a.rank() != 1 || b.rank() != 1)
        throw std::invalid_argument("concat_vec: rank-1 tensors required");
    const int na = a.dim(0), nb = b.dim(0);
    Tensor out = op_output({na + nb}, "concat_vec", {a, b});
    std::memcpy(out.data(), a.data(), sizeof(real) * static_cast<size_t>(na));
    std::memcpy(out.data() + na, b.data(), sizeof(real) * static_cast<size_t>(nb));
    if (out.requires_grad()) {
        Node* an = a.node();
        Node* bn = b.node();
        out.node()->backward_fn = [an, bn, na, nb](Node& self, BackCtx& ctx) {
            auto g = ctx.grad_of(self);
            if (an->requires_grad) {
                auto ga = ctx.grad(*an);
                for (int i = 0; i < na; ++i) ga[i] += g[i];
            }
            if (bn->requires_grad) {
                auto gb = ctx.grad(*bn);
                for (int i = 0; i < nb; ++i) gb[i] += g[na + i];
            }
        };
    }
    return out;
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
    if (a.rank() != 3 || b.rank() != 3 || a.dim(1) != b.dim(1) || a.dim(2) != b.dim(2))
        throw std::invalid_argument("concat_channels: spatial size mismatch");
    const int ca = a.dim(0), cb = b.dim(0), h = a.dim(1), w = a.dim(2);
    Tensor out = op_output({ca + cb, h, w}, "concat_channels", {a, b});
    const std::int64_t plane = static_cast<std::int64_t>(h) * w;
    std::memcpy(out.data(), a.data(), sizeof(real) * static_cast<size_t>(ca * plane));
    std::memcpy(out.data() + ca * plane, b.data(), sizeof(real) * static_cast<size_t>(cb * plane));
    if (out.requires_grad()) {
        Node* an = a.node();
        Node* bn = b.node();
        out.node()->backward_fn = [an, bn, ca, cb, plane](Node& self, BackCtx& ctx) {
            auto g = ctx.grad_of(self);
            if (an->requires_grad) {
                auto ga = ctx.grad(*an);
                for (std::int64_t i = 0; i < ca * plane; ++i) ga[i] += g[i];
            }
            if (bn->requires_grad) {
                auto gb = ctx.grad(*bn);
                for (std::int64_t i = 0; i < cb * plane; ++i) gb[i] += g[ca * plane + i];
            }
        };
    }
    return out;
}

// ---- normalization & attention nonlinearities ------------------------------

Tensor softmax_blocks(const Tensor& x, int block) {
    if (x.rank() != 2 || block <= 0 || x.dim(1) % block != 0)
        throw std::invalid_argument("softmax_blocks: block must divide row width");
    const int n = x.dim(0), m = x.dim(1);
    Tensor out = op_output({n, m}, "softmax", {x});
    const real* px = x.data();
    real* po = out.data();
    for (int i = 0; i < n; ++i)
        for (int b0 = 0; b0 < m; b0 += block) {
            const real* row = px + static_cast<std::int64_t>(i) * m + b0;
            real* orow = po + static_cast<std::int64_t>(i) * m + b0;
            real mx = row[0];
            for (int j = 1; j < block; ++j) mx = std::max(mx, row[j]);
            real z = 0;
            for (int j = 0; j < block; ++j) {
                orow[j] = std::exp(row[j] - mx);
                z += orow[j];
            }
            for (int j = 0; j < block; ++j) orow[j] /= z;
        }
    if (out.requires_grad()) {
        Node* xn = x.node();
        out.node()->backward_fn = [xn, n, m, block](Node& self, BackCtx& ctx) {
            auto g = ctx.grad_of(self);
            auto gx = ctx.grad(*xn);
            const real* y = self.data.data();
            for (int i = 0; i < n; ++i)
                for (int b0 = 0; b0 < m; b0 += block) {
                    const std::int64_t off = static_cast<std::int64_t>(i) * m + b0;
                    real dot = 0;
                    for (int j = 0; j < block; ++j) dot += g[off + j] * y[off + j];
                    for (int j = 0; j < block; ++j)
                        gx[off + j] += y[off + j] * (g[off + j] - dot);
                }
        };
    }
    return out;
}

Tensor softmax_rows(const Tensor& x) { return softmax_blocks(x, x.dim(1)); }

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, real eps) {
    if (x.rank() != 2 || gamma.rank() != 1 || beta.rank() != 1 || gamma.dim(0) != x.dim(1) ||
        beta.dim(0) != x.dim(1))
        throw std::invalid_argument("layer_norm: incompatible shapes");
    const int n = x.dim(0), d = x.dim(1);
    Tensor out = op_output({n, d}, "layer_norm", {x, gamma, beta});
    std::vector<real> mean_(n), rstd_(n);
    const real* px = x.data();
    const real* pg = gamma.data();
    const real* pb = beta.data();
    real* po = out.data();
    for (int i = 0; i < n; ++i) {
        const real* row = px + static_cast<std::int64_t>(i) * d;
        real mu = 0;
        for (int j = 0; j < d; ++j) mu += row[j];
        mu /= d;
        real var = 0;
        for (int j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
        var /= d;
        const real r = 1.0 / std::sqrt(var + eps);
        mean_[static_cast<size_t>(i)] = mu;
        rstd_[static_cast<size_t>(i)] = r;
        real* orow = po + static_cast<std::int64_t>(i) * d;
        for (int j = 0; j < d; ++j) orow[j] = (row[j] - mu) * r * pg[j] + pb[j];
    }
    if (out.requires_grad()) {
        Node* xn = x.node();
        Node* gn = gamma.node();
        Node* bn = beta.node();
        out.node()->backward_fn = [xn, gn, bn, n, d, mean_, rstd_](Node& self, BackCtx& ctx) {
            auto g = ctx.grad_of(self);
            const real* px2 = xn->data.data();
            const real* pg2 = gn->data.data();
            for (int i = 0; i < n; ++i) {
                const std::int64_t off = static_cast<std::int64_t>(i) * d;
                const real mu = mean_[static_cast<size_t>(i)];
                const real r = rstd_[static_cast<size_t>(i)];
                if (xn->requires_grad) {
                    auto gx = ctx.grad(*xn);
                    real s1 = 0, s2 = 0;
                    for (int j = 0; j < d; ++j) {
                        const real xhat = (px2[off + j] - mu) * r;
                        const real a = g[off + j] * pg2[j];
                        s1 += a;
                        s2 += a * xhat;
                    }
                    s1 /= d;
                    s2 /= d;
                    for (int j = 0; j < d; ++j) {
                        const real xhat = (px2[off + j] - mu) * r;
                        const real a = g[off + j] * pg2[j];
                        gx[off + j] += r * (a - s1 - xhat * s2);
                    }
                }
                if (gn->requires_grad) {
                    auto gg = ctx.grad(*gn);
                    for (int j = 0; j < d; ++j)
                        gg[j] += g[off + j] * (px2[off + j] - mu) * r;
                }
                if (bn->requires_grad) {
                    auto gb = ctx.grad(*bn);
                    for (int j = 0; j < d; ++j) gb[j] += g[off + j];
                }
            }
        };
    }
    return out;
}

Tensor group_norm(const Tensor& x, int groups, const Tensor& gamma, const Tensor& beta,
                  real eps) {
    if (x.rank() != 3) throw std::invalid_argument("group_norm: [C,H,W] input required");
    const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
    if (groups <= 0 || c % groups != 0)
        throw std::invalid_argument("group_norm: groups must divide channel count");
    if (gamma.rank() != 1 || beta.rank() != 1 || gamma.dim(0) != c || beta.dim(0) != c)
        throw std::invalid_argument("group_norm: affine parameter shape mismatch");
    if (eps <= 0) throw std::invalid_argument("group_norm: eps must be positive");
    const int gs = c / groups;
    const std::int64_t plane = static_cast<std::int64_t>(h) * w;
    const std::int64_t gn_count = gs * plane;
    Tensor out = op_output({c, h, w}, "group_norm", {x, gamma, beta});
    std::vector<real> mean_(static_cast<size_t>(groups)), rstd_(static_cast<size_t>(groups));
    const real* px = x.data();
    const real* pg = gamma.data();
    const real* pb = beta.data();
    real* po = out.data();
    for (int g0 = 0; g0 < groups; ++g0) {
        const std::int64_t off = static_cast<std::int64_t>(g0) * gn_count;
        real mu = 0;
        for (std::int64_t i = 0; i < gn_count; ++i) mu += px[off + i];
        mu /= static_cast<real>(gn_count);
        real var = 0;
        for (std::int64_t i = 0; i < gn_count; ++i)
            var += (px[off + i] - mu) * (px[off + i] - mu);
        var /= static_cast<real>(gn_count);
        const real r = 1.0 / std::sqrt(var + eps);
        mean_[static_cast<size_t>(g0)] = mu;
        rstd_[static_cast<size_t>(g0)] = r;
        for (int ci = 0; ci < gs; ++ci) {
            const int ch = g0 * gs + ci;
            const real gamma_c = pg[ch], beta_c = pb[ch];
            const std::int64_t coff = static_cast<std::int64_t>(ch) * plane;
            for (std::int64_t i = 0; i < plane; ++i)
                po[coff + i] = (px[coff + i] - mu) * r * gamma_c + beta_c;
        }
    }
    if (out.requires_grad()) {
        Node* xn = x.node();
        Node* gn = gamma.node();
        Node* bn = beta.node();
        out.node()->backward_fn = [xn, gn, bn, groups, gs, plane, gn_count, mean_,
                                   rstd_](Node& self, BackCtx& ctx) {
            auto g = ctx.grad_of(self);
            const real* px2 = xn->data.data();
            const real* pg2 = gn->data.data();
            for (int g0 = 0; g0 < groups; ++g0) {
                const real mu = mean_[static_cast<size_t>(g0)];
                const real r = rstd_[static_cast<size_t>(g0)];
                if (xn->requires_grad) {
                    auto gx = ctx.grad(*xn);
                    real s1 = 0, s2 = 0;
                    for (int ci = 0; ci < gs; ++ci) {
                        const int ch = g0 * gs + ci;
                        const std::int64_t coff = static_cast<std::int64_t>(ch) * plane;
                        const real gamma_c = pg2[ch];
                        for (std::int64_t i = 0; i < plane; ++i) {
                            const real a = g[coff + i] * gamma_c;
                            s1 += a;
                            s2 += a * (px2[coff + i] - mu) * r;
                        }
                    }
                    s1 /= static_cast<real>(gn_count);
                    s2 /= static_cast<real>(gn_count);
                    for (int ci = 0; ci < gs; ++ci) {
                        const int ch = g0 * gs + ci;
                        const std::int64_t coff = static_cast<std::int64_t>(ch) * plane;
                        const real gamma_c = pg2[ch];
                        for (std::int64_t i = 0; i < plane; ++i) {
                            const real xhat = (px2[coff + i] - mu) * r;
                            const real a = g[coff + i] * gamma_c;
                            gx[coff + i] += r * (a - s1 - xhat * s2);
                        }
                    }
                }
                if (gn->requires_grad || bn->requires_grad) {
                    for (int ci = 0; ci < gs; ++ci) {
                        const int ch = g0 * gs + ci;
                        const std::int64_t coff = static_cast<std::int64_t>(ch) * plane;
                        real dg = 0, db = 0;
                        for (std::int64_t i = 0; i < plane; ++i) {
                            dg += g[coff + i] * (px2[coff + i] - mu) * r;
                            db += g[coff + i];
                        }
                        if (gn->requires_grad) ctx.grad(*gn)[ch] += dg;
                        if (bn->requires_grad) ctx.grad(*bn)[ch] += db;
                    }
                }
            }
        };
    }
    return out;
}

// ---- losses ----------------------------------------------------------------

Tensor cross_entropy_rows(const Tensor& logits, const std::vector<int>& targets,
                          const std::vector<real>& weights) {
    if (logits.rank() != 2) throw std::invalid_argument("cross_entropy_rows: rank-2 logits");
    const int n = logits.dim(0), c = logits.dim(1);
    if (static_cast<int>(targets.size()) != n || static_cast<int>(weights.size()) != n)
        throw std::invalid_argument("cross_entropy_rows: target/weight count mismatch");
    Tensor out = op_output({1}, "cross_entropy", {logits});
    std::vector<real> probs(static_cast<size_t>(n) * c);
    const real* px = logits.data();
    real wsum = 0, loss = 0;
    for (int i = 0; i < n; ++i) {
        if (targets[static_cast<size_t>(i)] < 0 || targets[static_cast<size_t>(i)] >= c)
            throw std::invalid_argument("cross_entropy_rows: target out of range");
        const real* row = px + static_cast<std::int64_t>(i) * c;
        real mx = row[0];
        for (int j = 1; j < c; ++j) mx = std::max(mx, row[j]);
        real z = 0;
        for (int j = 0; j < c; ++j) z += std::exp(row[j] - mx);
        const real lse = mx + std::log(z);
        for (int j = 0; j < c; ++j)
            probs[static_cast<size_t>(i * c + j)] = std::exp(row[j] - mx) / z;
        const real w = weights[static_cast<size_t>(i)];
        loss += w * (lse - row[targets[static_cast<size_t>(i)]]);
        wsum += w;
    }
    if (wsum <= 0) throw std::invalid_argument("cross_entropy_rows: weight sum must be positive");
    out.data()[0] = loss / wsum;
    if (out.requires_grad()) {
        Node* xn = logits.node();
        out.node()->backward_fn = [xn, n, c, targets, weights, probs, wsum](Node& self,
                                                                            BackCtx& ctx) {
            auto g = ctx.grad_of(self);
            auto gx = ctx.grad(*xn);
            for (int i = 0; i < n; ++i) {
                const real s = g[0] * weights[static_cast<size_t>(i)] / wsum;
                for (int j = 0; j < c; ++j) {
                    real p = probs[static_cast<size_t>(i * c + j)];
                    if (j == targets[static_cast<size_t>(i)]) p -= 1.0;
                    gx[static_cast<std::int64_t>(i) * c + j] += s * p;
                }
            }
        };
    }
    return out;
}

}  // namespace isda
