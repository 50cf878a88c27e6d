#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "isda/ops.hpp"

namespace isda {

namespace {

Tensor op_output(std::vector<int> shape, const char* opname, const std::vector<Tensor>& parents) {
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

inline int out_extent(int in, int pad, int k, int stride) {
    return (in + 2 * pad - k) / stride + 1;
}

// Valid output range [x0, x1] for which x*stride + kx - pad lies in [0, in).
inline void conv_bounds(int in, int pad, int kx, int stride, int out, int& x0, int& x1) {
    int lo = pad - kx;  // need x*stride >= lo
    x0 = lo <= 0 ? 0 : (lo + stride - 1) / stride;
    int hi = in - 1 + pad - kx;  // need x*stride <= hi
    x1 = hi < 0 ? -1 : std::min(out - 1, hi / stride);
}

real sorted_sum(std::vector<real>& buf) {
    std::sort(buf.begin(), buf.end());
    real s = 0;
    for (real v : buf) s += v;
    return s;
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& kernel, int padding, int stride) {
    if (input.rank() != 3 || kernel.rank() != 4)
        throw std::invalid_argument("conv2d: input [C,H,W], kernel [Co,Ci,k,k] required");
    const int ci = input.dim(0), h = input.dim(1), w = input.dim(2);
    const int co = kernel.dim(0), k = kernel.dim(2);
    if (kernel.dim(1) != ci) throw std::invalid_argument("conv2d: channel mismatch");
    if (kernel.dim(3) != k) throw std::invalid_argument("conv2d: kernel must be square");
    if (stride < 1 || padding < 0) throw std::invalid_argument("conv2d: bad stride/padding");
    const int ho = out_extent(h, padding, k, stride);
    const int wo = out_extent(w, padding, k, stride);
    if (ho <= 0 || wo <= 0) throw std::invalid_argument("conv2d: empty output");

    Tensor out = op_output({co, ho, wo}, "conv2d", {input, kernel});
    const real* pin = input.data();
    const real* pk = kernel.data();
    real* po = out.data();
    std::fill(po, po + out.size(), 0.0);
    for (int oc = 0; oc < co; ++oc)
        for (int icn = 0; icn < ci; ++icn) {
            const real* wbase = pk + (static_cast<std::int64_t>(oc) * ci + icn) * k * k;
            const real* ibase = pin + static_cast<std::int64_t>(icn) * h * w;
            real* obase = po + static_cast<std::int64_t>(oc) * ho * wo;
            for (int ky = 0; ky < k; ++ky) {
                int y0, y1;
                conv_bounds(h, padding, ky, stride, ho, y0, y1);
                for (int kx = 0; kx < k; ++kx) {
                    const real wv = wbase[ky * k + kx];
                    int x0, x1;
                    conv_bounds(w, padding, kx, stride, wo, x0, x1);
                    for (int y = y0; y <= y1; ++y) {
                        const real* irow = ibase + static_cast<std::int64_t>(y * stride + ky - padding) * w;
                        real* orow = obase + static_cast<std::int64_t>(y) * wo;
                        for (int x = x0; x <= x1; ++x)
                            orow[x] += wv * irow[x * stride + kx - padding];
                    }
                }
            }
        }

    if (out.requires_grad()) {
        Node* in_n = input.node();
        Node* k_n = kernel.node();
        out.node()->backward_fn = [in_n, k_n, ci, h, w, co, k, ho, wo, padding,
                                   stride](Node& self, BackCtx& ctx) {
            auto g = ctx.grad_of(self);
            const real* pin2 = in_n->data.data();
            const real* pk2 = k_n->data.data();
            for (int oc = 0; oc < co; ++oc)
                for (int icn = 0; icn < ci; ++icn) {
                    const std::int64_t koff = (static_cast<std::int64_t>(oc) * ci + icn) * k * k;
                    const std::int64_t ioff = static_cast<std::int64_t>(icn) * h * w;
                    const std::int64_t ooff = static_cast<std::int64_t>(oc) * ho * wo;
                    for (int ky = 0; ky < k; ++ky) {
                        int y0, y1;
                        conv_bounds(h, padding, ky, stride, ho, y0, y1);
                        for (int kx = 0; kx < k; ++kx) {
                            int x0, x1;
                            conv_bounds(w, padding, kx, stride, wo, x0, x1);
                            if (in_n->requires_grad) {
                                auto gin = ctx.grad(*in_n);
                                const real wv = pk2[koff + ky * k + kx];
                                for (int y = y0; y <= y1; ++y) {
                                    real* girow =
                                        gin.data() + ioff + static_cast<std::int64_t>(y * stride + ky - padding) * w;
                                    const real* grow = g.data() + ooff + static_cast<std::int64_t>(y) * wo;
                                    for (int x = x0; x <= x1; ++x)
                                        girow[x * stride + kx - padding] += wv * grow[x];
                                }
                            }
                            if (k_n->requires_grad) {
                                auto gk = ctx.grad(*k_n);
                                real acc = 0;
                                for (int y = y0; y <= y1; ++y) {
                                    const real* irow =
                                        pin2 + ioff + static_cast<std::int64_t>(y * stride + ky - padding) * w;
                                    const real* grow = g.data() + ooff + static_cast<std::int64_t>(y) * wo;
                                    for (int x = x0; x <= x1; ++x)
                                        acc += grow[x] * irow[x * stride + kx - padding];
                                }
                                gk[koff + ky * k + kx] += acc;
                            }
                        }
                    }
                }
        };
    }
    return out;
}

Tensor add_channel_bias(const Tensor& x, const Tensor& b) {
    if (x.rank() != 3 || b.rank() != 1 || b.dim(0) != x.dim(0))
        throw std::invalid_argument("add_channel_bias: incompatible shapes");
    const int c = x.dim(0);
    const std::int64_t plane = static_cast<std::int64_t>(x.dim(1)) * x.dim(2);
    Tensor out = op_output(x.shape(), "add_channel_bias", {x, b});
    const real* px = x.data();
    const real* pb = b.data();
    real* po = out.data();
    for (int ch = 0; ch < c; ++ch) {
        const real bv = pb[ch];
        for (std::int64_t i = 0; i < plane; ++i) po[ch * plane + i] = px[ch * plane + i] + bv;
    }
    if (out.requires_grad()) {
        Node* xn = x.node();
        Node* bn = b.node();
        out.node()->backward_fn = [xn, bn, c, plane](Node& self, BackCtx& ctx) {
            auto g = ctx.grad_of(self);
            if (xn->requires_grad) {
                auto gx = ctx.grad(*xn);
                for (std::int64_t i = 0; i < c * plane; ++i) gx[i] += g[i];
            }
            if (bn->requires_grad) {
                auto gb = ctx.grad(*bn);
                for (int ch = 0; ch < c; ++ch) {
                    real acc = 0;
                    for (std::int64_t i = 0; i < plane; ++i) acc += g[ch * plane + i];
                    gb[ch] += acc;
                }
            }
        };
    }
    return out;
}

namespace {

// Shared bilinear corner setup: px/py are continuous pixel coordinates
// (align_corners=false). Corners outside the grid read zero.
struct Corners {
    int x0, y0;
    real wx, wy;
};

inline Corners corner_setup(real px, real py) {
    const real fx = std::floor(px), fy = std::floor(py);
    return {static_cast<int>(fx), static_cast<int>(fy), px - fx, py - fy};
}

inline bool in_grid(int x, int y, int w, int h) { return x >= 0 && x < w && y >= 0 && y < h; }

}  // namespace

Tensor bilinear_sample(const Tensor& value, const Tensor& points) {
    if (value.rank() != 3 || points.rank() != 2 || points.dim(1) != 2)
        throw std::invalid_argument("bilinear_sample: value [C,H,W], points [P,2] required");
    const int c = value.dim(0), h = value.dim(1), w = value.dim(2);
    const int p = points.dim(0);
    Tensor out = op_output({p, c}, "bilinear_sample", {value, points});
    const real* pv = value.data();
    const real* pp = points.data();
    real* po = out.data();
    const std::int64_t plane = static_cast<std::int64_t>(h) * w;
    for (int i = 0; i < p; ++i) {
        const real px = pp[i * 2 + 0] * w - 0.5;
        const real py = pp[i * 2 + 1] * h - 0.5;
        const Corners cr = corner_setup(px, py);
        const real w00 = (1 - cr.wx) * (1 - cr.wy), w10 = cr.wx * (1 - cr.wy);
        const real w01 = (1 - cr.wx) * cr.wy, w11 = cr.wx * cr.wy;
        const bool v00 = in_grid(cr.x0, cr.y0, w, h), v10 = in_grid(cr.x0 + 1, cr.y0, w, h);
        const bool v01 = in_grid(cr.x0, cr.y0 + 1, w, h), v11 = in_grid(cr.x0 + 1, cr.y0 + 1, w, h);
        for (int ch = 0; ch < c; ++ch) {
            const real* vp = pv + ch * plane;
            real acc = 0;
            if (v00) acc += w00 * vp[cr.y0 * w + cr.x0];
            if (v10) acc += w10 * vp[cr.y0 * w + cr.x0 + 1];
            if (v01) acc += w01 * vp[(cr.y0 + 1) * w + cr.x0];
            if (v11) acc += w11 * vp[(cr.y0 + 1) * w + cr.x0 + 1];
            po[static_cast<std::int64_t>(i) * c + ch] = acc;
        }
    }
    if (out.requires_grad()) {
        Node* vn = value.node();
        Node* pn = points.node();
        out.node()->backward_fn = [vn, pn, c, h, w, p, plane](Node& self, BackCtx& ctx) {
            auto g = ctx.grad_of(self);
            const real* pv2 = vn->data.data();
            const real* pp2 = pn->data.data();
            for (int i = 0; i < p; ++i) {
                const real px = pp2[i * 2 + 0] * w - 0.5;
                const real py = pp2[i * 2 + 1] * h - 0.5;
                const Corners cr = corner_setup(px, py);
                const real w00 = (1 - cr.wx) * (1 - cr.wy), w10 = cr.wx * (1 - cr.wy);
                const real w01 = (1 - cr.wx) * cr.wy, w11 = cr.wx * cr.wy;
                const bool v00 = in_grid(cr.x0, cr.y0, w, h), v10 = in_grid(cr.x0 + 1, cr.y0, w, h);
                const bool v01 = in_grid(cr.x0, cr.y0 + 1, w, h),
                           v11 = in_grid(cr.x0 + 1, cr.y0 + 1, w, h);
                real dpx = 0, dpy = 0;
                for (int ch = 0; ch < c; ++ch) {
                    const real go = g[static_cast<std::int64_t>(i) * c + ch];
                    if (go == 0 && !pn->requires_grad) continue;
                    const real* vp = pv2 + ch * plane;
                    const real q00 = v00 ? vp[cr.y0 * w + cr.x0] : 0;
                    const real q10 = v10 ? vp[cr.y0 * w + cr.x0 + 1] : 0;
                    const real q01 = v01 ? vp[(cr.y0 + 1) * w + cr.x0] : 0;
                    const real q11 = v11 ? vp[(cr.y0 + 1) * w + cr.x0 + 1] : 0;
                    if (vn->requires_grad) {
                        auto gv = ctx.grad(*vn);
                        real* gvp = gv.data() + ch * plane;
                        if (v00) gvp[cr.y0 * w + cr.x0] += go * w00;
                        if (v10) gvp[cr.y0 * w + cr.x0 + 1] += go * w10;
                        if (v01) gvp[(cr.y0 + 1) * w + cr.x0] += go * w01;
                        if (v11) gvp[(cr.y0 + 1) * w + cr.x0 + 1] += go * w11;
                    }
                    dpx += go * ((q10 - q00) * (1 - cr.wy) + (q11 - q01) * cr.wy);
                    dpy += go * ((q01 - q00) * (1 - cr.wx) + (q11 - q10) * cr.wx);
                }
                if (pn->requires_grad) {
                    auto gp = ctx.grad(*pn);
                    gp[i * 2 + 0] += dpx * w;
                    gp[i * 2 + 1] += dpy * h;
                }
            }
        };
    }
    return out;
}

Tensor bilinear_upsample2x(const Tensor& input) {
    if (input.rank() != 3) throw std::invalid_argument("bilinear_upsample2x: [C,H,W] required");
    const int c = input.dim(0), h = input.dim(1), w = input.dim(2);
    const int ho = 2 * h, wo = 2 * w;
    Tensor out = op_output({c, ho, wo}, "bilinear_upsample2x", {input});

    // Source coordinate of output index i is i/2 - 0.25, clamped to the edge.
    auto src = [](int i, int n, int& i0, int& i1, real& t) {
        real s = 0.5 * i - 0.25;
        if (s < 0) s = 0;
        if (s > n - 1) s = static_cast<real>(n - 1);
        i0 = static_cast<int>(std::floor(s));
        i1 = std::min(i0 + 1, n - 1);
        t = s - i0;
    };

    std::vector<int> x0(static_cast<size_t>(wo)), x1(static_cast<size_t>(wo));
    std::vector<real> tx(static_cast<size_t>(wo));
    for (int x = 0; x < wo; ++x) src(x, w, x0[static_cast<size_t>(x)], x1[static_cast<size_t>(x)], tx[static_cast<size_t>(x)]);

    const real* pin = input.data();
    real* po = out.data();
    for (int ch = 0; ch < c; ++ch) {
        const real* ibase = pin + static_cast<std::int64_t>(ch) * h * w;
        real* obase = po + static_cast<std::int64_t>(ch) * ho * wo;
        for (int y = 0; y < ho; ++y) {
            int y0, y1;
            real ty;
            src(y, h, y0, y1, ty);
            const real* r0 = ibase + static_cast<std::int64_t>(y0) * w;
            const real* r1 = ibase + static_cast<std::int64_t>(y1) * w;
            real* orow = obase + static_cast<std::int64_t>(y) * wo;
            for (int x = 0; x < wo; ++x) {
                const real a = r0[x0[static_cast<size_t>(x)]] * (1 - tx[static_cast<size_t>(x)]) +
                               r0[x1[static_cast<size_t>(x)]] * tx[static_cast<size_t>(x)];
                const real b = r1[x0[static_cast<size_t>(x)]] * (1 - tx[static_cast<size_t>(x)]) +
                               r1[x1[static_cast<size_t>(x)]] * tx[static_cast<size_t>(x)];
                orow[x] = a * (1 - ty) + b * ty;
            }
        }
    }
    if (out.requires_grad()) {
        Node* in_n = input.node();
        out.node()->backward_fn = [in_n, c, h, w, ho, wo, src, x0, x1, tx](Node& self,
                                                                           BackCtx& ctx) {
            auto g = ctx.grad_of(self);
            auto gin = ctx.grad(*in_n);
            for (int ch = 0; ch < c; ++ch) {
                real* gbase = gin.data() + static_cast<std::int64_t>(ch) * h * w;
                const real* obase = g.data() + static_cast<std::int64_t>(ch) * ho * wo;
                for (int y = 0; y < ho; ++y) {
                    int y0, y1;
                    real ty;
                    src(y, h, y0, y1, ty);
                    real* r0 = gbase + static_cast<std::int64_t>(y0) * w;
                    real* r1 = gbase + static_cast<std::int64_t>(y1) * w;
                    const real* orow = obase + static_cast<std::int64_t>(y) * wo;
                    for (int x = 0; x < wo; ++x) {
                        const real go = orow[x];
                        const int a0 = x0[static_cast<size_t>(x)], a1 = x1[static_cast<size_t>(x)];
                        const real t = tx[static_cast<size_t>(x)];
                        r0[a0] += go * (1 - t) * (1 - ty);
                        r0[a1] += go * t * (1 - ty);
                        r1[a0] += go * (1 - t) * ty;
                        r1[a1] += go * t * ty;
                    }
                }
            }
        };
    }
    return out;
}

Tensor deform_aggregate(const std::vector<Tensor>& values, const Tensor& ref,
                        const Tensor& offsets, const Tensor& weights, int heads,
                        int points_per_level) {
    const int levels = static_cast<int>(values.size());
    if (levels == 0) throw std::invalid_argument("deform_aggregate: no levels");
    const int d = values[0].dim(0);
    for (const auto& v : values)
        if (v.rank() != 3 || v.dim(0) != d)
            throw std::invalid_argument("deform_aggregate: level channel mismatch");
    if (heads <= 0 || d % heads != 0)
        throw std::invalid_argument("deform_aggregate: heads must divide channels");
    const int q = ref.dim(0), kpts = points_per_level;
    if (ref.rank() != 2 || ref.dim(1) != 2)
        throw std::invalid_argument("deform_aggregate: ref [Q,2] required");
    if (offsets.rank() != 2 || offsets.dim(0) != q || offsets.dim(1) != heads * kpts * 2)
        throw std::invalid_argument("deform_aggregate: offsets [Q,M*K*2] required");
    if (weights.rank() != 2 || weights.dim(0) != q ||
        weights.dim(1) != heads * levels * kpts)
        throw std::invalid_argument("deform_aggregate: weights [Q,M*L*K] required");
    const int dh = d / heads;

    std::vector<Tensor> parents = values;
    parents.push_back(ref);
    parents.push_back(offsets);
    parents.push_back(weights);
    Tensor out = op_output({q, d}, "deform_aggregate", parents);
    real* po = out.data();
    std::fill(po, po + out.size(), 0.0);

    const real* pr = ref.data();
    const real* pofs = offsets.data();
    const real* pw = weights.data();
    const int ow = heads * kpts * 2, ww = heads * levels * kpts;

    for (int i = 0; i < q; ++i) {
        const real rx = pr[i * 2 + 0], ry = pr[i * 2 + 1];
        for (int m = 0; m < heads; ++m)
            for (int l = 0; l < levels; ++l) {
                const int hlev = values[static_cast<size_t>(l)].dim(1);
                const int wlev = values[static_cast<size_t>(l)].dim(2);
                const real* pv = values[static_cast<size_t>(l)].data();
                const std::int64_t plane = static_cast<std::int64_t>(hlev) * wlev;
                for (int kk = 0; kk < kpts; ++kk) {
                    const int oidx = (m * kpts + kk) * 2;
                    const real px = rx * wlev + pofs[i * ow + oidx + 0] - 0.5;
                    const real py = ry * hlev + pofs[i * ow + oidx + 1] - 0.5;
                    const real wv = pw[i * ww + (m * levels + l) * kpts + kk];
                    const Corners cr = corner_setup(px, py);
                    const real w00 = (1 - cr.wx) * (1 - cr.wy), w10 = cr.wx * (1 - cr.wy);
                    const real w01 = (1 - cr.wx) * cr.wy, w11 = cr.wx * cr.wy;
                    const bool v00 = in_grid(cr.x0, cr.y0, wlev, hlev);
                    const bool v10 = in_grid(cr.x0 + 1, cr.y0, wlev, hlev);
                    const bool v01 = in_grid(cr.x0, cr.y0 + 1, wlev, hlev);
                    const bool v11 = in_grid(cr.x0 + 1, cr.y0 + 1, wlev, hlev);
                    for (int ch = m * dh; ch < (m + 1) * dh; ++ch) {
                        const real* vp = pv + ch * plane;
                        real s = 0;
                        if (v00) s += w00 * vp[cr.y0 * wlev + cr.x0];
                        if (v10) s += w10 * vp[cr.y0 * wlev + cr.x0 + 1];
                        if (v01) s += w01 * vp[(cr.y0 + 1) * wlev + cr.x0];
                        if (v11) s += w11 * vp[(cr.y0 + 1) * wlev + cr.x0 + 1];
                        po[static_cast<std::int64_t>(i) * d + ch] += wv * s;
                    }
                }
            }
    }

    if (out.requires_grad()) {
        std::vector<Node*> vns;
        vns.reserve(static_cast<size_t>(levels));
        for (const auto& v : values) vns.push_back(v.node());
        Node* rn = ref.node();
        Node* on = offsets.node();
        Node* wn = weights.node();
        out.node()->backward_fn = [vns, rn, on, wn, q, d, dh, heads, levels, kpts, ow,
                                   ww](Node& self, BackCtx& ctx) {
            auto g = ctx.grad_of(self);
            const real* pr2 = rn->data.data();
            const real* pofs2 = on->data.data();
            const real* pw2 = wn->data.data();
            for (int i = 0; i < q; ++i) {
                const real rx = pr2[i * 2 + 0], ry = pr2[i * 2 + 1];
                real drx = 0, dry = 0;
                for (int m = 0; m < heads; ++m)
                    for (int l = 0; l < levels; ++l) {
                        Node* vn = vns[static_cast<size_t>(l)];
                        const int hlev = vn->shape[1], wlev = vn->shape[2];
                        const real* pv = vn->data.data();
                        const std::int64_t plane = static_cast<std::int64_t>(hlev) * wlev;
                        for (int kk = 0; kk < kpts; ++kk) {
                            const int oidx = (m * kpts + kk) * 2;
                            const real px = rx * wlev + pofs2[i * ow + oidx + 0] - 0.5;
                            const real py = ry * hlev + pofs2[i * ow + oidx + 1] - 0.5;
                            const int widx = i * ww + (m * levels + l) * kpts + kk;
                            const real wv = pw2[widx];
                            const Corners cr = corner_setup(px, py);
                            const real w00 = (1 - cr.wx) * (1 - cr.wy), w10 = cr.wx * (1 - cr.wy);
                            const real w01 = (1 - cr.wx) * cr.wy, w11 = cr.wx * cr.wy;
                            const bool v00 = in_grid(cr.x0, cr.y0, wlev, hlev);
                            const bool v10 = in_grid(cr.x0 + 1, cr.y0, wlev, hlev);
                            const bool v01 = in_grid(cr.x0, cr.y0 + 1, wlev, hlev);
                            const bool v11 = in_grid(cr.x0 + 1, cr.y0 + 1, wlev, hlev);
                            real dw = 0, dpx = 0, dpy = 0;
                            for (int ch = m * dh; ch < (m + 1) * dh; ++ch) {
                                const real go = g[static_cast<std::int64_t>(i) * d + ch];
                                const real* vp = pv + ch * plane;
                                const real q00 = v00 ? vp[cr.y0 * wlev + cr.x0] : 0;
                                const real q10 = v10 ? vp[cr.y0 * wlev + cr.x0 + 1] : 0;
                                const real q01 = v01 ? vp[(cr.y0 + 1) * wlev + cr.x0] : 0;
                                const real q11 = v11 ? vp[(cr.y0 + 1) * wlev + cr.x0 + 1] : 0;
                                const real s = w00 * q00 + w10 * q10 + w01 * q01 + w11 * q11;
                                dw += go * s;
                                if (vn->requires_grad) {
                                    auto gv = ctx.grad(*vn);
                                    real* gvp = gv.data() + ch * plane;
                                    const real gw = go * wv;
                                    if (v00) gvp[cr.y0 * wlev + cr.x0] += gw * w00;
                                    if (v10) gvp[cr.y0 * wlev + cr.x0 + 1] += gw * w10;
                                    if (v01) gvp[(cr.y0 + 1) * wlev + cr.x0] += gw * w01;
                                    if (v11) gvp[(cr.y0 + 1) * wlev + cr.x0 + 1] += gw * w11;
                                }
                                dpx += go * wv * ((q10 - q00) * (1 - cr.wy) + (q11 - q01) * cr.wy);
                                dpy += go * wv * ((q01 - q00) * (1 - cr.wx) + (q11 - q10) * cr.wx);
                            }
                            if (wn->requires_grad) ctx.grad(*wn)[widx] += dw;
                            if (on->requires_grad) {
                                auto gofs = ctx.grad(*on);
                                gofs[i * ow + oidx + 0] += dpx;
                                gofs[i * ow + oidx + 1] += dpy;
                            }
                            drx += dpx * wlev;
                            dry += dpy * hlev;
                        }
                    }
                if (rn->requires_grad) {
                    auto gr = ctx.grad(*rn);
                    gr[i * 2 + 0] += drx;
                    gr[i * 2 + 1] += dry;
                }
            }
        };
    }
    return out;
}

Tensor dense_attention(const Tensor& q, const Tensor& k, const Tensor& v, int heads) {
    if (q.rank() != 2 || k.shape() != q.shape() || v.shape() != q.shape())
        throw std::invalid_argument("dense_attention: q/k/v must share [N,D]");
    const int n = q.dim(0), d = q.dim(1);
    if (heads <= 0 || d % heads != 0)
        throw std::invalid_argument("dense_attention: heads must divide width");
    const int dh = d / heads;
    const real sc = 1.0 / std::sqrt(static_cast<real>(dh));

    Tensor out = op_output({n, d}, "dense_attention", {q, k, v});
    const real* pq = q.data();
    const real* pk = k.data();
    const real* pv = v.data();
    real* po = out.data();

    // Attention matrices saved for backward, layout [heads][n][n].
    std::vector<real> attn(static_cast<size_t>(heads) * n * n);
    std::vector<real> buf(static_cast<size_t>(n));
    for (int m = 0; m < heads; ++m) {
        const int c0 = m * dh;
        real* am = attn.data() + static_cast<std::int64_t>(m) * n * n;
        for (int i = 0; i < n; ++i) {
            real* arow = am + static_cast<std::int64_t>(i) * n;
            real mx = -std::numeric_limits<real>::infinity();
            for (int j = 0; j < n; ++j) {
                real dot = 0;
                for (int c = 0; c < dh; ++c) dot += pq[i * d + c0 + c] * pk[j * d + c0 + c];
                arow[j] = dot * sc;
                mx = std::max(mx, arow[j]);
            }
            for (int j = 0; j < n; ++j) buf[static_cast<size_t>(j)] = std::exp(arow[j] - mx);
            std::vector<real> terms = buf;
            const real z = sorted_sum(terms);
            for (int j = 0; j < n; ++j) arow[j] = buf[static_cast<size_t>(j)] / z;
            for (int c = 0; c < dh; ++c) {
                for (int j = 0; j < n; ++j) terms[static_cast<size_t>(j)] = arow[j] * pv[j * d + c0 + c];
                po[static_cast<std::int64_t>(i) * d + c0 + c] = sorted_sum(terms);
            }
        }
    }

    if (out.requires_grad()) {
        Node* qn = q.node();
        Node* kn = k.node();
        Node* vn = v.node();
        out.node()->backward_fn = [qn, kn, vn, n, d, dh, heads, sc, attn](Node& self,
                                                                          BackCtx& ctx) {
            auto g = ctx.grad_of(self);
            const real* pq2 = qn->data.data();
            const real* pk2 = kn->data.data();
            const real* pv2 = vn->data.data();
            std::vector<real> dl(static_cast<size_t>(n));
            for (int m = 0; m < heads; ++m) {
                const int c0 = m * dh;
                const real* am = attn.data() + static_cast<std::int64_t>(m) * n * n;
                for (int i = 0; i < n; ++i) {
                    const real* arow = am + static_cast<std::int64_t>(i) * n;
                    // dA then dL = A*(dA - sum(dA*A))
                    real dot_da_a = 0;
                    for (int j = 0; j < n; ++j) {
                        real da = 0;
                        for (int c = 0; c < dh; ++c)
                            da += g[static_cast<std::int64_t>(i) * d + c0 + c] * pv2[j * d + c0 + c];
                        dl[static_cast<size_t>(j)] = da;
                        dot_da_a += da * arow[j];
                    }
                    for (int j = 0; j < n; ++j)
                        dl[static_cast<size_t>(j)] = arow[j] * (dl[static_cast<size_t>(j)] - dot_da_a);
                    if (vn->requires_grad) {
                        auto gv = ctx.grad(*vn);
                        for (int j = 0; j < n; ++j) {
                            const real a = arow[j];
                            for (int c = 0; c < dh; ++c)
                                gv[static_cast<std::int64_t>(j) * d + c0 + c] +=
                                    a * g[static_cast<std::int64_t>(i) * d + c0 + c];
                        }
                    }
                    if (qn->requires_grad) {
                        auto gq = ctx.grad(*qn);
                        for (int j = 0; j < n; ++j) {
                            const real s = dl[static_cast<size_t>(j)] * sc;
                            for (int c = 0; c < dh; ++c)
                                gq[static_cast<std::int64_t>(i) * d + c0 + c] += s * pk2[j * d + c0 + c];
                        }
                    }
                    if (kn->requires_grad) {
                        auto gk = ctx.grad(*kn);
                        for (int j = 0; j < n; ++j) {
                            const real s = dl[static_cast<size_t>(j)] * sc;
                            for (int c = 0; c < dh; ++c)
                                gk[static_cast<std::int64_t>(j) * d + c0 + c] += s * pq2[i * d + c0 + c];
                        }
                    }
                }
            }
        };
    }
    return out;
}

}  // namespace isda
