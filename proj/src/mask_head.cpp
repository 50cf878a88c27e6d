#include "isda/mask_head.hpp"

#include <cmath>
#include <stdexcept>

namespace isda {

Tensor coord_channels(int h, int w) {
    if (h < 1 || w < 1) throw std::invalid_argument("coord_channels: empty grid");
    Tensor t = Tensor::zeros({2, h, w});
    real* px = t.data();
    real* py = px + static_cast<std::int64_t>(h) * w;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            px[y * w + x] = w == 1 ? 0.0 : -1.0 + 2.0 * x / (w - 1);
            py[y * w + x] = h == 1 ? 0.0 : -1.0 + 2.0 * y / (h - 1);
        }
    return t;
}

namespace {

int ilog2(int v) {
    int r = 0;
    while ((1 << r) < v) ++r;
    return r;
}

}  // namespace

MfrHead MfrHead::make(int width, int out_stride, bool with_positions, Rng& rng) {
    if (out_stride != 2 && out_stride != 4 && out_stride != 8)
        throw std::invalid_argument("mfr: out_stride must be 2, 4 or 8");
    MfrHead m;
    m.with_positions = with_positions;
    m.out_stride = out_stride;
    const int target = ilog2(out_stride);
    for (int level = 2; level <= 5; ++level) {
        const int n_up = level - target;  // upsamples needed from stride 2^level
        std::vector<Stage> path;
        const int n_stages = std::max(n_up, 1);
        for (int s = 0; s < n_stages; ++s) {
            Stage st;
            const bool first = s == 0;
            const int in_ch = first && level == 5 && with_positions ? width + 2 : width;
            // A negative n_up (level above the target resolution) becomes a
            // single stride-2 conv stage.
            const int stride = n_up < 0 ? 2 : 1;
            st.conv = Conv2dLayer::make(in_ch, width, 3, 1, stride, rng);
            st.norm = GroupNormLayer::make(width, group_count(width));
            st.upsample_after = s < n_up;
            path.push_back(std::move(st));
        }
        m.paths.push_back(std::move(path));
    }
    m.fuse = Conv2dLayer::make(width, width, 1, 0, 1, rng);
    return m;
}

MaskFeature MfrHead::forward(const std::vector<Tensor>& levels) const {
    if (levels.size() != 4) throw std::invalid_argument("mfr: expected levels P2..P5");
    Tensor fused;
    for (size_t i = 0; i < 4; ++i) {
        Tensor x = levels[i];
        if (i == 3 && with_positions)
            x = concat_channels(x, coord_channels(x.dim(1), x.dim(2)));
        for (const auto& st : paths[i]) {
            x = relu(st.norm.forward(st.conv.forward(x)));
            if (st.upsample_after) x = bilinear_upsample2x(x);
        }
        fused = i == 0 ? x : add(fused, x);
    }
    MaskFeature out;
    out.stride = out_stride;
    out.features = fuse.forward(fused);
    out.combined = with_positions
                       ? concat_channels(out.features,
                                         coord_channels(out.features.dim(1), out.features.dim(2)))
                       : out.features;
    return out;
}

void MfrHead::register_params(ParamStore& ps, const std::string& prefix) {
    for (size_t i = 0; i < paths.size(); ++i)
        for (size_t s = 0; s < paths[i].size(); ++s) {
            const std::string p =
                prefix + ".p" + std::to_string(i + 2) + ".stage" + std::to_string(s);
            paths[i][s].conv.register_params(ps, p + ".conv");
            paths[i][s].norm.register_params(ps, p + ".norm");
        }
    fuse.register_params(ps, prefix + ".fuse");
}

MaskHead MaskHead::make(int width, int num_classes, int combined_channels,
                        bool kernel_positions, Rng& rng) {
    MaskHead h;
    h.kernel_positions = kernel_positions;
    h.cls_ffn = Ffn::make(width, width, num_classes + 1, rng);
    // Bias the classifier toward "no object" so unmatched queries start
    // suppressed; matched targets carry 10x the loss weight and recover fast.
    h.cls_ffn.out.bias.data()[num_classes] = 2.0;
    const int kernel_dim = combined_channels - (kernel_positions ? 2 : 0);
    if (kernel_dim <= 0) throw std::invalid_argument("mask head: kernel dimension underflow");
    h.kernel_ffn = Ffn::make(width, width, kernel_dim, rng);
    // Start with near-empty masks: the IoU gradient scales with 1/union, so
    // a diffuse all-0.5 initialization barely trains.
    h.mask_bias = Tensor::full({1}, -2.0, true);
    return h;
}

MaskHead::Output MaskHead::forward(const Tensor& object_features, const Tensor& ref_points,
                                   const MaskFeature& mfr) const {
    Output out;
    out.class_logits = cls_ffn.forward(object_features);
    Tensor kernel = kernel_ffn.forward(object_features);  // G_raw
    if (kernel_positions) {
        // Reference points rescaled to [-1,1] to live in the same range as
        // the coordinate channels they multiply.
        Tensor r = add_scalar(scale(ref_points, 2.0), -1.0);
        kernel = concat_cols(kernel, r);  // G_pos
    }
    const int c = mfr.combined.dim(0), h = mfr.combined.dim(1), w = mfr.combined.dim(2);
    if (kernel.dim(1) != c)
        throw std::invalid_argument("mask head: kernel/mask-feature channel mismatch");
    Tensor flat = reshape(mfr.combined, {c, h * w});
    out.mask_logits = add_scalar_t(matmul(kernel, flat), mask_bias);  // [N, h*w]
    return out;
}

void MaskHead::register_params(ParamStore& ps, const std::string& prefix) {
    cls_ffn.register_params(ps, prefix + ".cls");
    kernel_ffn.register_params(ps, prefix + ".kernel");
    ps.add(prefix + ".mask_bias", mask_bias);
}

}  // namespace isda
