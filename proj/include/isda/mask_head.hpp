#pragma once

#include <vector>

#include "isda/backbone.hpp"
#include "isda/layers.hpp"

namespace isda {

/// Two linear coordinate ramps over the grid, x then y, endpoints exactly
/// -1 and +1 (0 along a degenerate axis).
Tensor coord_channels(int h, int w);

/// Fused high-resolution mask feature map with optional coordinate channels.
struct MaskFeature {
    Tensor features;  // [D, H/s, W/s]
    Tensor combined;  // features plus coord channels when enabled
    int stride = 4;
};

/// Per-level chains of [3x3 conv, group-norm, ReLU] with interleaved 2x
/// bilinear upsampling, fused by summation at the target scale. Normalized
/// pixel coordinates are injected into the smallest (1/32) level's input
/// and appended to the output, both gated by `with_positions`.
struct MfrHead {
    struct Stage {
        Conv2dLayer conv;
        GroupNormLayer norm;
        bool upsample_after = false;
    };
    std::vector<std::vector<Stage>> paths;  // index 0 = P2 path
    Conv2dLayer fuse;                       // 1x1 conv after summation
    bool with_positions = true;
    int out_stride = 4;

    static MfrHead make(int width, int out_stride, bool with_positions, Rng& rng);
    // levels = P2..P5
    MaskFeature forward(const std::vector<Tensor>& levels) const;
    void register_params(ParamStore& ps, const std::string& prefix);
};

/// Shared-weight head: object feature -> (class scores, object kernel);
/// the position-aware kernel is convolved (1x1) with the mask feature map.
struct MaskHead {
    Ffn cls_ffn;
    Ffn kernel_ffn;
    Tensor mask_bias;  // [1]
    bool kernel_positions = true;

    struct Output {
        Tensor class_logits;  // [N, num_classes+1]
        Tensor mask_logits;   // [N, h*w]
    };

    static MaskHead make(int width, int num_classes, int combined_channels,
                         bool kernel_positions, Rng& rng);
    // object_features [N,D], ref_points [N,2] in [0,1]
    Output forward(const Tensor& object_features, const Tensor& ref_points,
                   const MaskFeature& mfr) const;
    void register_params(ParamStore& ps, const std::string& prefix);
};

}  // namespace isda
