#pragma once

#include <array>
#include <vector>

#include "isda/layers.hpp"

namespace isda {

/// Five-level pyramid P2..P6 at strides 4..64, common channel width.
struct FeaturePyramid {
    std::vector<Tensor> levels;  // index 0 = P2

    const Tensor& p(int i) const { return levels[static_cast<size_t>(i - 2)]; }
};

/// Stem plus four stages of [3x3 conv stride 2, group-norm, ReLU]; stage i
/// emits C_{i+1} at stride 2^{i+1} with base_width*2^{i-1} channels.
struct Backbone {
    struct Stage {
        Conv2dLayer conv;
        GroupNormLayer norm;
    };
    Stage stem;
    std::array<Stage, 4> stages;

    static Backbone make(int base_width, Rng& rng);
    // image [3,H,W] with H, W divisible by 32 -> {C2..C5}
    std::vector<Tensor> forward(const Tensor& image) const;
    void register_params(ParamStore& ps, const std::string& prefix);
};

/// Per-level 1x1 conv + group-norm to the common width; P6 is a stride-2
/// 3x3 conv on C5.
struct Neck {
    struct Lateral {
        Conv2dLayer conv;
        GroupNormLayer norm;
    };
    std::array<Lateral, 4> laterals;
    Conv2dLayer p6_conv;
    GroupNormLayer p6_norm;

    static Neck make(int base_width, int width, Rng& rng);
    FeaturePyramid forward(const std::vector<Tensor>& backbone_levels) const;
    void register_params(ParamStore& ps, const std::string& prefix);
};

int group_count(int channels);

}  // namespace isda
