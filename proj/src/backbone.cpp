#include "isda/backbone.hpp"

#include <stdexcept>

namespace isda {

int group_count(int channels) {
    // Largest divisor of `channels` not exceeding 8.
    for (int g = 8; g > 1; --g)
        if (channels % g == 0) return g;
    return 1;
}

Backbone Backbone::make(int base_width, Rng& rng) {
    Backbone b;
    b.stem.conv = Conv2dLayer::make(3, base_width, 3, 1, 2, rng);
    b.stem.norm = GroupNormLayer::make(base_width, group_count(base_width));
    int in_ch = base_width;
    for (int i = 0; i < 4; ++i) {
        const int ch = base_width << i;  // C2=base, doubling per stage up to C5
        b.stages[static_cast<size_t>(i)].conv = Conv2dLayer::make(in_ch, ch, 3, 1, 2, rng);
        b.stages[static_cast<size_t>(i)].norm = GroupNormLayer::make(ch, group_count(ch));
        in_ch = ch;
    }
    return b;
}

std::vector<Tensor> Backbone::forward(const Tensor& image) const {
    if (image.rank() != 3 || image.dim(0) != 3)
        throw std::invalid_argument("backbone: image must be [3,H,W]");
    if (image.dim(1) % 32 != 0 || image.dim(2) % 32 != 0)
        throw std::invalid_argument("backbone: H and W must be divisible by 32");
    Tensor x = relu(stem.norm.forward(stem.conv.forward(image)));
    std::vector<Tensor> out;
    out.reserve(4);
    for (const auto& s : stages) {
        x = relu(s.norm.forward(s.conv.forward(x)));
        out.push_back(x);
    }
    return out;
}

void Backbone::register_params(ParamStore& ps, const std::string& prefix) {
    stem.conv.register_params(ps, prefix + ".stem.conv");
    stem.norm.register_params(ps, prefix + ".stem.norm");
    for (size_t i = 0; i < stages.size(); ++i) {
        const std::string p = prefix + ".stage" + std::to_string(i);
        stages[i].conv.register_params(ps, p + ".conv");
        stages[i].norm.register_params(ps, p + ".norm");
    }
}

Neck Neck::make(int base_width, int width, Rng& rng) {
    Neck n;
    for (int i = 0; i < 4; ++i) {
        const int in_ch = base_width << i;
        n.laterals[static_cast<size_t>(i)].conv = Conv2dLayer::make(in_ch, width, 1, 0, 1, rng);
        n.laterals[static_cast<size_t>(i)].norm = GroupNormLayer::make(width, group_count(width));
    }
    n.p6_conv = Conv2dLayer::make(base_width << 3, width, 3, 1, 2, rng);
    n.p6_norm = GroupNormLayer::make(width, group_count(width));
    return n;
}

FeaturePyramid Neck::forward(const std::vector<Tensor>& backbone_levels) const {
    if (backbone_levels.size() != 4)
        throw std::invalid_argument("neck: expected four backbone levels");
    FeaturePyramid pyr;
    for (size_t i = 0; i < 4; ++i) {
        if (laterals[i].conv.weight.dim(1) != backbone_levels[i].dim(0))
            throw std::invalid_argument("neck: channel mismatch with parameters");
        pyr.levels.push_back(laterals[i].norm.forward(laterals[i].conv.forward(backbone_levels[i])));
    }
    pyr.levels.push_back(p6_norm.forward(p6_conv.forward(backbone_levels[3])));
    return pyr;
}

void Neck::register_params(ParamStore& ps, const std::string& prefix) {
    for (size_t i = 0; i < laterals.size(); ++i) {
        const std::string p = prefix + ".lateral" + std::to_string(i);
        laterals[i].conv.register_params(ps, p + ".conv");
        laterals[i].norm.register_params(ps, p + ".norm");
    }
    p6_conv.register_params(ps, prefix + ".p6.conv");
    p6_norm.register_params(ps, prefix + ".p6.norm");
}

}  // namespace isda
