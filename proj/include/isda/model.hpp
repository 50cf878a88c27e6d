#pragma once

#include <cstdint>
#include <string>

#include "isda/backbone.hpp"
#include "isda/mask_head.hpp"
#include "isda/matching.hpp"
#include "isda/metrics.hpp"
#include "isda/transformer.hpp"

namespace isda {

struct ModelConfig {
    int base_width = 16;
    int width = 32;  // common pyramid / transformer width D
    int heads = 2;
    int points = 4;
    int enc_layers = 2;
    int dec_layers = 2;
    int num_queries = 16;
    int num_classes = 3;
    int mfr_stride = 4;  // mask resolution = 1/mfr_stride of the input
    bool mfr_positions = true;    // MP
    bool kernel_positions = true; // KP

    void validate() const;
};

struct ModelOutput {
    FeaturePyramid pyramid;
    Tensor object_features;   // [N,D]
    Tensor reference_points;  // [N,2]
    MaskFeature mfr;
    Tensor class_logits;  // [N,C+1]
    Tensor mask_probs;    // [N,h,w] at mask resolution
    Tensor masks_full;    // [N,H*W] probabilities at image resolution
    int input_h = 0, input_w = 0;
};

class IsdaModel {
public:
    IsdaModel(const ModelConfig& cfg, std::uint64_t seed);

    ModelOutput forward(const Tensor& image) const;
    std::vector<PredictionInstance> predict(const Tensor& image, real score_threshold) const;

    ParamStore& params() { return params_; }
    const ParamStore& params() const { return params_; }
    const ModelConfig& config() const { return cfg_; }

private:
    ModelConfig cfg_;
    Backbone backbone_;
    Neck neck_;
    DeformableTransformer transformer_;
    MfrHead mfr_head_;
    MaskHead mask_head_;
    ParamStore params_;
};

}  // namespace isda
