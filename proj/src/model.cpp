#include "isda/model.hpp"

#include <cmath>
#include <stdexcept>

namespace isda {

void ModelConfig::validate() const {
    if (base_width < 1) throw std::invalid_argument("config: backbone.base_width must be >= 1");
    if (width < 4 || width % 4 != 0)
        throw std::invalid_argument("config: neck.width must be a positive multiple of 4");
    if (heads < 1 || width % heads != 0)
        throw std::invalid_argument("config: transformer.heads must divide neck.width");
    if (points < 1) throw std::invalid_argument("config: transformer.points must be >= 1");
    if (enc_layers < 0 || dec_layers < 0)
        throw std::invalid_argument("config: layer counts must be >= 0");
    if (num_queries < 1) throw std::invalid_argument("config: transformer.num_queries must be >= 1");
    if (mfr_stride != 2 && mfr_stride != 4 && mfr_stride != 8)
        throw std::invalid_argument("config: mfr.scale must be 1/2, 1/4 or 1/8");
}

IsdaModel::IsdaModel(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    Rng rng(seed);
    backbone_ = Backbone::make(cfg_.base_width, rng);
    neck_ = Neck::make(cfg_.base_width, cfg_.width, rng);
    transformer_ = DeformableTransformer::make(cfg_.width, cfg_.heads, cfg_.points,
                                               cfg_.enc_layers, cfg_.dec_layers,
                                               cfg_.num_queries, rng);
    mfr_head_ = MfrHead::make(cfg_.width, cfg_.mfr_stride, cfg_.mfr_positions, rng);
    const int combined = cfg_.width + (cfg_.mfr_positions ? 2 : 0);
    mask_head_ = MaskHead::make(cfg_.width, cfg_.num_classes, combined, cfg_.kernel_positions, rng);

    backbone_.register_params(params_, "backbone");
    neck_.register_params(params_, "neck");
    transformer_.register_params(params_, "transformer");
    mfr_head_.register_params(params_, "mfr");
    mask_head_.register_params(params_, "mask_head");
}

ModelOutput IsdaModel::forward(const Tensor& image) const {
    if (!all_finite(image)) throw std::invalid_argument("forward: non-finite input image");
    ModelOutput out;
    out.input_h = image.dim(1);
    out.input_w = image.dim(2);

    out.pyramid = neck_.forward(backbone_.forward(image));
    TransformerOutput tr = transformer_.forward(out.pyramid);
    out.object_features = tr.object_features;
    out.reference_points = tr.reference_points;

    std::vector<Tensor> mfr_levels(out.pyramid.levels.begin(), out.pyramid.levels.end() - 1);
    out.mfr = mfr_head_.forward(mfr_levels);

    MaskHead::Output head = mask_head_.forward(out.object_features, out.reference_points, out.mfr);
    out.class_logits = head.class_logits;

    const int n = cfg_.num_queries;
    const int mh = out.mfr.combined.dim(1), mw = out.mfr.combined.dim(2);
    out.mask_probs = reshape(sigmoid(head.mask_logits), {n, mh, mw});

    Tensor up = out.mask_probs;
    for (int s = cfg_.mfr_stride; s > 1; s /= 2) up = bilinear_upsample2x(up);
    out.masks_full = reshape(up, {n, out.input_h * out.input_w});
    return out;
}

std::vector<PredictionInstance> IsdaModel::predict(const Tensor& image,
                                                   real score_threshold) const {
    NoGradGuard ng;
    ModelOutput out = forward(image);
    Tensor probs = softmax_rows(out.class_logits);

    std::vector<PredictionInstance> preds;
    const int n = cfg_.num_queries, c = cfg_.num_classes;
    const std::int64_t hw = static_cast<std::int64_t>(out.input_h) * out.input_w;
    const real* pp = probs.data();
    const real* pm = out.masks_full.data();
    for (int q = 0; q < n; ++q) {
        int best = 0;
        for (int k = 1; k < c; ++k)
            if (pp[q * (c + 1) + k] > pp[q * (c + 1) + best]) best = k;
        const real conf = pp[q * (c + 1) + best];
        if (conf <= score_threshold) continue;
        PredictionInstance pi;
        pi.class_id = best;
        pi.confidence = conf;
        pi.h = out.input_h;
        pi.w = out.input_w;
        pi.mask.resize(static_cast<size_t>(hw));
        const real* row = pm + static_cast<std::int64_t>(q) * hw;
        for (std::int64_t i = 0; i < hw; ++i) pi.mask[static_cast<size_t>(i)] = row[i] > 0.5 ? 1 : 0;
        preds.push_back(std::move(pi));
    }
    return preds;
}

}  // namespace isda
