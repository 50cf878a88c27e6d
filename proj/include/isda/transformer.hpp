#pragma once

#include <vector>

#include "isda/backbone.hpp"
#include "isda/layers.hpp"

namespace isda {

struct LevelInfo {
    int h = 0, w = 0;
    int offset = 0;  // first token index of this level
};

/// Flattened multi-scale token sequence plus the table that maps a token
/// back to (level, x, y).
struct FlattenedMemory {
    Tensor tokens;  // [L_total, D]
    std::vector<LevelInfo> levels;
    Tensor token_refs;  // [L_total, 2], each token's cell center in [0,1]

    int total() const { return tokens.dim(0); }
    int token_index(int level, int x, int y) const {
        return levels[static_cast<size_t>(level)].offset + y * levels[static_cast<size_t>(level)].w + x;
    }
};

/// Fixed sine/cosine spatial encoding for one level, one row per cell,
/// values in [-1,1]. Width must be divisible by 4.
Tensor sine_encoding(int h, int w, int d);

/// Sum features and encoded positions (plus the learned level embedding),
/// then flatten levels into one token sequence.
FlattenedMemory flatten_pyramid(const std::vector<Tensor>& levels,
                                const std::vector<Tensor>& encodings,
                                const Tensor& level_embed);

/// Deformable attention: per head, K learned offsets (cell units, applied
/// at every level) and K*L attention logits, softmaxed per head.
struct DeformAttn {
    LinearLayer value_proj, offset_proj, weight_proj, out_proj;
    int heads = 2, points = 4, levels = 4;

    static DeformAttn make(int d, int heads, int points, int levels, Rng& rng);
    // queries [Q,D], ref [Q,2]; memory supplies the sampled value maps.
    Tensor forward(const Tensor& queries, const Tensor& ref, const Tensor& memory_tokens,
                   const std::vector<LevelInfo>& levels_info) const;
    void register_params(ParamStore& ps, const std::string& prefix);
};

struct EncoderLayer {
    DeformAttn attn;
    LayerNormLayer ln_attn;
    LinearLayer ffn1, ffn2;
    LayerNormLayer ln_ffn;

    static EncoderLayer make(int d, int heads, int points, int levels, Rng& rng);
    Tensor forward(const Tensor& tokens, const Tensor& token_refs,
                   const std::vector<LevelInfo>& levels_info) const;
    void register_params(ParamStore& ps, const std::string& prefix);
};

struct DecoderLayer {
    LinearLayer q_proj, k_proj, v_proj, o_proj;
    LayerNormLayer ln_self;
    DeformAttn cross;
    LayerNormLayer ln_cross;
    LinearLayer ffn1, ffn2;
    LayerNormLayer ln_ffn;
    int heads = 2;

    static DecoderLayer make(int d, int heads, int points, int levels, Rng& rng);
    Tensor forward(const Tensor& x, const Tensor& query_pos, const Tensor& ref,
                   const FlattenedMemory& memory) const;
    void register_params(ParamStore& ps, const std::string& prefix);
};

struct TransformerOutput {
    Tensor object_features;   // [N,D]
    Tensor reference_points;  // [N,2] in [0,1]
    FlattenedMemory memory;   // encoder output
};

/// Encoder over P3..P6 tokens and decoder over N learned object queries.
struct DeformableTransformer {
    int width = 32, heads = 2, points = 4, num_queries = 16;
    Tensor level_embed;             // [4,D]
    std::vector<EncoderLayer> encoder;
    std::vector<DecoderLayer> decoder;
    Tensor query_embed, query_pos;  // [N,D] learned, fixed for testing
    LinearLayer ref_head;           // query_pos -> reference point logits

    static DeformableTransformer make(int width, int heads, int points, int enc_layers,
                                      int dec_layers, int num_queries, Rng& rng);
    FlattenedMemory flatten(const FeaturePyramid& pyramid) const;
    Tensor encode(const FlattenedMemory& mem) const;
    TransformerOutput forward(const FeaturePyramid& pyramid) const;
    void register_params(ParamStore& ps, const std::string& prefix);
};

}  // namespace isda
