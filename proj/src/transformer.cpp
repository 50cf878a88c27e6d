#include "isda/transformer.hpp"

#include <cmath>
#include <stdexcept>

namespace isda {

Tensor sine_encoding(int h, int w, int d) {
    if (d % 4 != 0) throw std::invalid_argument("sine_encoding: width must be divisible by 4");
    const real two_pi = 6.283185307179586476925286766559;
    const int half = d / 2, quarter = d / 4;
    std::vector<real> inv_freq(static_cast<size_t>(quarter));
    for (int i = 0; i < quarter; ++i)
        inv_freq[static_cast<size_t>(i)] = 1.0 / std::pow(10000.0, 2.0 * i / half);
    Tensor enc = Tensor::zeros({h * w, d});
    real* pe = enc.data();
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const real u = (x + 0.5) / w * two_pi;
            const real v = (y + 0.5) / h * two_pi;
            real* row = pe + static_cast<std::int64_t>(y * w + x) * d;
            for (int i = 0; i < quarter; ++i) {
                const real f = inv_freq[static_cast<size_t>(i)];
                row[2 * i + 0] = std::sin(v * f);
                row[2 * i + 1] = std::cos(v * f);
                row[half + 2 * i + 0] = std::sin(u * f);
                row[half + 2 * i + 1] = std::cos(u * f);
            }
        }
    return enc;
}

FlattenedMemory flatten_pyramid(const std::vector<Tensor>& levels,
                                const std::vector<Tensor>& encodings,
                                const Tensor& level_embed) {
    if (levels.empty() || levels.size() != encodings.size())
        throw std::invalid_argument("flatten_pyramid: level/encoding count mismatch");
    if (level_embed.dim(0) != static_cast<int>(levels.size()))
        throw std::invalid_argument("flatten_pyramid: level embedding count mismatch");
    const int d = levels[0].dim(0);

    FlattenedMemory mem;
    Tensor tokens;
    int offset = 0;
    for (size_t l = 0; l < levels.size(); ++l) {
        const Tensor& p = levels[l];
        const int h = p.dim(1), w = p.dim(2);
        if (encodings[l].dim(0) != h * w || encodings[l].dim(1) != d)
            throw std::invalid_argument("flatten_pyramid: encoding shape mismatch");
        Tensor flat = transpose2d(reshape(p, {d, h * w}));  // [H*W, D]
        flat = add(flat, encodings[l]);
        flat = add_rows(flat, slice_rows(level_embed, static_cast<int>(l), 1));
        tokens = l == 0 ? flat : concat_rows(tokens, flat);
        mem.levels.push_back({h, w, offset});
        offset += h * w;
    }
    mem.tokens = tokens;

    mem.token_refs = Tensor::zeros({offset, 2});
    real* pr = mem.token_refs.data();
    for (const auto& li : mem.levels)
        for (int y = 0; y < li.h; ++y)
            for (int x = 0; x < li.w; ++x) {
                const int t = li.offset + y * li.w + x;
                pr[t * 2 + 0] = (x + 0.5) / li.w;
                pr[t * 2 + 1] = (y + 0.5) / li.h;
            }
    return mem;
}

DeformAttn DeformAttn::make(int d, int heads, int points, int levels, Rng& rng) {
    DeformAttn a;
    a.heads = heads;
    a.points = points;
    a.levels = levels;
    a.value_proj = LinearLayer::make(d, d, rng);
    a.out_proj = LinearLayer::make(d, d, rng);
    a.offset_proj = LinearLayer::make(d, heads * points * 2, rng);
    a.weight_proj = LinearLayer::make(d, heads * levels * points, rng);

    // Zero-init the predictors so sampling starts as a small ring of points
    // around the reference with uniform attention.
    std::fill(a.offset_proj.weight.vec().begin(), a.offset_proj.weight.vec().end(), 0.0);
    std::fill(a.weight_proj.weight.vec().begin(), a.weight_proj.weight.vec().end(), 0.0);
    real* ob = a.offset_proj.bias.data();
    const real two_pi = 6.283185307179586476925286766559;
    for (int m = 0; m < heads; ++m) {
        const real theta = two_pi * m / heads;
        for (int k = 0; k < points; ++k) {
            ob[(m * points + k) * 2 + 0] = std::cos(theta) * (k + 1);
            ob[(m * points + k) * 2 + 1] = std::sin(theta) * (k + 1);
        }
    }
    return a;
}

Tensor DeformAttn::forward(const Tensor& queries, const Tensor& ref, const Tensor& memory_tokens,
                           const std::vector<LevelInfo>& levels_info) const {
    if (static_cast<int>(levels_info.size()) != levels)
        throw std::invalid_argument("deform attention: level count mismatch");
    Tensor value = value_proj.forward(memory_tokens);  // [L_tot, D]
    const int d = value.dim(1);
    std::vector<Tensor> value_maps;
    value_maps.reserve(levels_info.size());
    for (const auto& li : levels_info) {
        Tensor rows = slice_rows(value, li.offset, li.h * li.w);     // [H*W, D]
        value_maps.push_back(reshape(transpose2d(rows), {d, li.h, li.w}));
    }
    Tensor offsets = offset_proj.forward(queries);
    Tensor weights = softmax_blocks(weight_proj.forward(queries), levels * points);
    Tensor agg = deform_aggregate(value_maps, ref, offsets, weights, heads, points);
    return out_proj.forward(agg);
}

void DeformAttn::register_params(ParamStore& ps, const std::string& prefix) {
    value_proj.register_params(ps, prefix + ".value");
    offset_proj.register_params(ps, prefix + ".offset");
    weight_proj.register_params(ps, prefix + ".weight");
    out_proj.register_params(ps, prefix + ".out");
}

EncoderLayer EncoderLayer::make(int d, int heads, int points, int levels, Rng& rng) {
    EncoderLayer l;
    l.attn = DeformAttn::make(d, heads, points, levels, rng);
    l.ln_attn = LayerNormLayer::make(d);
    l.ffn1 = LinearLayer::make(d, 2 * d, rng);
    l.ffn2 = LinearLayer::make(2 * d, d, rng);
    l.ln_ffn = LayerNormLayer::make(d);
    return l;
}

Tensor EncoderLayer::forward(const Tensor& tokens, const Tensor& token_refs,
                             const std::vector<LevelInfo>& levels_info) const {
    Tensor x = ln_attn.forward(add(tokens, attn.forward(tokens, token_refs, tokens, levels_info)));
    Tensor ff = ffn2.forward(relu(ffn1.forward(x)));
    return ln_ffn.forward(add(x, ff));
}

void EncoderLayer::register_params(ParamStore& ps, const std::string& prefix) {
    attn.register_params(ps, prefix + ".attn");
    ln_attn.register_params(ps, prefix + ".ln_attn");
    ffn1.register_params(ps, prefix + ".ffn1");
    ffn2.register_params(ps, prefix + ".ffn2");
    ln_ffn.register_params(ps, prefix + ".ln_ffn");
}

DecoderLayer DecoderLayer::make(int d, int heads, int points, int levels, Rng& rng) {
    DecoderLayer l;
    l.heads = heads;
    l.q_proj = LinearLayer::make(d, d, rng);
    l.k_proj = LinearLayer::make(d, d, rng);
    l.v_proj = LinearLayer::make(d, d, rng);
    l.o_proj = LinearLayer::make(d, d, rng);
    l.ln_self = LayerNormLayer::make(d);
    l.cross = DeformAttn::make(d, heads, points, levels, rng);
    l.ln_cross = LayerNormLayer::make(d);
    l.ffn1 = LinearLayer::make(d, 2 * d, rng);
    l.ffn2 = LinearLayer::make(2 * d, d, rng);
    l.ln_ffn = LayerNormLayer::make(d);
    return l;
}

Tensor DecoderLayer::forward(const Tensor& x, const Tensor& query_pos, const Tensor& ref,
                             const FlattenedMemory& memory) const {
    Tensor qk_in = add(x, query_pos);
    Tensor sa = o_proj.forward(
        dense_attention(q_proj.forward(qk_in), k_proj.forward(qk_in), v_proj.forward(x), heads));
    Tensor h = ln_self.forward(add(x, sa));
    Tensor ca = cross.forward(add(h, query_pos), ref, memory.tokens, memory.levels);
    h = ln_cross.forward(add(h, ca));
    Tensor ff = ffn2.forward(relu(ffn1.forward(h)));
    return ln_ffn.forward(add(h, ff));
}

void DecoderLayer::register_params(ParamStore& ps, const std::string& prefix) {
    q_proj.register_params(ps, prefix + ".q");
    k_proj.register_params(ps, prefix + ".k");
    v_proj.register_params(ps, prefix + ".v");
    o_proj.register_params(ps, prefix + ".o");
    ln_self.register_params(ps, prefix + ".ln_self");
    cross.register_params(ps, prefix + ".cross");
    ln_cross.register_params(ps, prefix + ".ln_cross");
    ffn1.register_params(ps, prefix + ".ffn1");
    ffn2.register_params(ps, prefix + ".ffn2");
    ln_ffn.register_params(ps, prefix + ".ln_ffn");
}

DeformableTransformer DeformableTransformer::make(int width, int heads, int points,
                                                  int enc_layers, int dec_layers,
                                                  int num_queries, Rng& rng) {
    DeformableTransformer t;
    t.width = width;
    t.heads = heads;
    t.points = points;
    t.num_queries = num_queries;
    t.level_embed = Tensor::zeros({4, width}, true);
    for (auto& v : t.level_embed.vec()) v = rng.normal(0.0, 0.5);
    for (int i = 0; i < enc_layers; ++i)
        t.encoder.push_back(EncoderLayer::make(width, heads, points, 4, rng));
    for (int i = 0; i < dec_layers; ++i)
        t.decoder.push_back(DecoderLayer::make(width, heads, points, 4, rng));
    t.query_embed = Tensor::zeros({num_queries, width}, true);
    for (auto& v : t.query_embed.vec()) v = rng.normal(0.0, 1.0);
    t.query_pos = Tensor::zeros({num_queries, width}, true);
    for (auto& v : t.query_pos.vec()) v = rng.normal(0.0, 1.0);
    t.ref_head = LinearLayer::make(width, 2, rng);

    // Seed the reference points on a jittered grid: the first two channels
    // of query_pos carry grid logits and ref_head starts as their identity,
    // so sigmoid(ref_head(query_pos)) tiles the image. Queries then claim
    // territory from the first epoch instead of churning through matches.
    const int side = std::max(1, static_cast<int>(std::ceil(std::sqrt(static_cast<real>(num_queries)))));
    auto logit = [](real p) { return std::log(p / (1.0 - p)); };
    for (int q = 0; q < num_queries; ++q) {
        const real gx = ((q % side) + 0.5) / side + rng.uniform(-0.04, 0.04);
        const real gy = ((q / side) + 0.5) / side + rng.uniform(-0.04, 0.04);
        t.query_pos.data()[q * width + 0] = logit(std::clamp(gx, 0.05, 0.95));
        t.query_pos.data()[q * width + 1] = logit(std::clamp(gy, 0.05, 0.95));
    }
    std::fill(t.ref_head.weight.vec().begin(), t.ref_head.weight.vec().end(), 0.0);
    t.ref_head.weight.data()[0 * width + 0] = 1.0;
    t.ref_head.weight.data()[1 * width + 1] = 1.0;
    return t;
}

FlattenedMemory DeformableTransformer::flatten(const FeaturePyramid& pyramid) const {
    if (pyramid.levels.size() != 5)
        throw std::invalid_argument("transformer: expected a five-level pyramid");
    std::vector<Tensor> levels(pyramid.levels.begin() + 1, pyramid.levels.end());  // P3..P6
    std::vector<Tensor> encodings;
    encodings.reserve(levels.size());
    for (const auto& p : levels) encodings.push_back(sine_encoding(p.dim(1), p.dim(2), width));
    return flatten_pyramid(levels, encodings, level_embed);
}

Tensor DeformableTransformer::encode(const FlattenedMemory& mem) const {
    Tensor x = mem.tokens;
    for (const auto& layer : encoder) x = layer.forward(x, mem.token_refs, mem.levels);
    return x;
}

TransformerOutput DeformableTransformer::forward(const FeaturePyramid& pyramid) const {
    TransformerOutput out;
    out.memory = flatten(pyramid);
    out.memory.tokens = encode(out.memory);
    out.reference_points = sigmoid(ref_head.forward(query_pos));
    Tensor x = query_embed;
    for (const auto& layer : decoder)
        x = layer.forward(x, query_pos, out.reference_points, out.memory);
    out.object_features = x;
    return out;
}

void DeformableTransformer::register_params(ParamStore& ps, const std::string& prefix) {
    ps.add(prefix + ".level_embed", level_embed);
    for (size_t i = 0; i < encoder.size(); ++i)
        encoder[i].register_params(ps, prefix + ".enc" + std::to_string(i));
    for (size_t i = 0; i < decoder.size(); ++i)
        decoder[i].register_params(ps, prefix + ".dec" + std::to_string(i));
    ps.add(prefix + ".query_embed", query_embed);
    ps.add(prefix + ".query_pos", query_pos);
    ref_head.register_params(ps, prefix + ".ref_head");
}

}  // namespace isda
