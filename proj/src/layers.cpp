#include "isda/layers.hpp"

#include <cmath>
#include <stdexcept>

namespace isda {

void ParamStore::add(std::string name, Tensor t) {
    for (const auto& [n, _] : entries_)
        if (n == name) throw std::invalid_argument("duplicate parameter name: " + name);
    entries_.emplace_back(std::move(name), std::move(t));
}

Tensor* ParamStore::find(const std::string& name) {
    for (auto& [n, t] : entries_)
        if (n == name) return &t;
    return nullptr;
}

std::int64_t ParamStore::total_size() const {
    std::int64_t n = 0;
    for (const auto& [_, t] : entries_) n += t.size();
    return n;
}

void ParamStore::zero_grads() {
    for (auto& [_, t] : entries_) t.zero_grad();
}

namespace {

Tensor kaiming_uniform(std::vector<int> shape, int fan_in, Rng& rng) {
    Tensor t = Tensor::zeros(std::move(shape), true);
    const real bound = 1.0 / std::sqrt(static_cast<real>(fan_in));
    for (auto& v : t.vec()) v = rng.uniform(-bound, bound);
    return t;
}

}  // namespace

Conv2dLayer Conv2dLayer::make(int in_ch, int out_ch, int k, int padding, int stride, Rng& rng) {
    Conv2dLayer l;
    l.weight = kaiming_uniform({out_ch, in_ch, k, k}, in_ch * k * k, rng);
    l.bias = Tensor::zeros({out_ch}, true);
    l.padding = padding;
    l.stride = stride;
    return l;
}

void Conv2dLayer::register_params(ParamStore& ps, const std::string& prefix) {
    ps.add(prefix + ".weight", weight);
    ps.add(prefix + ".bias", bias);
}

GroupNormLayer GroupNormLayer::make(int channels, int groups) {
    GroupNormLayer l;
    l.gamma = Tensor::full({channels}, 1.0, true);
    l.beta = Tensor::zeros({channels}, true);
    l.groups = groups;
    return l;
}

void GroupNormLayer::register_params(ParamStore& ps, const std::string& prefix) {
    ps.add(prefix + ".gamma", gamma);
    ps.add(prefix + ".beta", beta);
}

LinearLayer LinearLayer::make(int in_dim, int out_dim, Rng& rng) {
    LinearLayer l;
    l.weight = kaiming_uniform({out_dim, in_dim}, in_dim, rng);
    l.bias = Tensor::zeros({out_dim}, true);
    return l;
}

void LinearLayer::register_params(ParamStore& ps, const std::string& prefix) {
    ps.add(prefix + ".weight", weight);
    ps.add(prefix + ".bias", bias);
}

LayerNormLayer LayerNormLayer::make(int dim) {
    LayerNormLayer l;
    l.gamma = Tensor::full({dim}, 1.0, true);
    l.beta = Tensor::zeros({dim}, true);
    return l;
}

void LayerNormLayer::register_params(ParamStore& ps, const std::string& prefix) {
    ps.add(prefix + ".gamma", gamma);
    ps.add(prefix + ".beta", beta);
}

Ffn Ffn::make(int in_dim, int hidden, int out_dim, Rng& rng) {
    Ffn f;
    f.h1 = LinearLayer::make(in_dim, hidden, rng);
    f.h2 = LinearLayer::make(hidden, hidden, rng);
    f.out = LinearLayer::make(hidden, out_dim, rng);
    return f;
}

void Ffn::register_params(ParamStore& ps, const std::string& prefix) {
    h1.register_params(ps, prefix + ".h1");
    h2.register_params(ps, prefix + ".h2");
    out.register_params(ps, prefix + ".out");
}

}  // namespace isda
