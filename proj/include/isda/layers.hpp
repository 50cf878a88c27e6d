#pragma once

#include <string>
#include <utility>
#include <vector>

#include "isda/ops.hpp"
#include "isda/rng.hpp"
#include "isda/tensor.hpp"

namespace isda {

/// Ordered name -> parameter registry. Registration order is the canonical
/// order for checkpoints, optimizer state and gradient merging.
class ParamStore {
public:
    void add(std::string name, Tensor t);
    const std::vector<std::pair<std::string, Tensor>>& entries() const { return entries_; }
    std::vector<std::pair<std::string, Tensor>>& entries() { return entries_; }
    Tensor* find(const std::string& name);
    std::int64_t total_size() const;
    void zero_grads();

private:
    std::vector<std::pair<std::string, Tensor>> entries_;
};

struct Conv2dLayer {
    Tensor weight, bias;
    int padding = 1;
    int stride = 1;

    static Conv2dLayer make(int in_ch, int out_ch, int k, int padding, int stride, Rng& rng);
    Tensor forward(const Tensor& x) const { return add_channel_bias(conv2d(x, weight, padding, stride), bias); }
    void register_params(ParamStore& ps, const std::string& prefix);
};

struct GroupNormLayer {
    Tensor gamma, beta;
    int groups = 1;
    real eps = 1e-5;

    static GroupNormLayer make(int channels, int groups);
    Tensor forward(const Tensor& x) const { return group_norm(x, groups, gamma, beta, eps); }
    void register_params(ParamStore& ps, const std::string& prefix);
};

struct LinearLayer {
    Tensor weight, bias;

    static LinearLayer make(int in_dim, int out_dim, Rng& rng);
    Tensor forward(const Tensor& x) const { return linear(x, weight, bias); }
    void register_params(ParamStore& ps, const std::string& prefix);
};

struct LayerNormLayer {
    Tensor gamma, beta;
    real eps = 1e-5;

    static LayerNormLayer make(int dim);
    Tensor forward(const Tensor& x) const { return layer_norm(x, gamma, beta, eps); }
    void register_params(ParamStore& ps, const std::string& prefix);
};

/// Two hidden layers of the given width, ReLU activations.
struct Ffn {
    LinearLayer h1, h2, out;

    static Ffn make(int in_dim, int hidden, int out_dim, Rng& rng);
    Tensor forward(const Tensor& x) const { return out.forward(relu(h2.forward(relu(h1.forward(x))))); }
    void register_params(ParamStore& ps, const std::string& prefix);
};

}  // namespace isda
