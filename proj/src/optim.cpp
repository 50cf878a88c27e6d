#include "isda/optim.hpp"

#include <cmath>

namespace isda {

AdamW::AdamW(ParamStore& params, real lr, real beta1, real beta2, real eps, real weight_decay)
    : params_(params), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps),
      weight_decay_(weight_decay) {
    for (const auto& [_, t] : params_.entries()) {
        m_.emplace_back(static_cast<size_t>(t.size()), 0.0);
        v_.emplace_back(static_cast<size_t>(t.size()), 0.0);
    }
}

void AdamW::step() {
    ++t_;
    const real bc1 = 1.0 - std::pow(beta1_, static_cast<real>(t_));
    const real bc2 = 1.0 - std::pow(beta2_, static_cast<real>(t_));
    size_t idx = 0;
    for (auto& [_, p] : params_.entries()) {
        auto& m = m_[idx];
        auto& v = v_[idx];
        ++idx;
        real* pd = p.data();
        const real* g = p.grad();
        const std::int64_t n = p.size();
        for (std::int64_t i = 0; i < n; ++i) {
            pd[i] -= lr_ * weight_decay_ * pd[i];
            m[static_cast<size_t>(i)] = beta1_ * m[static_cast<size_t>(i)] + (1.0 - beta1_) * g[i];
            v[static_cast<size_t>(i)] =
                beta2_ * v[static_cast<size_t>(i)] + (1.0 - beta2_) * g[i] * g[i];
            const real mhat = m[static_cast<size_t>(i)] / bc1;
            const real vhat = v[static_cast<size_t>(i)] / bc2;
            pd[i] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
        }
    }
}

}  // namespace isda
