#pragma once

#include <vector>

#include "isda/layers.hpp"

namespace isda {

/// AdamW with decoupled weight decay: p -= lr*wd*p, then the bias-corrected
/// Adam step on the gradient moments.
class AdamW {
public:
    AdamW(ParamStore& params, real lr, real beta1 = 0.9, real beta2 = 0.999, real eps = 1e-8,
          real weight_decay = 1e-4);

    void step();
    void set_lr(real lr) { lr_ = lr; }
    real lr() const { return lr_; }

private:
    ParamStore& params_;
    real lr_, beta1_, beta2_, eps_, weight_decay_;
    std::int64_t t_ = 0;
    std::vector<std::vector<real>> m_, v_;
};

}  // namespace isda
