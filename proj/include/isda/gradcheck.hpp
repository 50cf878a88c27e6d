#pragma once

#include <functional>
#include <string>
#include <vector>

#include "isda/tensor.hpp"

namespace isda {

struct CheckResult {
    std::string name;
    real max_rel_err = 0;
    bool pass = false;
};

/// Central finite differences (h = 1e-5) against the recorded backward for
/// every element of `wrt`. `loss_fn` must rebuild the graph from the
/// tensors' current data on every call. Relative error uses a 1e-3
/// magnitude floor so near-zero gradients are compared absolutely.
real fd_gradcheck(const std::vector<Tensor>& wrt, const std::function<Tensor()>& loss_fn,
                  real h = 1e-5);

/// Finite-difference checks for every differentiable operation plus the
/// full image-to-loss pipeline at tiny dimensions. Tolerance 1e-4.
std::vector<CheckResult> run_gradcheck_suite(int threads = 0);

}  // namespace isda
