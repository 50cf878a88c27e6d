#pragma once

#include <vector>

#include "isda/tensor.hpp"

namespace isda {

// ---- elementwise -----------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
// b must match a's shape or be a size-1 tensor.
Tensor div(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, real c);
Tensor add_scalar(const Tensor& a, real c);
// Broadcast a learnable size-1 tensor over every element.
Tensor add_scalar_t(const Tensor& a, const Tensor& s);
// Broadcast-add a [1,D] row over every row of x[N,D].
Tensor add_rows(const Tensor& x, const Tensor& v);
Tensor relu(const Tensor& a);
Tensor sigmoid(const Tensor& a);

// ---- reductions ------------------------------------------------------------

Tensor sum(const Tensor& a);   // -> [1]
Tensor mean(const Tensor& a);  // -> [1]

// ---- linear algebra --------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);                       // [m,k]x[k,n]
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);      // x[n,di], w[do,di], b[do]
Tensor transpose2d(const Tensor& a);

// ---- shape plumbing --------------------------------------------------------

Tensor reshape(const Tensor& a, std::vector<int> shape);
Tensor slice_rows(const Tensor& a, int start, int count);   // 2-D
Tensor slice_cols(const Tensor& a, int start, int count);   // 2-D
Tensor concat_cols(const Tensor& a, const Tensor& b);       // 2-D
Tensor concat_rows(const Tensor& a, const Tensor& b);       // 2-D
Tensor concat_vec(const Tensor& a, const Tensor& b);        // 1-D
Tensor concat_channels(const Tensor& a, const Tensor& b);   // [C,H,W]

// ---- normalization & attention nonlinearities ------------------------------

// Softmax over each contiguous `block` of every row of x[n, m], block | m.
Tensor softmax_blocks(const Tensor& x, int block);
Tensor softmax_rows(const Tensor& x);
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, real eps);
// x[C,H,W]; per-group mean 0 / var 1 before the affine.
Tensor group_norm(const Tensor& x, int groups, const Tensor& gamma, const Tensor& beta,
                  real eps);

// ---- spatial ops -----------------------------------------------------------

// Cross-correlation, zero padding, square kernel w[Co,Ci,k,k].
Tensor conv2d(const Tensor& input, const Tensor& kernel, int padding, int stride = 1);
Tensor add_channel_bias(const Tensor& x, const Tensor& b);
// points[P,2] as (x, y) in [0,1]; outside the grid samples read zeros.
Tensor bilinear_sample(const Tensor& value, const Tensor& points);
// align_corners=false, edge-clamped source coordinates.
Tensor bilinear_upsample2x(const Tensor& input);

// ---- fused attention kernels -----------------------------------------------

// Multi-scale deformable aggregation. `values[l]` is [D,H_l,W_l]; channels
// split into `heads` groups. Each head carries K offsets in cell units,
// applied at every level: the sampling point of (q, m, l, k) is
// ref[q] + offsets[q, (m*K+k)*2+{0,1}] / (W_l, H_l) in [0,1] space.
// weights[q, (m*L+l)*K+k] multiply each sample; output is [Q,D].
Tensor deform_aggregate(const std::vector<Tensor>& values, const Tensor& ref,
                        const Tensor& offsets, const Tensor& weights, int heads,
                        int points_per_level);

// Dense softmax(q k^T / sqrt(d_h)) v over rows, multi-head on the channel
// axis. Forward reductions over the row axis use value-ordered summation so
// the result is bitwise invariant under a permutation of the rows.
Tensor dense_attention(const Tensor& q, const Tensor& k, const Tensor& v, int heads);

// ---- losses ----------------------------------------------------------------

// Weighted mean of per-row cross-entropy (log-sum-exp form), normalized by
// the weight sum.
Tensor cross_entropy_rows(const Tensor& logits, const std::vector<int>& targets,
                          const std::vector<real>& weights);

}  // namespace isda
