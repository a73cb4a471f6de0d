#ifndef XMODAL_OPS_HPP_
#define XMODAL_OPS_HPP_

#include <array>
#include <cstddef>
#include <span>
#include <vector>

#include "xmodal/tensor.hpp"

namespace xmodal {

using Triple = std::array<std::size_t, 3>;

// Convolutions are cross-correlations. Inputs may carry a leading batch axis.

// input [C_in,H,W] or [B,C_in,H,W]; weight [C_out,C_in,kh,kw]; bias [C_out].
Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias,
              std::size_t stride, std::size_t padding);

// input [G,D,H,W] or [B,G,D,H,W]; weight [G_out,G,kd,kh,kw]; bias [G_out].
Tensor conv3d(const Tensor& input, const Tensor& weight, const Tensor& bias,
              Triple stride, Triple padding);

Tensor relu(const Tensor& x);
Tensor add(const Tensor& x, const Tensor& y);
Tensor scale(const Tensor& x, double factor);
// Sum of all elements as a scalar tensor.
Tensor sum(const Tensor& x);
Tensor concat(std::span<const Tensor> xs, std::size_t axis);
Tensor slice(const Tensor& x, std::size_t axis, std::size_t begin,
             std::size_t end);
// Rows of x (leading axis) at the given indices, in order.
Tensor gather_rows(const Tensor& x, std::span<const std::size_t> rows);
// Same data in a different shape; element order is unchanged.
Tensor reshape(const Tensor& x, Shape new_shape);

// Mean over the two trailing (spatial) axes: [...,H,W] -> [...].
Tensor global_avg_pool(const Tensor& x);

// x [in] or [B,in]; weight [out,in]; bias [out].
Tensor fully_connected(const Tensor& x, const Tensor& weight,
                       const Tensor& bias);

// Rows along the last axis scaled to unit norm: x / sqrt(|x|^2 + eps).
Tensor l2_normalize(const Tensor& x, double eps = 1e-12);

// Mean over rows of -log softmax(logits)[target]. logits [N_id] or [B,N_id].
Tensor softmax_cross_entropy(const Tensor& logits,
                             std::span<const std::size_t> targets);

// x [B,E] -> [B,B] with entry (i,j) = 0.5 * |x_i - x_j|^2.
Tensor pairwise_sq_distance(const Tensor& x);

struct HingeTriple {
  std::size_t anchor;
  std::size_t positive;
  std::size_t negative;
};

// Sum over triples of max(0, margin + d[a,p] - d[a,n]) for a square
// distance matrix d. The kink (pre-hinge value <= 0) has zero gradient.
Tensor hinge_sum(const Tensor& distances, std::span<const HingeTriple> triples,
                 double margin);

}  // namespace xmodal

#endif  // XMODAL_OPS_HPP_
