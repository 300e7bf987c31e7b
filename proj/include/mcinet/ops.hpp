#ifndef MCINET_OPS_HPP
#define MCINET_OPS_HPP

#include <vector>

#include "mcinet/autograd.hpp"

namespace mcinet {

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

struct Conv2dSpec {
  Index stride = 1;
  Index padding = 0;
  Index dilation = 1;
};

/// Output length of a convolution along one axis.
Index conv_output_size(Index input, Index kernel, const Conv2dSpec& spec);

/// x: [N, Cin, H, W], weight: [Cout, Cin, k, k], bias: [Cout] or undefined.
template <typename Scalar>
Var<Scalar> conv2d(const Var<Scalar>& x, const Var<Scalar>& weight, const Var<Scalar>& bias,
                   const Conv2dSpec& spec = {});

template <typename Scalar>
Var<Scalar> relu(const Var<Scalar>& x);

template <typename Scalar>
Var<Scalar> add(const Var<Scalar>& a, const Var<Scalar>& b);

template <typename Scalar>
Var<Scalar> scale(const Var<Scalar>& x, Scalar factor);

/// x: [N, C, H, W] times a constant [N, 1, H, W] mask broadcast over channels.
template <typename Scalar>
Var<Scalar> mul_mask(const Var<Scalar>& x, const Tensor<Scalar>& mask);

template <typename Scalar>
Var<Scalar> concat(const std::vector<Var<Scalar>>& parts, Index axis);

/// Items [start, start + count) of the leading axis.
template <typename Scalar>
Var<Scalar> slice_leading(const Var<Scalar>& x, Index start, Index count = 1);

template <typename Scalar>
Var<Scalar> reshape(const Var<Scalar>& x, Shape shape);

/// out.shape[i] = in.shape[perm[i]].
template <typename Scalar>
Var<Scalar> permute(const Var<Scalar>& x, const std::vector<Index>& perm);

/// Rank-2 [M, K] x [K, N], or batched rank-3 [B, M, K] x [B, K, N].
template <typename Scalar>
Var<Scalar> matmul(const Var<Scalar>& a, const Var<Scalar>& b, bool trans_a = false,
                   bool trans_b = false);

/// Numerically stable softmax along the last axis.
template <typename Scalar>
Var<Scalar> softmax_last(const Var<Scalar>& x);

/// Separable linear resampling of the two trailing axes: Y = R_rows X R_colsᵀ.
template <typename Scalar>
Var<Scalar> resample(const Var<Scalar>& x, const Matrix<Scalar>& rows, const Matrix<Scalar>& cols);

/// Half-pixel-centre bilinear interpolation (no antialiasing).
template <typename Scalar>
Matrix<Scalar> bilinear_weights(Index out, Index in);

/// Adaptive average pooling weights; bins [floor(i*in/out), ceil((i+1)*in/out)).
template <typename Scalar>
Matrix<Scalar> area_weights(Index out, Index in);

template <typename Scalar>
Var<Scalar> resize_bilinear(const Var<Scalar>& x, Extent out);

template <typename Scalar>
Var<Scalar> resize_area(const Var<Scalar>& x, Extent out);

template <typename Scalar>
Tensor<Scalar> resize_area(const Tensor<Scalar>& x, Extent out);

/// [N, C, H, W] -> [N, C, 1, 1].
template <typename Scalar>
Var<Scalar> global_avg_pool(const Var<Scalar>& x);

/// [N, ...] -> [1, ...], mean over the leading axis.
template <typename Scalar>
Var<Scalar> mean_leading(const Var<Scalar>& x);

/// Mean binary cross-entropy of sigmoid(logits) against target in [0, 1].
template <typename Scalar>
Var<Scalar> bce_with_logits(const Var<Scalar>& logits, const Tensor<Scalar>& target);

template <typename Scalar>
Var<Scalar> operator+(const Var<Scalar>& a, const Var<Scalar>& b) {
  return add(a, b);
}

}  // namespace mcinet

#endif  // MCINET_OPS_HPP
