#pragma once

#include "corrnet/autograd.hpp"
#include "corrnet/tensor.hpp"

#include <array>
#include <optional>
#include <vector>

namespace corrnet {

/// Convolution geometry over the (temporal, height, width) axes of a [T, C, H, W] or [T, C]
/// operand. Padding is always symmetric zero padding of `dilation * (kernel - 1) / 2`, which
/// keeps every axis length unchanged at stride 1.
struct ConvSpec {
  std::array<Index, 3> kernel{1, 1, 1};
  std::array<Index, 3> dilation{1, 1, 1};
  std::array<Index, 3> stride{1, 1, 1};
  Index groups = 1;

  static ConvSpec temporal(Index k, Index dilation = 1, Index groups = 1, Index stride = 1) {
    return {{k, 1, 1}, {dilation, 1, 1}, {stride, 1, 1}, groups};
  }
  static ConvSpec spatiotemporal(Index kt, Index ks, Index dt, Index ds, Index groups = 1) {
    return {{kt, ks, ks}, {dt, ds, ds}, {1, 1, 1}, groups};
  }
  static ConvSpec frame(Index ks, Index stride = 1, Index groups = 1) {
    return {{1, ks, ks}, {1, 1, 1}, {1, stride, stride}, groups};
  }
  static ConvSpec pointwise(Index groups = 1) { return {{1, 1, 1}, {1, 1, 1}, {1, 1, 1}, groups}; }

  Index padding(int axis) const { return dilation[axis] * (kernel[axis] - 1) / 2; }
  Index output_extent(int axis, Index n) const {
    return (n + 2 * padding(axis) - dilation[axis] * (kernel[axis] - 1) - 1) / stride[axis] + 1;
  }
  void validate() const;
};

enum class PoolMode { Average, Max };

// Tensor-level kernels ----------------------------------------------------------------------

/// Grouped, dilated convolution. `input` is [T, C] with kernel [Co, C/g, Kt], or
/// [T, C, H, W] with kernel [Co, C/g, Kt, Kh, Kw].
template <typename Scalar>
Tensor<Scalar> conv_nd(const Tensor<Scalar>& input, const Tensor<Scalar>& kernel,
                       const ConvSpec& spec);

/// Collapses the two trailing spatial axes of [T, C, H, W] to 1x1.
template <typename Scalar>
Tensor<Scalar> pool_spatial(const Tensor<Scalar>& input, PoolMode mode);

template <typename Scalar>
Tensor<Scalar> softmax_lastaxis(const Tensor<Scalar>& input);

/// sigmoid(x) - 0.5, evaluated as 0.5 * tanh(x / 2) and rounded toward zero into the open
/// interval (-0.5, 0.5) when the mathematical value is closer to the bound than one ulp.
template <typename Scalar>
Scalar centered_sigmoid(Scalar x);

// Differentiable primitives -----------------------------------------------------------------

namespace ops {

template <typename S> Var<S> add(const Var<S>& a, const Var<S>& b);
template <typename S> Var<S> sub(const Var<S>& a, const Var<S>& b);
template <typename S> Var<S> mul(const Var<S>& a, const Var<S>& b);
template <typename S> Var<S> scale(const Var<S>& a, S factor);
template <typename S> Var<S> add_scalar(const Var<S>& a, S offset);
/// `gain` holds a single value.
template <typename S> Var<S> scale_by(const Var<S>& a, const Var<S>& gain);
/// sum_i coeffs[i] * terms[i] over equally shaped terms.
template <typename S> Var<S> mix(const std::vector<Var<S>>& terms, const Var<S>& coeffs);

template <typename S> Var<S> relu(const Var<S>& a);
template <typename S> Var<S> sigmoid(const Var<S>& a);
template <typename S> Var<S> tanh(const Var<S>& a);
template <typename S> Var<S> centered_sigmoid(const Var<S>& a);

template <typename S> Var<S> sum(const Var<S>& a);
template <typename S> Var<S> mean(const Var<S>& a);
template <typename S> Var<S> reshape(const Var<S>& a, Shape shape);

/// a[m,k] * b[k,n]
template <typename S> Var<S> matmul(const Var<S>& a, const Var<S>& b);
/// x[n,in] * w[out,in]^T (+ bias[out])
template <typename S>
Var<S> linear(const Var<S>& x, const Var<S>& weight, const std::optional<Var<S>>& bias = {});
template <typename S>
Var<S> linear(const Var<S>& x, const Var<S>& weight, const Var<S>& bias) {
  return linear(x, weight, std::optional<Var<S>>(bias));
}
/// Adds bias[C] along axis 1 of a [T, C, ...] operand.
template <typename S> Var<S> add_channel_bias(const Var<S>& x, const Var<S>& bias);

template <typename S> Var<S> conv_nd(const Var<S>& x, const Var<S>& kernel, const ConvSpec& spec);
template <typename S> Var<S> pool_spatial(const Var<S>& x, PoolMode mode);
/// Non-overlapping max pooling over the leading (time) axis of [T, C]; output floor(T / k).
template <typename S> Var<S> max_pool_time(const Var<S>& x, Index window);
template <typename S> Var<S> softmax_lastaxis(const Var<S>& x);

/// x[T,C,H,W] * e[T,C] with e broadcast over H x W. `e` may also be [T,C,1,1].
template <typename S> Var<S> broadcast_mul_spatial(const Var<S>& x, const Var<S>& e);

template <typename S> Var<S> slice_rows(const Var<S>& x, Index begin, Index count);
template <typename S> Var<S> slice_cols(const Var<S>& x, Index begin, Index count);
template <typename S> Var<S> concat_cols(const std::vector<Var<S>>& parts);
/// Stacks equally sized operands as rows of a matrix.
template <typename S> Var<S> stack_rows(const std::vector<Var<S>>& rows);

/// [T,C,H,W] -> [T,C,L,H,W], slot l holding frame clamp(t + offsets[l], 0, T-1).
template <typename S> Var<S> gather_neighbors(const Var<S>& x, const std::vector<int>& offsets);
/// out[t,l,p] = sum_c desc[t,c] * neighbors[t,c,l,p]
template <typename S> Var<S> neighbor_affinity(const Var<S>& desc, const Var<S>& neighbors);
/// out[t,c] = sum_l beta[l] sum_p maps[t,l,p] * neighbors[t,c,l,p]
template <typename S>
Var<S> neighbor_aggregate(const Var<S>& maps, const Var<S>& neighbors, const Var<S>& beta);
/// Single-query scaled dot-product attention over the spatial positions of each frame:
/// out[t,:] = sum_p softmax_p(q . x[t,:,p] / sqrt(C)) x[t,:,p].
template <typename S> Var<S> attention_pool(const Var<S>& x, const Var<S>& query);

}  // namespace ops
}  // namespace corrnet
