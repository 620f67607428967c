#pragma once

// Differentiable operators. Each op computes its forward value eagerly and,
// when a tape is active and some input tracks a gradient, records a backward
// rule on that tape. Binary elementwise ops require identical shapes; the
// only broadcasting is the bias of conv/linear layers.

#include <cstddef>

#include "olva/rng.hpp"
#include "olva/tensor.hpp"

namespace olva::ops {

template <std::floating_point T> BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <std::floating_point T> BasicTensor<T> sub(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <std::floating_point T> BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <std::floating_point T> BasicTensor<T> div(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <std::floating_point T> BasicTensor<T> scale(const BasicTensor<T>& x, T factor);
template <std::floating_point T> BasicTensor<T> add_scalar(const BasicTensor<T>& x, T offset);
template <std::floating_point T> BasicTensor<T> square(const BasicTensor<T>& x);
/// Throws NumericDomainError for any non-positive entry.
template <std::floating_point T> BasicTensor<T> log(const BasicTensor<T>& x);
/// Throws NumericDomainError when a result overflows.
template <std::floating_point T> BasicTensor<T> exp(const BasicTensor<T>& x);

template <std::floating_point T> BasicTensor<T> leaky_relu(const BasicTensor<T>& x, T slope);
template <std::floating_point T> BasicTensor<T> sigmoid(const BasicTensor<T>& x);
/// Inverted dropout: survivors scaled by 1/(1-rate) in training, identity
/// otherwise. The mask consumes one draw per element from rng.
template <std::floating_point T>
BasicTensor<T> dropout(const BasicTensor<T>& x, T rate, bool training, CounterRng& rng);

/// Scalar sum / mean over every element (shape [1]). Accumulates in double.
template <std::floating_point T> BasicTensor<T> sum(const BasicTensor<T>& x);
template <std::floating_point T> BasicTensor<T> mean(const BasicTensor<T>& x);
/// Sums over all axes at position >= keep; result has the leading `keep` axes.
template <std::floating_point T> BasicTensor<T> sum_inner(const BasicTensor<T>& x, std::size_t keep);
/// Mean squared error over all elements.
template <std::floating_point T> BasicTensor<T> mse(const BasicTensor<T>& a, const BasicTensor<T>& b);

/// y = x W^T + b with x [N, in], W [out, in], b [out].
template <std::floating_point T>
BasicTensor<T> linear(const BasicTensor<T>& x, const BasicTensor<T>& weight, const BasicTensor<T>& bias);

template <std::floating_point T> BasicTensor<T> reshape(const BasicTensor<T>& x, Shape shape);
/// Columns [begin, end) of a rank-2 tensor.
template <std::floating_point T>
BasicTensor<T> slice_cols(const BasicTensor<T>& x, std::size_t begin, std::size_t end);
/// Replicates an [N, C, 1, 1] tensor to [N, C, extent, extent].
template <std::floating_point T> BasicTensor<T> tile_spatial(const BasicTensor<T>& x, std::size_t extent);

/// sum_ij w_ij * ||a_i - b_j||^2 for a [m, K], b [n, K], w [m, n]. The
/// weights are treated as constants.
template <std::floating_point T>
BasicTensor<T> weighted_pair_sqdist(const BasicTensor<T>& a, const BasicTensor<T>& b, const BasicTensor<T>& weights);

/// input [N, C, H, W], weight [O, C, k, k], bias [O]. Square kernels only.
template <std::floating_point T>
BasicTensor<T> conv2d(const BasicTensor<T>& input, const BasicTensor<T>& weight, const BasicTensor<T>& bias,
                      std::size_t stride, std::size_t padding = 1);

/// Adjoint of conv2d. input [N, C, H, W], weight [C, O, k, k], bias [O].
/// Output extent (H-1)*stride - 2*padding + k + output_padding; with k=3,
/// padding=1 and output_padding=stride-1 this is exactly stride*H.
template <std::floating_point T>
BasicTensor<T> conv_transpose2d(const BasicTensor<T>& input, const BasicTensor<T>& weight,
                                const BasicTensor<T>& bias, std::size_t stride, std::size_t padding = 1,
                                std::size_t output_padding = static_cast<std::size_t>(-1));

}  // namespace olva::ops
