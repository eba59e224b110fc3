#pragma once

// Differentiable operations on fbd::Tensor. Spatial tensors are laid out
// [C, D, H, W] (W fastest), token matrices [N, M] (M fastest).

#include <vector>

#include "fbd/tensor.hpp"

namespace fbd::ops {

template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> add_scalar(const Tensor<T>& a, T s);
template <typename T> Tensor<T> mul_scalar(const Tensor<T>& a, T s);
template <typename T> Tensor<T> neg(const Tensor<T>& a);
template <typename T> Tensor<T> exp(const Tensor<T>& a);
template <typename T> Tensor<T> log(const Tensor<T>& a);
template <typename T> Tensor<T> square(const Tensor<T>& a);

// Reductions to a 0-d tensor.
template <typename T> Tensor<T> sum(const Tensor<T>& a);
template <typename T> Tensor<T> mean(const Tensor<T>& a);
// [C, ...] -> [C]: sum over everything but the leading axis.
template <typename T> Tensor<T> channel_sum(const Tensor<T>& a);
// Inner product of two equal-shaped tensors, as a 0-d tensor.
template <typename T> Tensor<T> dot(const Tensor<T>& a, const Tensor<T>& b);

template <typename T> Tensor<T> leaky_relu(const Tensor<T>& a, T negative_slope = T(0.01));
template <typename T> Tensor<T> sigmoid(const Tensor<T>& a);
// Exact (erf) form.
template <typename T> Tensor<T> gelu(const Tensor<T>& a);

template <typename T> Tensor<T> reshape(const Tensor<T>& a, Shape shape);

// Concatenate / slice along the leading axis (channels or rows).
template <typename T> Tensor<T> concat(const std::vector<Tensor<T>>& parts);
template <typename T> Tensor<T> slice(const Tensor<T>& a, std::int64_t start, std::int64_t length);

// 2-D column slicing and concatenation, used for attention heads.
template <typename T> Tensor<T> slice_cols(const Tensor<T>& a, std::int64_t start, std::int64_t length);
template <typename T> Tensor<T> concat_cols(const std::vector<Tensor<T>>& parts);

// Softmax across the leading (channel) axis, independently per voxel.
// Throws DataError on non-finite input.
template <typename T> Tensor<T> softmax_channels(const Tensor<T>& a);
// Softmax across the last axis of a 2-D tensor.
template <typename T> Tensor<T> softmax_rows(const Tensor<T>& a);

// [M,K] x [K,N] with optional transposition of either operand.
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b, bool transpose_a = false,
                 bool transpose_b = false);
// [N,M] + bias[M] broadcast over rows.
template <typename T> Tensor<T> add_row_bias(const Tensor<T>& a, const Tensor<T>& bias);
// [C,...] + bias[C] broadcast over the trailing axes.
template <typename T> Tensor<T> add_channel_bias(const Tensor<T>& a, const Tensor<T>& bias);

// Normalizes each row of [N,M] then applies gamma[M], beta[M].
template <typename T>
Tensor<T> layer_norm_rows(const Tensor<T>& a, const Tensor<T>& gamma, const Tensor<T>& beta,
                          T eps = T(1e-5));
// Per-channel normalization over the spatial axes of [C,D,H,W] with affine gamma[C], beta[C].
template <typename T>
Tensor<T> instance_norm(const Tensor<T>& a, const Tensor<T>& gamma, const Tensor<T>& beta,
                        T eps = T(1e-5));

// input [Cin,D,H,W], kernel [Cout,Cin,k,k,k] -> [Cout,D',H',W'],
// D' = floor((D + 2*padding - k)/stride) + 1.
template <typename T>
Tensor<T> conv3d(const Tensor<T>& input, const Tensor<T>& kernel, int stride = 1, int padding = 0);
// Adjoint of conv3d w.r.t. its input. input [Cin,D,H,W], kernel [Cin,Cout,k,k,k]
// -> [Cout,D',H',W'], D' = (D-1)*stride - 2*padding + k + output_padding.
template <typename T>
Tensor<T> conv_transpose3d(const Tensor<T>& input, const Tensor<T>& kernel, int stride = 1,
                           int padding = 0, int output_padding = 0);

// [C,D,H,W] -> [(D/p)(H/p)(W/p), C*p^3]; tokens in raster order of the patch
// grid, each token channel-major then z,y,x inside the patch.
template <typename T> Tensor<T> patchify(const Tensor<T>& a, int patch);
// Inverse of patchify.
template <typename T>
Tensor<T> unpatchify(const Tensor<T>& tokens, std::int64_t channels, std::int64_t depth,
                     std::int64_t height, std::int64_t width, int patch);

}  // namespace fbd::ops
