#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "tfm/tensor.hpp"

// Differentiable operations. Every function returns a new tensor and, when a
// gradient is being recorded, attaches its backward rule. Matrices are rank-2
// row-major; feature maps are [N, C, H, W].
namespace tfm::ops {

// Elementwise, identical shapes.
template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> scale(const Tensor<T>& a, T s);
template <typename T> Tensor<T> add_scalar(const Tensor<T>& a, T s);
template <typename T> Tensor<T> exp(const Tensor<T>& a);
template <typename T> Tensor<T> log(const Tensor<T>& a);
/// log(max(a, eps)); the gradient is zero where the guard is active.
template <typename T> Tensor<T> log_clamped(const Tensor<T>& a, T eps);
template <typename T> Tensor<T> square(const Tensor<T>& a);
template <typename T> Tensor<T> relu(const Tensor<T>& a);
/// Exact (erf) GELU.
template <typename T> Tensor<T> gelu(const Tensor<T>& a);
/// elu(a) + 1, the positive feature map of linear attention.
template <typename T> Tensor<T> elu_plus_one(const Tensor<T>& a);

// Reductions.
template <typename T> Tensor<T> sum(const Tensor<T>& a);
template <typename T> Tensor<T> mean(const Tensor<T>& a);
/// [m x n] -> [m]
template <typename T> Tensor<T> sum_rows(const Tensor<T>& a);
/// Scalar sum_i w_i a_i with constant weights.
template <typename T> Tensor<T> weighted_sum(const Tensor<T>& a, std::span<const T> weights);

// Broadcasting over rows of an [m x n] matrix with an [n] vector.
template <typename T> Tensor<T> add_row(const Tensor<T>& a, const Tensor<T>& row);
template <typename T> Tensor<T> mul_row(const Tensor<T>& a, const Tensor<T>& row);
/// Divides row r of an [m x n] matrix by d[r], d an [m] vector.
template <typename T> Tensor<T> div_col(const Tensor<T>& a, const Tensor<T>& d);

// Linear algebra.
template <typename T> Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);
/// a * b^T
template <typename T> Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> transpose(const Tensor<T>& a);
template <typename T> Tensor<T> softmax_rows(const Tensor<T>& a);
template <typename T> Tensor<T> softmax_cols(const Tensor<T>& a);

// Shape and indexing.
template <typename T> Tensor<T> reshape(const Tensor<T>& a, Shape shape);
template <typename T> Tensor<T> slice_cols(const Tensor<T>& a, std::size_t start, std::size_t len);
template <typename T> Tensor<T> concat_cols(const std::vector<Tensor<T>>& parts);
template <typename T> Tensor<T> concat_rows(const std::vector<Tensor<T>>& parts);
template <typename T> Tensor<T> gather_rows(const Tensor<T>& a, std::span<const std::size_t> rows);
/// Copy of `base` with base[rows[r]] replaced by src[r]. Rows must be distinct.
template <typename T>
Tensor<T> index_put_rows(const Tensor<T>& base, std::span<const std::size_t> rows, const Tensor<T>& src);
/// Flat gather: out[i] = a.flat[idx[i]], shape [idx.size()].
template <typename T> Tensor<T> gather_flat(const Tensor<T>& a, std::span<const std::size_t> idx);
/// Flat scatter-add into a zero vector of length n.
template <typename T>
Tensor<T> scatter_add_flat(const Tensor<T>& src, std::span<const std::size_t> idx, std::size_t n);

// Layer primitives.
template <typename T>
Tensor<T> layer_norm_rows(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps);
/// x [N,Cin,H,W], w [Cout,Cin,k,k], optional bias [Cout]; zero padding.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias, std::size_t stride,
                 std::size_t pad);
/// Per-channel batch normalization. In training mode uses batch statistics
/// and updates the running buffers; otherwise uses the buffers.
template <typename T>
Tensor<T> batch_norm2d(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                       std::vector<T>& running_mean, std::vector<T>& running_var, bool training,
                       T momentum, T eps);
/// Bilinear x2 upsampling with half-pixel centers (edge clamped).
template <typename T> Tensor<T> upsample2x(const Tensor<T>& x);
/// Keeps the top-left h x w window of every map.
template <typename T> Tensor<T> crop2d(const Tensor<T>& x, std::size_t h, std::size_t w);
/// Image n of [N,C,H,W] as an [H*W, C] matrix (row = pixel, raster order).
template <typename T> Tensor<T> to_rows(const Tensor<T>& x, std::size_t n);

}  // namespace tfm::ops
