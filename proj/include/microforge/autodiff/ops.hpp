#pragma once

#include <span>
#include <vector>

#include "microforge/autodiff/tensor.hpp"

namespace mf::ad {

// Elementwise, identical shapes.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor square(const Tensor& a);
Tensor gelu(const Tensor& a);

/// x (r x c) plus a (1 x c) row broadcast to every row.
Tensor add_row(const Tensor& x, const Tensor& row);

/// (m x k) . (k x n)
Tensor matmul(const Tensor& a, const Tensor& b);
/// x . w + bias, with w (in x out) and bias (1 x out).
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias);
Tensor transpose(const Tensor& a);
Tensor reshape(const Tensor& a, Shape shape);

/// Rows of a (rank 2) picked by index; indices may repeat.
Tensor gather_rows(const Tensor& a, std::span<const std::size_t> index);
/// Stacks rank-2 tensors with equal column counts.
Tensor concat_rows(const std::vector<Tensor>& parts);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);

/// Softmax over the last axis (rank 2), max-subtracted.
Tensor softmax(const Tensor& a);

inline constexpr double kLayerNormEps = 1e-9;
/// Layer norm over the last axis with learnable scale/shift of shape (1 x c).
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = kLayerNormEps);

/// Multi-head scaled dot-product self-attention.
///
/// qkv holds `batch * seq_len` rows laid out as [q | k | v], each block
/// `heads * head_dim` wide. Sequences attend only within themselves.
Tensor self_attention(const Tensor& qkv, std::size_t seq_len, std::size_t heads);

/// mean((a - b)^2)
Tensor mse(const Tensor& a, const Tensor& b);

namespace kernel {
/// c (m x n) += a (m x k) . b (k x n), row-major.
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c);
/// c (m x n) += a^T . b with a stored (k x m), b (k x n).
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c);
/// c (m x n) += a . b^T with a (m x k), b stored (n x k).
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c);
}  // namespace kernel

}  // namespace mf::ad
