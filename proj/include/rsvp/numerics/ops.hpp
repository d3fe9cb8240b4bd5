#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "rsvp/numerics/rng.hpp"
#include "rsvp/numerics/tensor.hpp"

namespace rsvp::num {

// Matrices are rank-2 row-major tensors; vectors are rank-1.

template <typename T> Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> transpose(const Tensor<T>& a);
template <typename T> Tensor<T> reshape(const Tensor<T>& a, Shape shape);

template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> scale(const Tensor<T>& a, T factor);
// x: m x n, bias: n (broadcast over rows).
template <typename T> Tensor<T> add_bias(const Tensor<T>& x, const Tensor<T>& bias);

template <typename T> Tensor<T> tanh(const Tensor<T>& x);
// Exact (erf) GELU.
template <typename T> Tensor<T> gelu(const Tensor<T>& x);
template <typename T> Tensor<T> softplus(const Tensor<T>& x);
template <typename T> Tensor<T> log(const Tensor<T>& x);

template <typename T> Tensor<T> sum(const Tensor<T>& x);
template <typename T> Tensor<T> mean(const Tensor<T>& x);

// Max-subtracted softmax along `axis`.
template <typename T> Tensor<T> softmax(const Tensor<T>& x, std::size_t axis);
template <typename T> Tensor<T> log_softmax(const Tensor<T>& x, std::size_t axis);

// Row-wise normalization of an m x n matrix with affine gamma/beta (length n).
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     T eps = T(1e-5));

// Inverted dropout. Identity when !training or p == 0.
template <typename T> Tensor<T> dropout(const Tensor<T>& x, double p, Rng& rng, bool training);

// Row lookup: table V x d, ids -> len x d.
template <typename T> Tensor<T> embedding(const Tensor<T>& table, std::span<const int> ids);
// Rows of an m x n matrix -> k x n.
template <typename T> Tensor<T> select_rows(const Tensor<T>& x, std::span<const std::size_t> rows);
// out[i] = x[i, cols[i]] for an m x n matrix.
template <typename T> Tensor<T> pick(const Tensor<T>& x, std::span<const int> cols);

// dot(a,b) / max(|a||b|, eps), vectors of equal length. Returns shape [1].
template <typename T>
Tensor<T> cosine_similarity(const Tensor<T>& a, const Tensor<T>& b, T eps = T(1e-8));
// S[i,j] = cosine(A row i, B row j) with the same eps guard. A: n x d, B: m x d.
template <typename T>
Tensor<T> cosine_matrix(const Tensor<T>& a, const Tensor<T>& b, T eps = T(1e-8));

struct AttentionSpec {
  std::size_t batch = 1;
  std::size_t query_len = 1;
  std::size_t key_len = 1;
  std::size_t heads = 1;
  // batch * key_len flags; empty means all keys valid.
  std::span<const std::uint8_t> key_valid;
  bool causal = false;
};

// Scaled dot-product attention over packed sequences. q: (batch*query_len) x D,
// k and v: (batch*key_len) x D, D divisible by heads. Masked keys get zero
// weight; a query row with no visible key yields zeros.
template <typename T>
Tensor<T> attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                    const AttentionSpec& spec);

}  // namespace rsvp::num
