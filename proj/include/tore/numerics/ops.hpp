#pragma once

#include <cstdint>
#include <vector>

#include "tore/numerics/tensor.hpp"

namespace tore {

/// Boolean attention mask, `allow[q * keys + k]` true means query q may
/// attend to key k.
class AttnMask {
 public:
  AttnMask() = default;
  AttnMask(std::size_t queries, std::size_t keys, std::vector<std::uint8_t> allow);
  static AttnMask all(std::size_t queries, std::size_t keys);

  std::size_t queries() const { return queries_; }
  std::size_t keys() const { return keys_; }
  bool allowed(std::size_t q, std::size_t k) const { return allow_[q * keys_ + k] != 0; }
  std::size_t row_count(std::size_t q) const;
  /// Total number of allowed (query, key) pairs.
  std::size_t allowed_count() const { return allowed_; }
  const std::vector<std::uint8_t>& raw() const { return allow_; }

 private:
  std::size_t queries_ = 0;
  std::size_t keys_ = 0;
  std::vector<std::uint8_t> allow_;
  std::size_t allowed_ = 0;
};

template <typename T>
struct AttentionResult {
  BasicTensor<T> out;      // [Q x d]
  BasicTensor<T> weights;  // [heads x Q x K], constant (no graph)
};

enum class Axis { Rows = 0, Cols = 1 };

// Elementwise and broadcasting arithmetic.
template <typename T> BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <typename T> BasicTensor<T> sub(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <typename T> BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <typename T> BasicTensor<T> scale(const BasicTensor<T>& x, double factor);
/// x[N x C] + row[C] broadcast over rows.
template <typename T> BasicTensor<T> add_row(const BasicTensor<T>& x, const BasicTensor<T>& row);
/// x * s where s holds a single element.
template <typename T> BasicTensor<T> mul_scalar(const BasicTensor<T>& x, const BasicTensor<T>& s);

// Linear algebra.
template <typename T> BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b);
/// x[N x in] * weight[in x out] + bias[out]; bias may be undefined.
template <typename T>
BasicTensor<T> linear(const BasicTensor<T>& x, const BasicTensor<T>& weight, const BasicTensor<T>& bias);
template <typename T> BasicTensor<T> transpose(const BasicTensor<T>& x);

// Nonlinearities and normalization.
/// Softmax of a 2-D tensor, max-subtracted. Axis::Rows normalizes each column
/// (sums over rows are 1); Axis::Cols normalizes each row.
template <typename T> BasicTensor<T> softmax(const BasicTensor<T>& x, Axis axis);
/// Normalizes each row of x[N x d]; gamma/beta may be undefined (no affine).
template <typename T>
BasicTensor<T> layer_norm(const BasicTensor<T>& x, const BasicTensor<T>& gamma, const BasicTensor<T>& beta,
                          double eps = 1e-5);
/// Exact GELU, x * Phi(x).
template <typename T> BasicTensor<T> gelu(const BasicTensor<T>& x);
template <typename T> BasicTensor<T> softplus(const BasicTensor<T>& x);

/// 2-D convolution over an [H x W x Cin] map with weight [Cout x k x k x Cin]
/// and bias [Cout] (may be undefined). Zero padding.
template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& x, const BasicTensor<T>& weight, const BasicTensor<T>& bias,
                      std::size_t stride = 1, std::size_t pad = 1);

// Reductions and distances.
template <typename T> BasicTensor<T> sum(const BasicTensor<T>& x);
template <typename T> BasicTensor<T> mean(const BasicTensor<T>& x);
/// mean(|a - b|) over all elements.
template <typename T> BasicTensor<T> l1_mean(const BasicTensor<T>& a, const BasicTensor<T>& b);

// Shape manipulation.
template <typename T> BasicTensor<T> reshape(const BasicTensor<T>& x, Shape shape);
template <typename T> BasicTensor<T> concat_rows(const std::vector<BasicTensor<T>>& parts);
template <typename T> BasicTensor<T> slice_rows(const BasicTensor<T>& x, std::size_t begin, std::size_t end);
template <typename T> BasicTensor<T> slice_cols(const BasicTensor<T>& x, std::size_t begin, std::size_t end);
/// Row i is x[i] where keep[i], otherwise `fill` (shape [C] or [1 x C]).
template <typename T>
BasicTensor<T> where_rows(const std::vector<std::uint8_t>& keep, const BasicTensor<T>& x, const BasicTensor<T>& fill);

/// Multi-head scaled dot-product attention over pre-projected q[Q x d],
/// k[K x d], v[K x d]. Masked logits are set to -1e9 and their post-softmax
/// weight clamped to exactly zero.
template <typename T>
AttentionResult<T> attention(const BasicTensor<T>& q, const BasicTensor<T>& k, const BasicTensor<T>& v,
                             std::size_t heads, const AttnMask* mask = nullptr);

}  // namespace tore
