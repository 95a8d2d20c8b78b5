#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tore/mesh/template.hpp"
#include "tore/numerics/ops.hpp"
#include "tore/transformer/params.hpp"

namespace tore {

struct LayerConfig {
  std::size_t model_dim = 64;
  std::size_t ff_dim = 256;
  std::size_t heads = 4;
  std::size_t layers = 1;

  void validate() const;
};

template <typename T>
struct Linear {
  BasicTensor<T> weight, bias;

  Linear() = default;
  Linear(ParamStore<T>& store, const std::string& name, std::size_t in, std::size_t out, bool with_bias = true);
  BasicTensor<T> operator()(const BasicTensor<T>& x) const { return linear(x, weight, bias); }
};

template <typename T>
struct LayerNorm {
  BasicTensor<T> gamma, beta;

  LayerNorm() = default;
  LayerNorm(ParamStore<T>& store, const std::string& name, std::size_t dim);
  BasicTensor<T> operator()(const BasicTensor<T>& x) const { return layer_norm(x, gamma, beta); }
};

/// Multi-head attention with learned query/key/value/output projections.
template <typename T>
struct MultiHeadAttention {
  Linear<T> q, k, v, o;
  std::size_t heads = 1;

  MultiHeadAttention() = default;
  MultiHeadAttention(ParamStore<T>& store, const std::string& name, std::size_t dim, std::size_t heads);
  /// Returns the projected output [Q x d] and weights [heads x Q x K].
  AttentionResult<T> operator()(const BasicTensor<T>& queries, const BasicTensor<T>& keys_values,
                                const AttnMask* mask = nullptr) const;
};

template <typename T>
struct FeedForward {
  Linear<T> up, down;

  FeedForward() = default;
  FeedForward(ParamStore<T>& store, const std::string& name, std::size_t dim, std::size_t ff_dim);
  BasicTensor<T> operator()(const BasicTensor<T>& x) const { return down(gelu(up(x))); }
};

template <typename T>
struct LayerOutput {
  BasicTensor<T> out;
  BasicTensor<T> self_attn;   // [heads x N x N]
  BasicTensor<T> cross_attn;  // [heads x N x M], decoder layers only
};

/// Pre-norm encoder layer: x + SA(LN x), then + FF(LN x).
template <typename T>
struct EncoderLayer {
  LayerNorm<T> norm_attn, norm_ff;
  MultiHeadAttention<T> attn;
  FeedForward<T> ff;

  EncoderLayer() = default;
  EncoderLayer(ParamStore<T>& store, const std::string& name, const LayerConfig& cfg);
  LayerOutput<T> operator()(const BasicTensor<T>& x, const AttnMask* mask = nullptr) const;
};

/// Pre-norm decoder layer: self-attention, cross-attention to memory, feed-forward.
template <typename T>
struct DecoderLayer {
  LayerNorm<T> norm_self, norm_cross, norm_ff;
  MultiHeadAttention<T> self_attn, cross_attn;
  FeedForward<T> ff;

  DecoderLayer() = default;
  DecoderLayer(ParamStore<T>& store, const std::string& name, const LayerConfig& cfg);
  LayerOutput<T> operator()(const BasicTensor<T>& x, const BasicTensor<T>& memory, const AttnMask* self_mask = nullptr,
                            const AttnMask* cross_mask = nullptr) const;
};

/// cfg.layers encoder layers followed by a final layer norm.
template <typename T>
struct EncoderStack {
  std::vector<EncoderLayer<T>> layers;
  LayerNorm<T> final_norm;

  EncoderStack() = default;
  EncoderStack(ParamStore<T>& store, const std::string& name, const LayerConfig& cfg);
  BasicTensor<T> operator()(const BasicTensor<T>& x, const AttnMask* mask = nullptr) const;
};

template <typename T>
struct DecoderStack {
  std::vector<DecoderLayer<T>> layers;
  LayerNorm<T> final_norm;

  DecoderStack() = default;
  DecoderStack(ParamStore<T>& store, const std::string& name, const LayerConfig& cfg);
  /// Output plus the cross-attention weights of the last layer.
  LayerOutput<T> operator()(const BasicTensor<T>& x, const BasicTensor<T>& memory,
                            const AttnMask* self_mask = nullptr) const;
};

/// Fixed positional encoding [n x d]: even columns sin(p / 10000^(2i/d)),
/// odd columns the matching cos. d must be even.
template <typename T>
BasicTensor<T> sinusoidal_pe(std::size_t n, std::size_t d);

/// Self-attention mask over coarse vertices from the template's 1-ring adjacency.
AttnMask adjacency_mask(const mesh::MeshTemplate& t);

/// Keep-vector for joint query tokens: each entry dropped with probability
/// `rate` in training, all kept in eval. Requires 0 <= rate < 1.
std::vector<std::uint8_t> random_joint_mask(std::size_t joints, double rate, Rng& rng, bool training);

}  // namespace tore
