#include "tore/transformer/layers.hpp"

#include <cmath>
#include <stdexcept>

namespace tore {

void LayerConfig::validate() const {
  if (model_dim == 0 || ff_dim == 0 || heads == 0 || layers == 0) {
    throw std::invalid_argument("LayerConfig: dimensions must be positive");
  }
  if (model_dim % heads != 0) {
    throw std::invalid_argument("LayerConfig: model_dim " + std::to_string(model_dim) + " not divisible by " +
                                std::to_string(heads) + " heads");
  }
}

template <typename T>
Linear<T>::Linear(ParamStore<T>& store, const std::string& name, std::size_t in, std::size_t out, bool with_bias) {
  weight = store.add(name + ".weight", {in, out}, Init::Scaled);
  if (with_bias) bias = store.add(name + ".bias", {out}, Init::Zeros);
}

template <typename T>
LayerNorm<T>::LayerNorm(ParamStore<T>& store, const std::string& name, std::size_t dim) {
  gamma = store.add(name + ".gamma", {dim}, Init::Ones);
  beta = store.add(name + ".beta", {dim}, Init::Zeros);
}

template <typename T>
MultiHeadAttention<T>::MultiHeadAttention(ParamStore<T>& store, const std::string& name, std::size_t dim,
                                          std::size_t heads_)
    : q(store, name + ".q", dim, dim),
      k(store, name + ".k", dim, dim),
      v(store, name + ".v", dim, dim),
      o(store, name + ".o", dim, dim),
      heads(heads_) {}

template <typename T>
AttentionResult<T> MultiHeadAttention<T>::operator()(const BasicTensor<T>& queries, const BasicTensor<T>& keys_values,
                                                     const AttnMask* mask) const {
  auto r = attention(q(queries), k(keys_values), v(keys_values), heads, mask);
  return {o(r.out), r.weights};
}

template <typename T>
FeedForward<T>::FeedForward(ParamStore<T>& store, const std::string& name, std::size_t dim, std::size_t ff_dim)
    : up(store, name + ".up", dim, ff_dim), down(store, name + ".down", ff_dim, dim) {}

template <typename T>
EncoderLayer<T>::EncoderLayer(ParamStore<T>& store, const std::string& name, const LayerConfig& cfg)
    : norm_attn(store, name + ".norm_attn", cfg.model_dim),
      norm_ff(store, name + ".norm_ff", cfg.model_dim),
      attn(store, name + ".attn", cfg.model_dim, cfg.heads),
      ff(store, name + ".ff", cfg.model_dim, cfg.ff_dim) {
  cfg.validate();
}

template <typename T>
LayerOutput<T> EncoderLayer<T>::operator()(const BasicTensor<T>& x, const AttnMask* mask) const {
  const auto h = norm_attn(x);
  auto a = attn(h, h, mask);
  auto y = add(x, a.out);
  y = add(y, ff(norm_ff(y)));
  return {y, a.weights, {}};
}

template <typename T>
DecoderLayer<T>::DecoderLayer(ParamStore<T>& store, const std::string& name, const LayerConfig& cfg)
    : norm_self(store, name + ".norm_self", cfg.model_dim),
      norm_cross(store, name + ".norm_cross", cfg.model_dim),
      norm_ff(store, name + ".norm_ff", cfg.model_dim),
      self_attn(store, name + ".self_attn", cfg.model_dim, cfg.heads),
      cross_attn(store, name + ".cross_attn", cfg.model_dim, cfg.heads),
      ff(store, name + ".ff", cfg.model_dim, cfg.ff_dim) {
  cfg.validate();
}

template <typename T>
LayerOutput<T> DecoderLayer<T>::operator()(const BasicTensor<T>& x, const BasicTensor<T>& memory,
                                           const AttnMask* self_mask, const AttnMask* cross_mask) const {
  if (memory.rank() != 2 || memory.dim(1) != x.dim(1)) {
    throw ShapeError("decoder layer: memory " + to_string(memory.shape()) + " does not match queries " +
                     to_string(x.shape()));
  }
  const auto h = norm_self(x);
  auto s = self_attn(h, h, self_mask);
  auto y = add(x, s.out);
  auto c = cross_attn(norm_cross(y), memory, cross_mask);
  y = add(y, c.out);
  y = add(y, ff(norm_ff(y)));
  return {y, s.weights, c.weights};
}

template <typename T>
EncoderStack<T>::EncoderStack(ParamStore<T>& store, const std::string& name, const LayerConfig& cfg)
    : final_norm(store, name + ".final_norm", cfg.model_dim) {
  cfg.validate();
  for (std::size_t l = 0; l < cfg.layers; ++l) layers.emplace_back(store, name + ".layer" + std::to_string(l), cfg);
}

template <typename T>
BasicTensor<T> EncoderStack<T>::operator()(const BasicTensor<T>& x, const AttnMask* mask) const {
  auto h = x;
  for (const auto& layer : layers) h = layer(h, mask).out;
  return final_norm(h);
}

template <typename T>
DecoderStack<T>::DecoderStack(ParamStore<T>& store, const std::string& name, const LayerConfig& cfg)
    : final_norm(store, name + ".final_norm", cfg.model_dim) {
  cfg.validate();
  for (std::size_t l = 0; l < cfg.layers; ++l) layers.emplace_back(store, name + ".layer" + std::to_string(l), cfg);
}

template <typename T>
LayerOutput<T> DecoderStack<T>::operator()(const BasicTensor<T>& x, const BasicTensor<T>& memory,
                                           const AttnMask* self_mask) const {
  LayerOutput<T> r{x, {}, {}};
  for (const auto& layer : layers) r = layer(r.out, memory, self_mask);
  r.out = final_norm(r.out);
  return r;
}

template <typename T>
BasicTensor<T> sinusoidal_pe(std::size_t n, std::size_t d) {
  if (d == 0 || d % 2 != 0) throw std::invalid_argument("sinusoidal_pe: dimension must be even, got " + std::to_string(d));
  std::vector<T> pe(n * d);
  for (std::size_t p = 0; p < n; ++p) {
    for (std::size_t i = 0; i < d / 2; ++i) {
      const double angle = static_cast<double>(p) / std::pow(10000.0, 2.0 * i / static_cast<double>(d));
      pe[p * d + 2 * i] = static_cast<T>(std::sin(angle));
      pe[p * d + 2 * i + 1] = static_cast<T>(std::cos(angle));
    }
  }
  return BasicTensor<T>::from({n, d}, std::move(pe));
}

AttnMask adjacency_mask(const mesh::MeshTemplate& t) {
  const auto n = static_cast<std::size_t>(t.low_count());
  return AttnMask(n, n, t.adjacency);
}

std::vector<std::uint8_t> random_joint_mask(std::size_t joints, double rate, Rng& rng, bool training) {
  if (!(rate >= 0.0 && rate < 1.0)) {
    throw std::invalid_argument("random_joint_mask: rate must be in [0, 1), got " + std::to_string(rate));
  }
  std::vector<std::uint8_t> keep(joints, 1);
  if (!training || rate == 0.0) return keep;
  std::bernoulli_distribution drop(rate);
  for (auto& k : keep) k = drop(rng) ? 0 : 1;
  return keep;
}

#define TORE_INSTANTIATE_LAYERS(T)    \
  template struct Linear<T>;          \
  template struct LayerNorm<T>;       \
  template struct MultiHeadAttention<T>; \
  template struct FeedForward<T>;     \
  template struct EncoderLayer<T>;    \
  template struct DecoderLayer<T>;    \
  template struct EncoderStack<T>;    \
  template struct DecoderStack<T>;    \
  template BasicTensor<T> sinusoidal_pe<T>(std::size_t, std::size_t);

TORE_INSTANTIATE_LAYERS(float)
TORE_INSTANTIATE_LAYERS(double)

}  // namespace tore
