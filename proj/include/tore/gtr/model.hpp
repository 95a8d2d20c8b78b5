#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "tore/itp/pruner.hpp"
#include "tore/losses/losses.hpp"
#include "tore/mesh/template.hpp"
#include "tore/transformer/layers.hpp"

namespace tore::gtr {

enum class Variant { EncoderOnly, EncoderDecoder };
enum class ShapeHead { Nsr, Mlp };
enum class Mode { Train, Eval };

std::string to_string(Variant v);
std::string to_string(ShapeHead h);
Variant parse_variant(const std::string& s);
ShapeHead parse_shape_head(const std::string& s);

struct ModelConfig {
  Variant variant = Variant::EncoderDecoder;
  /// When false the main transformer also carries one token per coarse
  /// vertex and vertices are read from those tokens (unreduced baseline).
  bool geometry_reduction = true;
  std::size_t backbone_dim = 64;   // channels out of the conv stub
  std::size_t reduced_dim = 128;   // token width after the 1x1 reduction
  std::size_t grid = 7;            // H = W of the token grid
  std::size_t image_size = 56;     // render is image_size x image_size
  std::size_t backbone_hidden = 16;
  /// Main transformer stages. Encoder-only: progressive dims, one encoder
  /// stack per stage. Encoder-decoder: one encoder and one decoder stack per
  /// stage, tokens projected between stages.
  std::vector<LayerConfig> stages{{64, 256, 4, 1}};
  LayerConfig nsr{64, 128, 4, 1};
  ShapeHead shape_head = ShapeHead::Nsr;
  std::size_t mlp_hidden = 1024;
  double prune_rate = 0.0;
  double joint_mask_rate = 0.3;
  std::uint64_t template_seed = 0;
  mesh::TemplateCounts template_counts{};

  void validate() const;
  std::size_t image_tokens() const;  // after pruning
  bool pruner_active() const { return variant == Variant::EncoderDecoder && prune_rate > 0; }
  std::size_t joints() const { return static_cast<std::size_t>(template_counts.joints); }
  std::size_t coarse_vertices() const { return static_cast<std::size_t>(template_counts.coarse_vertices); }
};

bool operator==(const ModelConfig& a, const ModelConfig& b);

/// Executed floating-point work of one forward pass, by component.
struct ExecutedFlops {
  std::uint64_t backbone = 0, reduce = 0, pruner = 0, transformer = 0, shape = 0, upsample = 0;
  std::uint64_t total() const { return backbone + reduce + pruner + transformer + shape + upsample; }
};

template <typename T>
struct ModelOutput {
  BasicTensor<T> joints3d;  // [J x 3] from the joint head
  BasicTensor<T> regressed_joints3d;  // regressor applied to verts_high
  losses::MeshLevels<T> verts;
  BasicTensor<T> camera;  // [1 x 3] (s, t_x, t_y) in pixels
  BasicTensor<T> attn_vj;  // NSR cross-attention [heads x V_l x J], undefined for the MLP head
  BasicTensor<T> attn_vv;  // NSR vertex self-attention [heads x V_l x V_l]
  std::optional<itp::PrunerOutput<T>> pruner;
  std::size_t transformer_queries = 0;  // tokens entering the main quadratic attention as queries
  ExecutedFlops flops;
};

/// Two strided 3x3 convolutions with GELU (stride 8 in total) mapping the
/// grayscale render to a grid x grid x backbone_dim feature map.
template <typename T>
struct Backbone {
  BasicTensor<T> w1, b1, w2, b2;

  Backbone() = default;
  Backbone(ParamStore<T>& store, const ModelConfig& cfg);
  /// render: [S x S] -> [grid x grid x c]
  BasicTensor<T> operator()(const BasicTensor<T>& render) const;
};

/// Vertex regressor from joint features alone: joint self-attention, vertex
/// queries with fixed positional encoding under the adjacency mask, and
/// cross-attention to the joints.
template <typename T>
struct ShapeRegressor {
  EncoderStack<T> joints;
  DecoderStack<T> vertices;
  BasicTensor<T> vertex_queries;  // [V_l x d]
  BasicTensor<T> vertex_pe;       // fixed
  Linear<T> to_xyz;

  ShapeRegressor() = default;
  ShapeRegressor(ParamStore<T>& store, const std::string& name, const LayerConfig& cfg, std::size_t vertex_count);
  struct Result {
    BasicTensor<T> verts_low, cross, self;
  };
  Result operator()(const BasicTensor<T>& joint_features, const AttnMask& adjacency) const;
};

/// Perceptron baseline with two GELU hidden layers on the flattened joint features.
template <typename T>
struct MlpRegressor {
  Linear<T> fc1, fc2, fc3;
  std::size_t vertex_count = 0;

  MlpRegressor() = default;
  MlpRegressor(ParamStore<T>& store, const std::string& name, std::size_t in, std::size_t hidden,
               std::size_t vertex_count);
  BasicTensor<T> operator()(const BasicTensor<T>& joint_features) const;
};

template <typename T>
class Model {
 public:
  Model(const ModelConfig& cfg, std::uint64_t seed);
  Model(const ModelConfig& cfg, std::uint64_t seed, std::shared_ptr<const mesh::MeshTemplate> tmpl);

  /// Full pass from a render [S x S]. `rng` drives joint-query masking in
  /// train mode and may be null in eval mode.
  ModelOutput<T> forward(const BasicTensor<T>& render, Mode mode, Rng* rng = nullptr) const;
  /// Everything after the backbone; features [grid x grid x c].
  ModelOutput<T> forward_features(const BasicTensor<T>& features, Mode mode, Rng* rng = nullptr) const;

  const ModelConfig& config() const { return cfg_; }
  const mesh::MeshTemplate& mesh_template() const { return *tmpl_; }
  ParamStore<T>& params() { return store_; }
  const ParamStore<T>& params() const { return store_; }
  const Backbone<T>& backbone() const { return backbone_; }

 private:
  BasicTensor<T> joint_queries(std::size_t dim, Mode mode, Rng* rng) const;

  ModelConfig cfg_;
  std::shared_ptr<const mesh::MeshTemplate> tmpl_;
  ParamStore<T> store_;
  Backbone<T> backbone_;
  Linear<T> reduce_;
  BasicTensor<T> image_pe_;
  std::optional<itp::ImageTokenPruner<T>> pruner_;
  Linear<T> input_proj_;
  BasicTensor<T> camera_token_, camera_query_, joint_tokens_, joint_mask_token_, vertex_tokens_, vertex_pe_;
  std::vector<EncoderStack<T>> encoders_;
  std::vector<DecoderStack<T>> decoders_;
  std::vector<Linear<T>> stage_proj_;  // between consecutive stages
  Linear<T> joint_head_, camera_head_, vertex_head_;
  Linear<T> to_shape_;  // last stage dim -> NSR dim, when they differ
  std::optional<ShapeRegressor<T>> nsr_;
  std::optional<MlpRegressor<T>> mlp_;
  AttnMask adjacency_;
  BasicTensor<T> up_mid_, up_high_, regressor_;
};

}  // namespace tore::gtr
