#include "tore/gtr/model.hpp"

#include <cmath>
#include <stdexcept>

namespace tore::gtr {

std::string to_string(Variant v) { return v == Variant::EncoderOnly ? "encoder_only" : "encoder_decoder"; }
std::string to_string(ShapeHead h) { return h == ShapeHead::Nsr ? "nsr" : "mlp"; }

Variant parse_variant(const std::string& s) {
  if (s == "encoder_only") return Variant::EncoderOnly;
  if (s == "encoder_decoder") return Variant::EncoderDecoder;
  throw std::invalid_argument("unknown variant '" + s + "' (expected encoder_only or encoder_decoder)");
}

ShapeHead parse_shape_head(const std::string& s) {
  if (s == "nsr") return ShapeHead::Nsr;
  if (s == "mlp") return ShapeHead::Mlp;
  throw std::invalid_argument("unknown nsr_head '" + s + "' (expected nsr or mlp)");
}

namespace {

std::size_t conv_out(std::size_t n, std::size_t stride) { return (n + 2 - 3) / stride + 1; }

}  // namespace

void ModelConfig::validate() const {
  if (stages.empty()) throw std::invalid_argument("ModelConfig: at least one transformer stage is required");
  for (const auto& s : stages) s.validate();
  nsr.validate();
  if (backbone_dim == 0 || reduced_dim == 0 || backbone_hidden == 0 || mlp_hidden == 0) {
    throw std::invalid_argument("ModelConfig: dimensions must be positive");
  }
  if (reduced_dim % 2 != 0) throw std::invalid_argument("ModelConfig: reduced_dim must be even (positional encoding)");
  if (conv_out(conv_out(image_size, 4), 2) != grid) {
    throw std::invalid_argument("ModelConfig: image_size " + std::to_string(image_size) + " does not reduce to a " +
                                std::to_string(grid) + "x" + std::to_string(grid) + " grid at stride 8");
  }
  if (prune_rate > 0 && variant != Variant::EncoderDecoder) {
    throw std::invalid_argument("ModelConfig: prune_rate requires the encoder_decoder variant");
  }
  if (pruner_active() && reduced_dim % 4 != 0) throw std::invalid_argument("ModelConfig: reduced_dim must be divisible by 4");
  if (!(joint_mask_rate >= 0 && joint_mask_rate < 1)) throw std::invalid_argument("ModelConfig: joint_mask_rate must be in [0, 1)");
  for (const auto& s : stages) {
    if (s.model_dim % 2 != 0) throw std::invalid_argument("ModelConfig: stage dims must be even (positional encoding)");
  }
  if (nsr.model_dim % 2 != 0) throw std::invalid_argument("ModelConfig: nsr dim must be even (positional encoding)");
  image_tokens();
}

std::size_t ModelConfig::image_tokens() const { return itp::token_count(grid * grid, prune_rate); }

bool operator==(const ModelConfig& a, const ModelConfig& b) {
  auto same_layer = [](const LayerConfig& x, const LayerConfig& y) {
    return x.model_dim == y.model_dim && x.ff_dim == y.ff_dim && x.heads == y.heads && x.layers == y.layers;
  };
  if (a.stages.size() != b.stages.size()) return false;
  for (std::size_t i = 0; i < a.stages.size(); ++i)
    if (!same_layer(a.stages[i], b.stages[i])) return false;
  return a.variant == b.variant && a.geometry_reduction == b.geometry_reduction && a.backbone_dim == b.backbone_dim &&
         a.reduced_dim == b.reduced_dim && a.grid == b.grid && a.image_size == b.image_size &&
         a.backbone_hidden == b.backbone_hidden && same_layer(a.nsr, b.nsr) && a.shape_head == b.shape_head &&
         a.mlp_hidden == b.mlp_hidden && a.prune_rate == b.prune_rate && a.joint_mask_rate == b.joint_mask_rate &&
         a.template_seed == b.template_seed && a.template_counts.joints == b.template_counts.joints &&
         a.template_counts.coarse_vertices == b.template_counts.coarse_vertices;
}

template <typename T>
Backbone<T>::Backbone(ParamStore<T>& store, const ModelConfig& cfg) {
  const auto h = cfg.backbone_hidden, c = cfg.backbone_dim;
  w1 = store.add("backbone.conv1.weight", {h, 3, 3, 1}, Init::Normal, 1.0 / 3.0);
  b1 = store.add("backbone.conv1.bias", {h}, Init::Zeros);
  w2 = store.add("backbone.conv2.weight", {c, 3, 3, h}, Init::Normal, 1.0 / std::sqrt(9.0 * static_cast<double>(h)));
  b2 = store.add("backbone.conv2.bias", {c}, Init::Zeros);
}

template <typename T>
BasicTensor<T> Backbone<T>::operator()(const BasicTensor<T>& render) const {
  if (render.rank() != 2 || render.dim(0) != render.dim(1)) throw ShapeError("backbone: render " + tore::to_string(render.shape()));
  const auto s = render.dim(0);
  auto h = gelu(conv2d(reshape(render, {s, s, 1}), w1, b1, 4, 1));
  return gelu(conv2d(h, w2, b2, 2, 1));
}

template <typename T>
ShapeRegressor<T>::ShapeRegressor(ParamStore<T>& store, const std::string& name, const LayerConfig& cfg,
                                  std::size_t vertex_count)
    : joints(store, name + ".joints", cfg),
      vertices(store, name + ".vertices", cfg),
      to_xyz(store, name + ".to_xyz", cfg.model_dim, 3) {
  vertex_queries = store.add(name + ".vertex_queries", {vertex_count, cfg.model_dim}, Init::Normal, 0.02);
  vertex_pe = sinusoidal_pe<T>(vertex_count, cfg.model_dim);
}

template <typename T>
typename ShapeRegressor<T>::Result ShapeRegressor<T>::operator()(const BasicTensor<T>& joint_features,
                                                                 const AttnMask& adjacency) const {
  const auto memory = joints(joint_features);
  auto r = vertices(add(vertex_queries, vertex_pe), memory, &adjacency);
  return {to_xyz(r.out), r.cross_attn, r.self_attn};
}

template <typename T>
MlpRegressor<T>::MlpRegressor(ParamStore<T>& store, const std::string& name, std::size_t in, std::size_t hidden,
                              std::size_t vertex_count_)
    : fc1(store, name + ".fc1", in, hidden),
      fc2(store, name + ".fc2", hidden, hidden),
      fc3(store, name + ".fc3", hidden, vertex_count_ * 3),
      vertex_count(vertex_count_) {}

template <typename T>
BasicTensor<T> MlpRegressor<T>::operator()(const BasicTensor<T>& joint_features) const {
  auto flat = reshape(joint_features, {1, joint_features.numel()});
  return reshape(fc3(gelu(fc2(gelu(fc1(flat))))), {vertex_count, 3});
}

namespace {

template <typename T>
BasicTensor<T> constant(const Eigen::MatrixXd& m) {
  std::vector<T> v(static_cast<std::size_t>(m.size()));
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) v[static_cast<std::size_t>(r * m.cols() + c)] = static_cast<T>(m(r, c));
  return BasicTensor<T>::from({static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())}, std::move(v));
}

}  // namespace

template <typename T>
Model<T>::Model(const ModelConfig& cfg, std::uint64_t seed)
    : Model(cfg, seed, std::make_shared<const mesh::MeshTemplate>(mesh::build_template(cfg.template_seed, cfg.template_counts))) {}

template <typename T>
Model<T>::Model(const ModelConfig& cfg, std::uint64_t seed, std::shared_ptr<const mesh::MeshTemplate> tmpl)
    : cfg_(cfg), tmpl_(std::move(tmpl)), store_(seed) {
  cfg_.validate();
  if (tmpl_->low_count() != static_cast<int>(cfg_.coarse_vertices()) || tmpl_->joint_count() != static_cast<int>(cfg_.joints())) {
    throw std::invalid_argument("Model: template counts do not match the config");
  }
  const std::size_t J = cfg_.joints(), V = cfg_.coarse_vertices();
  const std::size_t d0 = cfg_.stages.front().model_dim, dl = cfg_.stages.back().model_dim;

  backbone_ = Backbone<T>(store_, cfg_);
  reduce_ = Linear<T>(store_, "reduce", cfg_.backbone_dim, cfg_.reduced_dim);
  image_pe_ = sinusoidal_pe<T>(cfg_.grid * cfg_.grid, cfg_.reduced_dim);
  if (cfg_.pruner_active()) {
    pruner_.emplace(store_, "pruner", cfg_.reduced_dim, cfg_.grid, cfg_.grid, cfg_.image_tokens());
  }
  input_proj_ = Linear<T>(store_, "input_proj", cfg_.reduced_dim, d0);
  camera_token_ = store_.add("camera_token", {1, d0}, Init::Normal, 0.02);
  if (cfg_.variant == Variant::EncoderDecoder) camera_query_ = store_.add("camera_query", {1, d0}, Init::Normal, 0.02);
  joint_tokens_ = store_.add("joint_tokens", {J, d0}, Init::Normal, 0.02);
  joint_mask_token_ = store_.add("joint_mask_token", {1, d0}, Init::Normal, 0.02);
  if (!cfg_.geometry_reduction) {
    vertex_tokens_ = store_.add("vertex_tokens", {V, d0}, Init::Normal, 0.02);
    vertex_pe_ = sinusoidal_pe<T>(V, d0);
  }
  for (std::size_t s = 0; s < cfg_.stages.size(); ++s) {
    const auto tag = "stage" + std::to_string(s);
    if (s > 0) {
      const auto prev = cfg_.stages[s - 1].model_dim, cur = cfg_.stages[s].model_dim;
      stage_proj_.emplace_back(store_, tag + ".proj", prev, cur);
      if (cfg_.variant == Variant::EncoderDecoder) stage_proj_.emplace_back(store_, tag + ".proj_queries", prev, cur);
    }
    encoders_.emplace_back(store_, tag + ".encoder", cfg_.stages[s]);
    if (cfg_.variant == Variant::EncoderDecoder) decoders_.emplace_back(store_, tag + ".decoder", cfg_.stages[s]);
  }
  joint_head_ = Linear<T>(store_, "joint_head", dl, 3);
  camera_head_ = Linear<T>(store_, "camera_head", dl, 3);
  if (!cfg_.geometry_reduction) {
    vertex_head_ = Linear<T>(store_, "vertex_head", dl, 3);
  } else if (cfg_.shape_head == ShapeHead::Nsr) {
    if (cfg_.nsr.model_dim != dl) to_shape_ = Linear<T>(store_, "to_shape", dl, cfg_.nsr.model_dim);
    nsr_.emplace(store_, "nsr", cfg_.nsr, V);
  } else {
    mlp_.emplace(store_, "mlp", J * dl, cfg_.mlp_hidden, V);
  }
  adjacency_ = adjacency_mask(*tmpl_);
  up_mid_ = constant<T>(tmpl_->up_mid);
  up_high_ = constant<T>(tmpl_->up_high);
  regressor_ = constant<T>(tmpl_->regressor);
}

template <typename T>
BasicTensor<T> Model<T>::joint_queries(std::size_t, Mode mode, Rng* rng) const {
  if (mode == Mode::Eval || cfg_.joint_mask_rate == 0) return joint_tokens_;
  if (!rng) throw std::invalid_argument("Model: train mode with joint masking needs an rng");
  return where_rows(random_joint_mask(cfg_.joints(), cfg_.joint_mask_rate, *rng, true), joint_tokens_, joint_mask_token_);
}

template <typename T>
ModelOutput<T> Model<T>::forward(const BasicTensor<T>& render, Mode mode, Rng* rng) const {
  BasicTensor<T> features;
  std::uint64_t backbone_flops = 0;
  {
    FlopCounter c;
    features = backbone_(render);
    backbone_flops = c.total();
  }
  auto out = forward_features(features, mode, rng);
  out.flops.backbone = backbone_flops;
  return out;
}

template <typename T>
ModelOutput<T> Model<T>::forward_features(const BasicTensor<T>& features, Mode mode, Rng* rng) const {
  const std::size_t hw = cfg_.grid * cfg_.grid, J = cfg_.joints(), V = cfg_.coarse_vertices();
  if (features.rank() != 3 || features.dim(0) != cfg_.grid || features.dim(1) != cfg_.grid ||
      features.dim(2) != cfg_.backbone_dim) {
    throw ShapeError("Model: features " + tore::to_string(features.shape()) + " do not match the config grid/channels");
  }
  ModelOutput<T> out;
  BasicTensor<T> image;
  {
    FlopCounter c;
    image = add(reduce_(reshape(features, {hw, cfg_.backbone_dim})), image_pe_);
    out.flops.reduce = c.total();
  }
  if (pruner_) {
    FlopCounter c;
    out.pruner = (*pruner_)(image);
    image = out.pruner->clusters;
    out.flops.pruner = c.total();
  }

  BasicTensor<T> camera_feat, joint_feat, vertex_feat;
  {
    FlopCounter c;
    const auto tokens = input_proj_(image);
    const std::size_t n_img = tokens.dim(0);
    const auto joints = joint_queries(0, mode, rng);
    std::vector<BasicTensor<T>> geometry{joints};
    if (!cfg_.geometry_reduction) geometry.push_back(add(vertex_tokens_, vertex_pe_));
    if (cfg_.variant == Variant::EncoderOnly) {
      std::vector<BasicTensor<T>> parts{tokens, camera_token_};
      parts.insert(parts.end(), geometry.begin(), geometry.end());
      auto seq = concat_rows(parts);
      out.transformer_queries = seq.dim(0);
      for (std::size_t s = 0; s < encoders_.size(); ++s) {
        if (s > 0) seq = stage_proj_[s - 1](seq);
        seq = encoders_[s](seq);
      }
      camera_feat = slice_rows(seq, n_img, n_img + 1);
      joint_feat = slice_rows(seq, n_img + 1, n_img + 1 + J);
      if (!cfg_.geometry_reduction) vertex_feat = slice_rows(seq, n_img + 1 + J, n_img + 1 + J + V);
    } else {
      auto memory = concat_rows(std::vector<BasicTensor<T>>{tokens, camera_token_});
      std::vector<BasicTensor<T>> qparts{camera_query_};
      qparts.insert(qparts.end(), geometry.begin(), geometry.end());
      auto queries = concat_rows(qparts);
      out.transformer_queries = queries.dim(0);
      for (std::size_t s = 0; s < encoders_.size(); ++s) {
        if (s > 0) {
          memory = stage_proj_[2 * (s - 1)](memory);
          queries = stage_proj_[2 * (s - 1) + 1](queries);
        }
        memory = encoders_[s](memory);
        queries = decoders_[s](queries, memory).out;
      }
      camera_feat = slice_rows(queries, 0, 1);
      joint_feat = slice_rows(queries, 1, 1 + J);
      if (!cfg_.geometry_reduction) vertex_feat = slice_rows(queries, 1 + J, 1 + J + V);
    }
    // Heads predict offsets from the rest template.
    out.joints3d = add(joint_head_(joint_feat), constant<T>(tmpl_->rest_joints));
    const auto raw = camera_head_(camera_feat);
    const double half = static_cast<double>(cfg_.image_size) / 2;
    const auto s = scale(softplus(slice_cols(raw, 0, 1)), half);
    const auto t = add_row(scale(slice_cols(raw, 1, 3), half), BasicTensor<T>::full({2}, static_cast<T>(half)));
    out.camera = reshape(concat_rows(std::vector<BasicTensor<T>>{transpose(s), transpose(t)}), {1, 3});
    out.flops.transformer = c.total();
  }
  {
    FlopCounter c;
    BasicTensor<T> offsets;
    if (!cfg_.geometry_reduction) {
      offsets = vertex_head_(vertex_feat);
    } else if (nsr_) {
      auto r = (*nsr_)(to_shape_.weight.defined() ? to_shape_(joint_feat) : joint_feat, adjacency_);
      offsets = r.verts_low;
      out.attn_vj = r.cross;
      out.attn_vv = r.self;
    } else {
      offsets = (*mlp_)(joint_feat);
    }
    out.verts.low = add(offsets, constant<T>(tmpl_->verts_low));
    out.flops.shape = c.total();
  }
  {
    FlopCounter c;
    out.verts.mid = matmul(up_mid_, out.verts.low);
    out.verts.high = matmul(up_high_, out.verts.mid);
    out.regressed_joints3d = matmul(regressor_, out.verts.high);
    out.flops.upsample = c.total();
  }
  return out;
}

template struct Backbone<float>;
template struct Backbone<double>;
template struct ShapeRegressor<float>;
template struct ShapeRegressor<double>;
template struct MlpRegressor<float>;
template struct MlpRegressor<double>;
template class Model<float>;
template class Model<double>;

}  // namespace tore::gtr
