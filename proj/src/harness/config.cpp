#include "tore/harness/config.hpp"

#include <fstream>
#include <set>
#include <stdexcept>

namespace tore::harness {

namespace {

using nlohmann::json;

void reject_unknown(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) throw std::invalid_argument("config: " + where + " must be an object");
  for (const auto& [key, value] : j.items()) {
    if (!allowed.count(key)) throw std::invalid_argument("config: unknown key '" + key + "' in " + where);
  }
}

template <typename V>
void read(const json& j, const char* key, V& out) {
  if (j.contains(key)) out = j.at(key).get<V>();
}

LayerConfig layer_from(const json& j, const std::string& where, LayerConfig base) {
  reject_unknown(j, {"model_dim", "ff_dim", "heads", "layers"}, where);
  read(j, "model_dim", base.model_dim);
  read(j, "ff_dim", base.ff_dim);
  read(j, "heads", base.heads);
  read(j, "layers", base.layers);
  return base;
}

json layer_json(const LayerConfig& l) {
  return {{"model_dim", l.model_dim}, {"ff_dim", l.ff_dim}, {"heads", l.heads}, {"layers", l.layers}};
}

}  // namespace

gtr::ModelConfig model_config_from_json(const json& j) {
  reject_unknown(j,
                 {"variant", "geometry_reduction", "backbone_dim", "reduced_dim", "grid", "image_size",
                  "backbone_hidden", "stages", "nsr", "nsr_head", "mlp_hidden", "prune_rate", "joint_mask_rate",
                  "template_seed", "coarse_vertices"},
                 "model");
  gtr::ModelConfig m;
  if (j.contains("variant")) m.variant = gtr::parse_variant(j.at("variant").get<std::string>());
  read(j, "geometry_reduction", m.geometry_reduction);
  read(j, "backbone_dim", m.backbone_dim);
  read(j, "reduced_dim", m.reduced_dim);
  read(j, "grid", m.grid);
  read(j, "image_size", m.image_size);
  read(j, "backbone_hidden", m.backbone_hidden);
  if (j.contains("stages")) {
    m.stages.clear();
    for (const auto& s : j.at("stages")) m.stages.push_back(layer_from(s, "model.stages[]", {}));
  }
  if (j.contains("nsr")) m.nsr = layer_from(j.at("nsr"), "model.nsr", m.nsr);
  if (j.contains("nsr_head")) m.shape_head = gtr::parse_shape_head(j.at("nsr_head").get<std::string>());
  read(j, "mlp_hidden", m.mlp_hidden);
  read(j, "prune_rate", m.prune_rate);
  read(j, "joint_mask_rate", m.joint_mask_rate);
  read(j, "template_seed", m.template_seed);
  read(j, "coarse_vertices", m.template_counts.coarse_vertices);
  m.validate();
  return m;
}

json to_json(const gtr::ModelConfig& m) {
  json stages = json::array();
  for (const auto& s : m.stages) stages.push_back(layer_json(s));
  return {{"variant", gtr::to_string(m.variant)},
          {"geometry_reduction", m.geometry_reduction},
          {"backbone_dim", m.backbone_dim},
          {"reduced_dim", m.reduced_dim},
          {"grid", m.grid},
          {"image_size", m.image_size},
          {"backbone_hidden", m.backbone_hidden},
          {"stages", stages},
          {"nsr", layer_json(m.nsr)},
          {"nsr_head", gtr::to_string(m.shape_head)},
          {"mlp_hidden", m.mlp_hidden},
          {"prune_rate", m.prune_rate},
          {"joint_mask_rate", m.joint_mask_rate},
          {"template_seed", m.template_seed},
          {"coarse_vertices", m.template_counts.coarse_vertices}};
}

void RunConfig::validate() const {
  model.validate();
  if (optimizer.name != "adamw") throw std::invalid_argument("config: only the adamw optimizer is supported");
  if (!(optimizer.lr > 0) || optimizer.weight_decay < 0 || !(optimizer.grad_clip_norm > 0) ||
      !(optimizer.beta1 >= 0 && optimizer.beta1 < 1) || !(optimizer.beta2 >= 0 && optimizer.beta2 < 1) ||
      !(optimizer.eps > 0)) {
    throw std::invalid_argument("config: optimizer hyperparameters out of range");
  }
  if (batch == 0 || (epochs == 0 && steps == 0)) throw std::invalid_argument("config: batch and epochs/steps must be positive");
  if (loss.pruning < 0 || loss.joints2d < 0 || loss.verts3d < 0 || loss.joints3d < 0) {
    throw std::invalid_argument("config: loss weights must be non-negative");
  }
}

RunConfig run_config_from_json(const json& j) {
  reject_unknown(j, {"model", "optimizer", "loss", "epochs", "steps", "batch", "seed", "data", "out"}, "run config");
  RunConfig c;
  if (j.contains("model")) c.model = model_config_from_json(j.at("model"));
  if (j.contains("optimizer")) {
    const auto& o = j.at("optimizer");
    reject_unknown(o, {"name", "lr", "weight_decay", "grad_clip_norm", "beta1", "beta2", "eps"}, "optimizer");
    read(o, "name", c.optimizer.name);
    read(o, "lr", c.optimizer.lr);
    read(o, "weight_decay", c.optimizer.weight_decay);
    read(o, "grad_clip_norm", c.optimizer.grad_clip_norm);
    read(o, "beta1", c.optimizer.beta1);
    read(o, "beta2", c.optimizer.beta2);
    read(o, "eps", c.optimizer.eps);
  }
  if (j.contains("loss")) {
    const auto& l = j.at("loss");
    reject_unknown(l, {"pruning", "joints2d", "verts3d", "joints3d"}, "loss");
    read(l, "pruning", c.loss.pruning);
    read(l, "joints2d", c.loss.joints2d);
    read(l, "verts3d", c.loss.verts3d);
    read(l, "joints3d", c.loss.joints3d);
  }
  read(j, "epochs", c.epochs);
  read(j, "steps", c.steps);
  read(j, "batch", c.batch);
  read(j, "seed", c.seed);
  read(j, "data", c.data);
  read(j, "out", c.out);
  c.validate();
  return c;
}

json to_json(const RunConfig& c) {
  return {{"model", to_json(c.model)},
          {"optimizer",
           {{"name", c.optimizer.name},
            {"lr", c.optimizer.lr},
            {"weight_decay", c.optimizer.weight_decay},
            {"grad_clip_norm", c.optimizer.grad_clip_norm},
            {"beta1", c.optimizer.beta1},
            {"beta2", c.optimizer.beta2},
            {"eps", c.optimizer.eps}}},
          {"loss",
           {{"pruning", c.loss.pruning},
            {"joints2d", c.loss.joints2d},
            {"verts3d", c.loss.verts3d},
            {"joints3d", c.loss.joints3d}}},
          {"epochs", c.epochs},
          {"steps", c.steps},
          {"batch", c.batch},
          {"seed", c.seed},
          {"data", c.data},
          {"out", c.out}};
}

namespace {

json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config " + path.string());
  return json::parse(in);
}

}  // namespace

RunConfig load_run_config(const std::filesystem::path& path) { return run_config_from_json(read_json(path)); }

gtr::ModelConfig desk_preset(const std::string& name) {
  gtr::ModelConfig m;
  if (name == "metro_full" || name == "metro_gtr") {
    m.variant = gtr::Variant::EncoderOnly;
    m.stages = {{64, 256, 4, 1}, {32, 128, 4, 1}};
    m.nsr = {32, 128, 4, 1};
    m.geometry_reduction = name == "metro_gtr";
  } else if (name == "fastmetro_full" || name == "fastmetro_gtr") {
    m.geometry_reduction = name == "fastmetro_gtr";
  } else if (name == "fastmetro_gtr_itp20") {
    m.prune_rate = 0.2;
  } else if (name == "fastmetro_gtr_itp50") {
    m.prune_rate = 0.5;
  } else {
    throw std::invalid_argument("unknown desk preset '" + name + "'");
  }
  m.validate();
  return m;
}

gtr::ModelConfig resolve_model_config(const std::string& spec) {
  const std::string prefix = "preset:";
  if (spec.rfind(prefix, 0) == 0) return desk_preset(spec.substr(prefix.size()));
  const auto j = read_json(spec);
  if (j.contains("model") || j.contains("optimizer")) return run_config_from_json(j).model;
  return model_config_from_json(j);
}

}  // namespace tore::harness
