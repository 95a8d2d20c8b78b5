#pragma once

#include <filesystem>
#include <string>

#include <json.hpp>

#include "tore/gtr/model.hpp"
#include "tore/losses/losses.hpp"

namespace tore::harness {

struct OptimizerConfig {
  std::string name = "adamw";
  double lr = 1e-4;
  double weight_decay = 1e-4;
  double grad_clip_norm = 0.3;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
};

struct RunConfig {
  gtr::ModelConfig model;
  OptimizerConfig optimizer;
  losses::LossWeights loss;
  std::size_t epochs = 1;
  std::size_t steps = 0;  // when > 0, overrides epochs
  std::size_t batch = 8;
  std::uint64_t seed = 0;
  std::string data;  // dataset path
  std::string out;   // output directory

  void validate() const;
};

/// Parses a model section. Every key is optional; unknown keys throw.
gtr::ModelConfig model_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const gtr::ModelConfig& m);

/// Parses a run config. Unknown keys anywhere throw std::invalid_argument
/// naming the offending key.
RunConfig run_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const RunConfig& c);
RunConfig load_run_config(const std::filesystem::path& path);

/// Named desk-scale model configs: metro_full, metro_gtr (encoder-only,
/// progressive dims), fastmetro_full, fastmetro_gtr (encoder-decoder),
/// fastmetro_gtr_itp20, fastmetro_gtr_itp50.
gtr::ModelConfig desk_preset(const std::string& name);

/// "preset:NAME" resolves a desk preset; anything else is read as a JSON file
/// holding either a run config (its "model" section is used) or a bare model
/// section.
gtr::ModelConfig resolve_model_config(const std::string& spec);

}  // namespace tore::harness
