#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include <Eigen/Dense>

#include "tore/mesh/template.hpp"

namespace tore::harness {

struct SynthConfig {
  std::size_t count = 64;
  std::uint64_t seed = 0;
  std::size_t image_size = 56;
  double noise_sigma = 0.05;   // std of the uniform background noise
  double blob_sigma = 1.2;     // Gaussian splat radius, pixels
  double max_rotation = 1.5707963267948966;  // per-joint axis-angle magnitude bound
  double min_scale = 20, max_scale = 26;     // pixels per model unit
  double max_shift = 3;                      // camera translation jitter, pixels
  std::uint64_t template_seed = 0;
  mesh::TemplateCounts template_counts{};
};

struct Sample {
  Eigen::MatrixXf render;  // [S x S], row y, column x
  Eigen::MatrixX3d verts_low, verts_mid, verts_high;
  Eigen::MatrixX3d joints3d;
  Eigen::MatrixX2d joints2d;
  Eigen::Vector3d camera;  // (s, t_x, t_y)
  std::uint64_t pose_seed = 0;
};

struct Dataset {
  SynthConfig config;
  std::vector<Sample> samples;
};

/// Random LBS poses of the template, random weak-perspective cameras, and
/// renders made by splatting the projected coarse vertices as Gaussian blobs
/// over uniform noise.
Dataset synth_dataset(const SynthConfig& cfg);
Dataset synth_dataset(const SynthConfig& cfg, const mesh::MeshTemplate& tmpl);

void save_dataset(const std::filesystem::path& path, const Dataset& d);
Dataset load_dataset(const std::filesystem::path& path);

}  // namespace tore::harness
