#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

#include "tore/transformer/layers.hpp"

namespace tore::itp {

/// Cluster count kept after removing `prune_rate` of hw tokens:
/// floor((1 - prune_rate) * hw). Throws when the rate is outside [0, 1) or
/// nothing would be kept.
std::size_t token_count(std::size_t hw, double prune_rate);

/// Binary H x W occupancy grid, row-major.
struct IndicatorGrid {
  std::size_t height = 0, width = 0;
  std::vector<std::uint8_t> cells;

  bool at(std::size_t y, std::size_t x) const { return cells[y * width + x] != 0; }
  std::size_t size() const { return cells.size(); }
  std::size_t count() const;
};

/// Marks every cell that receives at least one point. Points are (x, y) in
/// pixels of an image_size x image_size frame; points outside the frame are
/// clamped to the border cells.
IndicatorGrid indicator_grid(const Eigen::MatrixX2d& points, std::size_t height, std::size_t width,
                             double image_size);

template <typename T>
struct PrunerOutput {
  BasicTensor<T> clusters;  // Z [T x c], layer-normalized
  BasicTensor<T> mapping;   // M [HW x T], each column sums to 1 over tokens
  BasicTensor<T> logits;    // [HW x T] before the softmax
  std::size_t height = 0, width = 0, tokens = 0;
};

/// Learnable clustering of HW image tokens into T cluster tokens.
///
/// conv 3x3 (c -> c/4) and GELU, a per-token linear map to T scores, softmax
/// over the token axis so that cluster i is a convex combination of image
/// tokens, Z = M^T F, then layer norm with affine.
template <typename T>
struct ImageTokenPruner {
  BasicTensor<T> conv_weight, conv_bias;
  Linear<T> assign;
  LayerNorm<T> norm;
  std::size_t height = 0, width = 0, channels = 0, tokens = 0;

  ImageTokenPruner() = default;
  ImageTokenPruner(ParamStore<T>& store, const std::string& name, std::size_t channels, std::size_t height,
                   std::size_t width, std::size_t tokens);
  /// features: [HW x c], rows in row-major grid order.
  PrunerOutput<T> operator()(const BasicTensor<T>& features) const;
};

/// Token reduction supervision: -(1 / (T * HW)) * sum_i sum_j F_d[j] * M[j, i].
template <typename T>
BasicTensor<T> pruning_loss(const IndicatorGrid& body, const BasicTensor<T>& mapping);

/// Mean over cells of sum_i M[j, i], split by indicator value. Returns
/// {body mean, background mean}; a side with no cells reports 0.
std::pair<double, double> cluster_mass(const IndicatorGrid& body, std::span<const float> mapping, std::size_t tokens);

}  // namespace tore::itp
