#include "tore/itp/pruner.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace tore::itp {

std::size_t token_count(std::size_t hw, double prune_rate) {
  if (!(prune_rate >= 0.0 && prune_rate < 1.0)) {
    throw std::invalid_argument("token_count: prune rate must be in [0, 1), got " + std::to_string(prune_rate));
  }
  // The product is nudged before flooring so that e.g. 0.8 * 49 = 39.2 and
  // 0.5 * 48 = 24 are not lost to binary rounding.
  const auto kept = static_cast<std::size_t>(std::floor((1.0 - prune_rate) * static_cast<double>(hw) + 1e-9));
  if (kept == 0) throw std::invalid_argument("token_count: no tokens left for hw " + std::to_string(hw));
  return kept;
}

std::size_t IndicatorGrid::count() const {
  return static_cast<std::size_t>(std::count(cells.begin(), cells.end(), std::uint8_t{1}));
}

IndicatorGrid indicator_grid(const Eigen::MatrixX2d& points, std::size_t height, std::size_t width,
                             double image_size) {
  if (!(image_size > 0)) throw std::invalid_argument("indicator_grid: image size must be positive");
  IndicatorGrid g{height, width, std::vector<std::uint8_t>(height * width, 0)};
  auto cell = [](double v, double size, std::size_t n) {
    const double c = std::floor(v / size * static_cast<double>(n));
    return static_cast<std::size_t>(std::clamp(c, 0.0, static_cast<double>(n - 1)));
  };
  for (Eigen::Index p = 0; p < points.rows(); ++p) {
    const double x = points(p, 0), y = points(p, 1);
    if (!std::isfinite(x) || !std::isfinite(y)) continue;
    g.cells[cell(y, image_size, height) * width + cell(x, image_size, width)] = 1;
  }
  return g;
}

template <typename T>
ImageTokenPruner<T>::ImageTokenPruner(ParamStore<T>& store, const std::string& name, std::size_t channels_,
                                      std::size_t height_, std::size_t width_, std::size_t tokens_)
    : height(height_), width(width_), channels(channels_), tokens(tokens_) {
  if (channels % 4 != 0) {
    throw std::invalid_argument("ImageTokenPruner: channel count " + std::to_string(channels) + " not divisible by 4");
  }
  if (tokens == 0 || tokens > height * width) throw std::invalid_argument("ImageTokenPruner: bad cluster count");
  const std::size_t reduced = channels / 4;
  // Scaled init over the conv fan-in.
  conv_weight = store.add(name + ".conv.weight", {reduced, 3, 3, channels}, Init::Normal,
                          1.0 / std::sqrt(9.0 * static_cast<double>(channels)));
  conv_bias = store.add(name + ".conv.bias", {reduced}, Init::Zeros);
  assign = Linear<T>(store, name + ".assign", reduced, tokens);
  norm = LayerNorm<T>(store, name + ".norm", channels);
}

template <typename T>
PrunerOutput<T> ImageTokenPruner<T>::operator()(const BasicTensor<T>& features) const {
  if (features.rank() != 2 || features.dim(0) != height * width || features.dim(1) != channels) {
    throw ShapeError("ImageTokenPruner: features " + to_string(features.shape()) + ", expected [" +
                     std::to_string(height * width) + " x " + std::to_string(channels) + "]");
  }
  auto grid = reshape(features, {height, width, channels});
  auto h = gelu(conv2d(grid, conv_weight, conv_bias, 1, 1));
  auto logits = assign(reshape(h, {height * width, channels / 4}));
  auto mapping = softmax(logits, Axis::Rows);
  auto clusters = norm(matmul(transpose(mapping), features));
  return {clusters, mapping, logits, height, width, tokens};
}

template <typename T>
BasicTensor<T> pruning_loss(const IndicatorGrid& body, const BasicTensor<T>& mapping) {
  if (mapping.rank() != 2 || mapping.dim(0) != body.size()) {
    throw ShapeError("pruning_loss: mapping " + to_string(mapping.shape()) + " for a grid of " +
                     std::to_string(body.size()) + " cells");
  }
  const std::size_t hw = mapping.dim(0), t = mapping.dim(1);
  std::vector<T> weight(hw * t);
  for (std::size_t j = 0; j < hw; ++j)
    for (std::size_t i = 0; i < t; ++i) weight[j * t + i] = body.cells[j] ? T(1) : T(0);
  auto masked = sum(mul(mapping, BasicTensor<T>::from({hw, t}, std::move(weight))));
  return scale(masked, -1.0 / (static_cast<double>(t) * static_cast<double>(hw)));
}

std::pair<double, double> cluster_mass(const IndicatorGrid& body, std::span<const float> mapping, std::size_t tokens) {
  if (mapping.size() != body.size() * tokens) throw ShapeError("cluster_mass: mapping size mismatch");
  double on = 0, off = 0;
  std::size_t n_on = 0, n_off = 0;
  for (std::size_t j = 0; j < body.size(); ++j) {
    double row = 0;
    for (std::size_t i = 0; i < tokens; ++i) row += mapping[j * tokens + i];
    if (body.cells[j]) {
      on += row;
      ++n_on;
    } else {
      off += row;
      ++n_off;
    }
  }
  return {n_on ? on / n_on : 0.0, n_off ? off / n_off : 0.0};
}

template struct ImageTokenPruner<float>;
template struct ImageTokenPruner<double>;
template BasicTensor<float> pruning_loss(const IndicatorGrid&, const BasicTensor<float>&);
template BasicTensor<double> pruning_loss(const IndicatorGrid&, const BasicTensor<double>&);

}  // namespace tore::itp
