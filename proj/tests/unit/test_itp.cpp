#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "../common/cross_check.hpp"
#include "tore/itp/pruner.hpp"

using namespace tore;
using namespace tore::itp;

namespace {

IndicatorGrid grid_of(std::size_t h, std::size_t w, std::vector<std::uint8_t> cells) { return {h, w, std::move(cells)}; }

// Logits for features [H x W x c] laid out as [HW x c].
Tensor logits_of(const ImageTokenPruner<float>& p, const Tensor& f) { return p(f).logits; }

}  // namespace

TEST(TokenCount, KnownRates) {
  EXPECT_EQ(token_count(49, 0.2), 39u);
  EXPECT_EQ(token_count(49, 0.5), 24u);
  EXPECT_EQ(token_count(49, 0.0), 49u);
  EXPECT_EQ(token_count(10, 0.3), 7u);
  EXPECT_THROW(token_count(49, 1.0), std::invalid_argument);
  EXPECT_THROW(token_count(49, -0.1), std::invalid_argument);
  EXPECT_THROW(token_count(1, 0.5), std::invalid_argument);
}

TEST(IndicatorGrid, CellsClampAndSkipNonFinite) {
  Eigen::MatrixX2d pts(4, 2);
  pts << 0.5, 0.5,  //
      55.9, 8.5,    // x in last column, y in second row
      -20, 100,     // clamped to bottom-left
      std::numeric_limits<double>::quiet_NaN(), 10;
  const auto g = indicator_grid(pts, 7, 7, 56);
  EXPECT_TRUE(g.at(0, 0));
  EXPECT_TRUE(g.at(1, 6));
  EXPECT_TRUE(g.at(6, 0));
  EXPECT_EQ(g.count(), 3u);
}

TEST(Pruner, ShapesAndColumnStochasticMapping) {
  ParamStore<float> store(1);
  ImageTokenPruner<float> p(store, "p", 16, 7, 7, 39);
  Rng rng(2);
  const auto out = p(randn<float>({49, 16}, rng));
  EXPECT_EQ(out.clusters.shape(), (Shape{39, 16}));
  EXPECT_EQ(out.mapping.shape(), (Shape{49, 39}));
  for (std::size_t i = 0; i < 39; ++i) {
    double s = 0;
    for (std::size_t j = 0; j < 49; ++j) {
      const float m = out.mapping.at(j * 39 + i);
      EXPECT_GE(m, 0.f);
      s += m;
    }
    EXPECT_NEAR(s, 1.0, 1e-5);
  }
}

TEST(Pruner, LogitsShiftWithInteriorFeatures) {
  ParamStore<float> store(3);
  const std::size_t H = 7, W = 7, c = 8;
  ImageTokenPruner<float> p(store, "p", c, H, W, 5);
  Rng rng(4);
  const auto f = randn<float>({H * W, c}, rng);
  // Shift down one row; the first row is zero.
  std::vector<float> shifted(H * W * c, 0.f);
  for (std::size_t y = 1; y < H; ++y)
    for (std::size_t x = 0; x < W; ++x)
      for (std::size_t k = 0; k < c; ++k) shifted[(y * W + x) * c + k] = f.at(((y - 1) * W + x) * c + k);
  const auto a = logits_of(p, f), b = logits_of(p, Tensor::from({H * W, c}, shifted));
  // Cells whose 3x3 neighbourhood is inside the grid in both maps.
  for (std::size_t y = 2; y + 1 < H; ++y)
    for (std::size_t x = 1; x + 1 < W; ++x)
      for (std::size_t i = 0; i < 5; ++i) EXPECT_NEAR(b.at((y * W + x) * 5 + i), a.at(((y - 1) * W + x) * 5 + i), 1e-5);
}

TEST(Pruner, IdenticalTokensGiveIdenticalInteriorRowsAndClusters) {
  ParamStore<float> store(5);
  const std::size_t H = 5, W = 5, c = 8, T = 4;
  ImageTokenPruner<float> p(store, "p", c, H, W, T);
  Rng rng(6);
  const auto one = randn<float>({1, c}, rng);
  std::vector<float> v;
  for (std::size_t j = 0; j < H * W; ++j) v.insert(v.end(), one.data().begin(), one.data().end());
  const auto out = p(Tensor::from({H * W, c}, v));
  const std::size_t ref = 1 * W + 1;
  for (std::size_t y = 1; y + 1 < H; ++y)
    for (std::size_t x = 1; x + 1 < W; ++x)
      for (std::size_t i = 0; i < T; ++i) EXPECT_EQ(out.mapping.at((y * W + x) * T + i), out.mapping.at(ref * T + i));
  for (std::size_t i = 1; i < T; ++i)
    for (std::size_t k = 0; k < c; ++k) EXPECT_NEAR(out.clusters.at(i * c + k), out.clusters.at(k), 1e-5);
}

TEST(PruningLoss, HandCase) {
  const auto body = grid_of(2, 2, {1, 0, 1, 0});
  // M [4 x 2]: column 0 = (0.1, 0.2, 0.3, 0.4), column 1 uniform.
  const auto m = TensorD::from({4, 2}, {0.1, 0.25, 0.2, 0.25, 0.3, 0.25, 0.4, 0.25});
  EXPECT_NEAR(pruning_loss(body, m).item(), -(0.4 + 0.5) / 8.0, 1e-15);
}

TEST(PruningLoss, ExtremesAndRange) {
  Rng rng(7);
  const std::size_t hw = 9, T = 4;
  ParamStore<double> store(8);
  ImageTokenPruner<double> p(store, "p", 8, 3, 3, T);
  const auto m = p(randn<double>({hw, 8}, rng)).mapping;
  EXPECT_EQ(pruning_loss(grid_of(3, 3, std::vector<std::uint8_t>(hw, 0)), m).item(), 0.0);
  // Each column sums to one, so full coverage gives -1/HW.
  EXPECT_NEAR(pruning_loss(grid_of(3, 3, std::vector<std::uint8_t>(hw, 1)), m).item(), -1.0 / hw, 1e-15);
  std::uniform_int_distribution<int> bit(0, 1);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<std::uint8_t> cells(hw);
    for (auto& c : cells) c = static_cast<std::uint8_t>(bit(rng));
    const double l = pruning_loss(grid_of(3, 3, cells), m).item();
    EXPECT_LE(l, 0.0);
    EXPECT_GE(l, -1.0 / T);
  }
}

TEST(PruningLoss, GradientCheck) {
  const auto body = grid_of(3, 3, {1, 0, 0, 1, 1, 0, 0, 1, 0});
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    auto res = tore::testing::check_params(
        [body]<typename T>(ParamStore<T>& s) -> std::function<BasicTensor<T>()> {
          auto f = s.add("features", {9, 8}, Init::Normal, 1.0);
          auto p = std::make_shared<ImageTokenPruner<T>>(s, "p", 8, 3, 3, 4);
          return [f, p, body] { return pruning_loss(body, (*p)(f).mapping); };
        },
        seed);
    EXPECT_LT(res.rel_error, 1e-3) << "seed " << seed;
  }
}

TEST(Pruner, ClusterTokensGradientCheck) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    auto res = tore::testing::check_params(
        []<typename T>(ParamStore<T>& s) -> std::function<BasicTensor<T>()> {
          auto f = s.add("features", {9, 8}, Init::Normal, 1.0);
          auto p = std::make_shared<ImageTokenPruner<T>>(s, "p", 8, 3, 3, 4);
          return [f, p] { return tore::testing::readout((*p)(f).clusters); };
        },
        seed);
    EXPECT_LT(res.rel_error, 1e-3) << "seed " << seed;
  }
}

TEST(ClusterMass, SplitsByIndicator) {
  const auto body = grid_of(2, 2, {1, 0, 1, 0});
  const std::vector<float> m{0.4f, 0.5f, 0.1f, 0.0f, 0.3f, 0.5f, 0.2f, 0.0f};  // [4 x 2]
  const auto [on, off] = cluster_mass(body, m, 2);
  EXPECT_NEAR(on, (0.9 + 0.8) / 2, 1e-6);
  EXPECT_NEAR(off, (0.1 + 0.2) / 2, 1e-6);
}
