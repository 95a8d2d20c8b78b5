#pragma once

// Finite-difference check of the full training loss through the whole model
// (backbone, pruner, transformer, shape head, upsampling) on one synthetic
// sample. The f32 analytic gradient is compared with central differences of
// the f64 model holding the same parameter values.

#include <algorithm>

#include "cross_check.hpp"
#include "tore/harness/dataset.hpp"
#include "tore/harness/train.hpp"

namespace tore::testing {

template <typename T>
BasicTensor<T> sample_loss(const gtr::Model<T>& model, const harness::Sample& s, const losses::LossWeights& w) {
  auto mat = [](const auto& m) {
    std::vector<T> v;
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index c = 0; c < m.cols(); ++c) v.push_back(static_cast<T>(m(r, c)));
    return BasicTensor<T>::from({static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())}, std::move(v));
  };
  const auto& cfg = model.config();
  const auto out = model.forward(mat(s.render), gtr::Mode::Eval);
  losses::Prediction<T> pred{out.joints3d, out.regressed_joints3d, out.verts, out.camera,
                             out.pruner ? out.pruner->mapping : BasicTensor<T>()};
  losses::Target<T> gt{mat(s.joints3d), mat(s.joints2d), {mat(s.verts_low), mat(s.verts_mid), mat(s.verts_high)}};
  const auto cam = out.camera.data();
  const auto body = losses::body_indicator(s.verts_high, static_cast<double>(cam[0]), static_cast<double>(cam[1]),
                                           static_cast<double>(cam[2]), cfg.grid, cfg.grid,
                                           static_cast<double>(cfg.image_size));
  return losses::total_loss(pred, gt, w, out.pruner ? &body : nullptr).total;
}

/// Max relative error over `coords_per_tensor` probes of every parameter.
/// Loss weights are scaled down so that f32 rounding of the large joint
/// terms does not dominate the comparison; the graph is unchanged.
inline CheckResult model_gradient_check(const gtr::ModelConfig& cfg, std::uint64_t seed,
                                        std::size_t coords_per_tensor = 2) {
  harness::SynthConfig sc;
  sc.count = 1;
  sc.seed = seed;
  sc.image_size = cfg.image_size;
  const auto data = harness::synth_dataset(sc);
  const losses::LossWeights w{1, 0.1, 1, 1, 1, 1};

  gtr::Model<float> mf(cfg, seed);
  gtr::Model<double> md(cfg, seed);
  md.params().copy_from(mf.params());
  mf.params().zero_grad();
  backward(sample_loss(mf, data.samples[0], w));

  const std::function<TensorD()> f = [&] { return sample_loss(md, data.samples[0], w); };
  Rng rng(derive_seed(seed, 5));
  CheckResult res;
  for (std::size_t k = 0; k < mf.params().size(); ++k) {
    const auto& tf = mf.params().tensors()[k];
    const auto coords = probe_coords(tf.numel(), coords_per_tensor, rng);
    std::vector<double> analytic;
    for (auto i : coords) analytic.push_back(tf.has_grad() ? static_cast<double>(tf.grad()[i]) : 0.0);
    const auto fd = finite_difference<double>(f, md.params().tensors()[k], coords, 1e-6);
    res.rel_error = std::max(res.rel_error, max_rel_error(analytic, fd));
    res.coords += coords.size();
  }
  return res;
}

}  // namespace tore::testing
