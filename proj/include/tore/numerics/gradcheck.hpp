#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "tore/numerics/tensor.hpp"

namespace tore {

/// max_i |a_i - b_i| / max(1, |b_i|); `b` is the reference.
inline double max_rel_error(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw ShapeError("max_rel_error: length mismatch");
  double worst = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    worst = std::max(worst, std::abs(a[i] - b[i]) / std::max(1.0, std::abs(b[i])));
  }
  return worst;
}

/// Central differences of a scalar function with respect to selected
/// coordinates of `x`. `x` is perturbed in place and restored. Evaluated
/// without recording a graph. f must be deterministic.
template <typename T>
std::vector<double> finite_difference(const std::function<BasicTensor<T>()>& f, BasicTensor<T> x,
                                      const std::vector<std::size_t>& coords, double eps) {
  NoGradGuard no_grad;
  std::vector<double> out;
  out.reserve(coords.size());
  auto data = x.mutable_data();
  for (std::size_t i : coords) {
    const T saved = data[i];
    data[i] = static_cast<T>(saved + eps);
    const double up = f().item();
    data[i] = static_cast<T>(saved - eps);
    const double down = f().item();
    data[i] = saved;
    out.push_back((up - down) / (2 * eps));
  }
  return out;
}

/// Analytic gradient of f with respect to `x` at the selected coordinates.
template <typename T>
std::vector<double> analytic_gradient(const std::function<BasicTensor<T>()>& f, BasicTensor<T> x,
                                      const std::vector<std::size_t>& coords) {
  const bool had = x.requires_grad();
  x.set_requires_grad(true);
  x.zero_grad();
  backward(f());
  std::vector<double> out;
  out.reserve(coords.size());
  for (std::size_t i : coords) out.push_back(x.has_grad() ? static_cast<double>(x.grad()[i]) : 0.0);
  x.zero_grad();
  x.set_requires_grad(had);
  return out;
}

inline std::vector<std::size_t> all_coords(std::size_t n) {
  std::vector<std::size_t> c(n);
  for (std::size_t i = 0; i < n; ++i) c[i] = i;
  return c;
}

/// Max relative error between the analytic gradient of f at x and central
/// differences with step eps, over every coordinate of x.
template <typename T>
double grad_check(const std::function<BasicTensor<T>(const BasicTensor<T>&)>& f, BasicTensor<T> x, double eps) {
  const auto coords = all_coords(x.numel());
  const std::function<BasicTensor<T>()> bound = [&] { return f(x); };
  return max_rel_error(analytic_gradient(bound, x, coords), finite_difference(bound, x, coords, eps));
}

}  // namespace tore
