#include "tore/numerics/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>

#include <Eigen/Core>

namespace tore {

AttnMask::AttnMask(std::size_t queries, std::size_t keys, std::vector<std::uint8_t> allow)
    : queries_(queries), keys_(keys), allow_(std::move(allow)) {
  if (allow_.size() != queries_ * keys_) throw ShapeError("AttnMask: allow matrix size does not match queries x keys");
  for (std::size_t q = 0; q < queries_; ++q) {
    const std::size_t n = row_count(q);
    if (n == 0) throw std::invalid_argument("AttnMask: query row " + std::to_string(q) + " allows no key");
    allowed_ += n;
  }
}

AttnMask AttnMask::all(std::size_t queries, std::size_t keys) {
  return AttnMask(queries, keys, std::vector<std::uint8_t>(queries * keys, 1));
}

std::size_t AttnMask::row_count(std::size_t q) const {
  return static_cast<std::size_t>(
      std::count_if(allow_.begin() + q * keys_, allow_.begin() + (q + 1) * keys_, [](auto a) { return a != 0; }));
}

namespace {

template <typename T>
using NodeT = detail::Node<T>;

template <typename T>
using BackwardFn = std::function<void(NodeT<T>&)>;

// Builds the output tensor, validates finiteness and records the graph edge.
template <typename T>
BasicTensor<T> make_result(const char* op, Shape shape, std::vector<T> data,
                           std::initializer_list<const BasicTensor<T>*> inputs, BackwardFn<T> fn) {
  for (const T& v : data) {
    if (!std::isfinite(v)) throw NumericError(std::string(op) + ": produced a non-finite value");
  }
  auto node = std::make_shared<NodeT<T>>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->op = op;
  if (grad_enabled()) {
    bool any = false;
    for (const auto* in : inputs) any = any || (in->defined() && in->requires_grad());
    if (any) {
      node->requires_grad = true;
      for (const auto* in : inputs) {
        if (in->defined()) node->inputs.push_back(in->node_ptr());
      }
      node->backward = std::move(fn);
    }
  }
  return BasicTensor<T>(std::move(node));
}

template <typename T>
void require_defined(const BasicTensor<T>& t, const char* op) {
  if (!t.defined()) throw ShapeError(std::string(op) + ": undefined operand");
}

template <typename T>
void require_rank(const BasicTensor<T>& t, std::size_t rank, const char* op) {
  require_defined(t, op);
  if (t.rank() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " + to_string(t.shape()));
  }
}

template <typename T>
void require_same_shape(const BasicTensor<T>& a, const BasicTensor<T>& b, const char* op) {
  require_defined(a, op);
  require_defined(b, op);
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  }
}

// Input node at position i of the recorded inputs, or null when that input
// does not need a gradient.
template <typename T>
NodeT<T>* grad_target(NodeT<T>& out, std::size_t i) {
  if (i >= out.inputs.size()) return nullptr;
  NodeT<T>* n = out.inputs[i].get();
  return n->requires_grad ? n : nullptr;
}

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using CMap = Eigen::Map<const RowMat<T>>;
template <typename T>
using MMap = Eigen::Map<RowMat<T>>;

// C[m x n] += A[m x k] * B[k x n]
template <typename T>
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const T* A, const T* B, T* C) {
  const auto M = static_cast<Eigen::Index>(m), N = static_cast<Eigen::Index>(n), K = static_cast<Eigen::Index>(k);
  MMap<T>(C, M, N).noalias() += CMap<T>(A, M, K) * CMap<T>(B, K, N);
}

// C[m x k] += A[m x n] * B[k x n]^T
template <typename T>
void gemm_nt(std::size_t m, std::size_t k, std::size_t n, const T* A, const T* B, T* C) {
  const auto M = static_cast<Eigen::Index>(m), N = static_cast<Eigen::Index>(n), K = static_cast<Eigen::Index>(k);
  MMap<T>(C, M, K).noalias() += CMap<T>(A, M, N) * CMap<T>(B, K, N).transpose();
}

// C[k x n] += A[m x k]^T * B[m x n]
template <typename T>
void gemm_tn(std::size_t m, std::size_t k, std::size_t n, const T* A, const T* B, T* C) {
  const auto M = static_cast<Eigen::Index>(m), N = static_cast<Eigen::Index>(n), K = static_cast<Eigen::Index>(k);
  MMap<T>(C, K, N).noalias() += CMap<T>(A, M, K).transpose() * CMap<T>(B, M, N);
}

}  // namespace

template <typename T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_same_shape(a, b, "add");
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
  FlopCounter::add(out.size(), false);
  return make_result<T>("add", a.shape(), std::move(out), {&a, &b}, [](NodeT<T>& o) {
    for (std::size_t s = 0; s < 2; ++s) {
      if (auto* in = grad_target(o, s)) {
        T* g = in->grad_buffer();
        for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i];
      }
    }
  });
}

template <typename T>
BasicTensor<T> sub(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_same_shape(a, b, "sub");
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] - b.data()[i];
  FlopCounter::add(out.size(), false);
  return make_result<T>("sub", a.shape(), std::move(out), {&a, &b}, [](NodeT<T>& o) {
    if (auto* in = grad_target(o, 0)) {
      T* g = in->grad_buffer();
      for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i];
    }
    if (auto* in = grad_target(o, 1)) {
      T* g = in->grad_buffer();
      for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] -= o.grad[i];
    }
  });
}

template <typename T>
BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_same_shape(a, b, "mul");
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
  FlopCounter::add(out.size(), false);
  return make_result<T>("mul", a.shape(), std::move(out), {&a, &b}, [](NodeT<T>& o) {
    NodeT<T>* na = o.inputs[0].get();
    NodeT<T>* nb = o.inputs[1].get();
    if (na->requires_grad) {
      T* g = na->grad_buffer();
      for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i] * nb->data[i];
    }
    if (nb->requires_grad) {
      T* g = nb->grad_buffer();
      for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i] * na->data[i];
    }
  });
}

template <typename T>
BasicTensor<T> scale(const BasicTensor<T>& x, double factor) {
  require_defined(x, "scale");
  const T f = static_cast<T>(factor);
  std::vector<T> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.data()[i] * f;
  FlopCounter::add(out.size(), false);
  return make_result<T>("scale", x.shape(), std::move(out), {&x}, [f](NodeT<T>& o) {
    if (auto* in = grad_target(o, 0)) {
      T* g = in->grad_buffer();
      for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i] * f;
    }
  });
}

template <typename T>
BasicTensor<T> add_row(const BasicTensor<T>& x, const BasicTensor<T>& row) {
  require_rank(x, 2, "add_row");
  require_defined(row, "add_row");
  const std::size_t n = x.dim(0), c = x.dim(1);
  if (row.numel() != c) throw ShapeError("add_row: row of " + to_string(row.shape()) + " for " + to_string(x.shape()));
  std::vector<T> out(x.numel());
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] = x.data()[i * c + j] + row.data()[j];
  FlopCounter::add(out.size(), false);
  return make_result<T>("add_row", x.shape(), std::move(out), {&x, &row}, [n, c](NodeT<T>& o) {
    if (auto* in = grad_target(o, 0)) {
      T* g = in->grad_buffer();
      for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i];
    }
    if (auto* in = grad_target(o, 1)) {
      T* g = in->grad_buffer();
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < c; ++j) g[j] += o.grad[i * c + j];
    }
  });
}

template <typename T>
BasicTensor<T> mul_scalar(const BasicTensor<T>& x, const BasicTensor<T>& s) {
  require_defined(x, "mul_scalar");
  require_defined(s, "mul_scalar");
  if (s.numel() != 1) throw ShapeError("mul_scalar: factor must hold one element, got " + to_string(s.shape()));
  const T f = s.data()[0];
  std::vector<T> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.data()[i] * f;
  FlopCounter::add(out.size(), false);
  return make_result<T>("mul_scalar", x.shape(), std::move(out), {&x, &s}, [](NodeT<T>& o) {
    NodeT<T>* nx = o.inputs[0].get();
    NodeT<T>* ns = o.inputs[1].get();
    if (nx->requires_grad) {
      T* g = nx->grad_buffer();
      const T f = ns->data[0];
      for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i] * f;
    }
    if (ns->requires_grad) {
      T acc = 0;
      for (std::size_t i = 0; i < o.grad.size(); ++i) acc += o.grad[i] * nx->data[i];
      ns->grad_buffer()[0] += acc;
    }
  });
}

template <typename T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) throw ShapeError("matmul: " + to_string(a.shape()) + " x " + to_string(b.shape()));
  std::vector<T> out(m * n, T(0));
  gemm_nn(m, n, k, a.data().data(), b.data().data(), out.data());
  FlopCounter::add(2ull * m * n * k, true);
  return make_result<T>("matmul", {m, n}, std::move(out), {&a, &b}, [m, n, k](NodeT<T>& o) {
    NodeT<T>* na = o.inputs[0].get();
    NodeT<T>* nb = o.inputs[1].get();
    if (na->requires_grad) gemm_nt(m, k, n, o.grad.data(), nb->data.data(), na->grad_buffer());
    if (nb->requires_grad) gemm_tn(m, k, n, na->data.data(), o.grad.data(), nb->grad_buffer());
  });
}

template <typename T>
BasicTensor<T> linear(const BasicTensor<T>& x, const BasicTensor<T>& weight, const BasicTensor<T>& bias) {
  require_rank(x, 2, "linear");
  require_rank(weight, 2, "linear");
  const std::size_t m = x.dim(0), k = x.dim(1), n = weight.dim(1);
  if (weight.dim(0) != k) throw ShapeError("linear: input " + to_string(x.shape()) + " vs weight " + to_string(weight.shape()));
  const bool has_bias = bias.defined();
  if (has_bias && bias.numel() != n) throw ShapeError("linear: bias " + to_string(bias.shape()) + " for " + std::to_string(n) + " outputs");
  std::vector<T> out(m * n, T(0));
  if (has_bias) {
    for (std::size_t i = 0; i < m; ++i) std::copy(bias.data().begin(), bias.data().end(), out.begin() + i * n);
  }
  gemm_nn(m, n, k, x.data().data(), weight.data().data(), out.data());
  FlopCounter::add(2ull * m * n * k, true);
  if (has_bias) FlopCounter::add(m * n, false);
  return make_result<T>("linear", {m, n}, std::move(out), {&x, &weight, &bias}, [m, n, k](NodeT<T>& o) {
    NodeT<T>* nx = o.inputs[0].get();
    NodeT<T>* nw = o.inputs[1].get();
    if (nx->requires_grad) gemm_nt(m, k, n, o.grad.data(), nw->data.data(), nx->grad_buffer());
    if (nw->requires_grad) gemm_tn(m, k, n, nx->data.data(), o.grad.data(), nw->grad_buffer());
    if (auto* nb = grad_target(o, 2)) {
      T* g = nb->grad_buffer();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) g[j] += o.grad[i * n + j];
    }
  });
}

template <typename T>
BasicTensor<T> transpose(const BasicTensor<T>& x) {
  require_rank(x, 2, "transpose");
  const std::size_t r = x.dim(0), c = x.dim(1);
  std::vector<T> out(x.numel());
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = x.data()[i * c + j];
  return make_result<T>("transpose", {c, r}, std::move(out), {&x}, [r, c](NodeT<T>& o) {
    if (auto* in = grad_target(o, 0)) {
      T* g = in->grad_buffer();
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) g[i * c + j] += o.grad[j * r + i];
    }
  });
}

template <typename T>
BasicTensor<T> softmax(const BasicTensor<T>& x, Axis axis) {
  require_rank(x, 2, "softmax");
  const std::size_t r = x.dim(0), c = x.dim(1);
  // Iterate over "lanes" of length len with the given strides.
  const bool rows = axis == Axis::Cols;  // softmax along columns index => per row
  const std::size_t lanes = rows ? r : c, len = rows ? c : r;
  const std::size_t lane_stride = rows ? c : 1, elem_stride = rows ? 1 : c;
  std::vector<T> out(x.numel());
  for (std::size_t l = 0; l < lanes; ++l) {
    const std::size_t base = l * lane_stride;
    T mx = -std::numeric_limits<T>::infinity();
    for (std::size_t e = 0; e < len; ++e) mx = std::max(mx, x.data()[base + e * elem_stride]);
    double total = 0;
    for (std::size_t e = 0; e < len; ++e) {
      const T v = std::exp(x.data()[base + e * elem_stride] - mx);
      out[base + e * elem_stride] = v;
      total += v;
    }
    const T inv = static_cast<T>(1.0 / total);
    for (std::size_t e = 0; e < len; ++e) out[base + e * elem_stride] *= inv;
  }
  FlopCounter::add(3ull * out.size(), false);
  return make_result<T>("softmax", x.shape(), std::move(out), {&x},
                        [lanes, len, lane_stride, elem_stride](NodeT<T>& o) {
                          auto* in = grad_target(o, 0);
                          if (!in) return;
                          T* g = in->grad_buffer();
                          for (std::size_t l = 0; l < lanes; ++l) {
                            const std::size_t base = l * lane_stride;
                            double dot = 0;
                            for (std::size_t e = 0; e < len; ++e) {
                              const std::size_t i = base + e * elem_stride;
                              dot += o.grad[i] * o.data[i];
                            }
                            for (std::size_t e = 0; e < len; ++e) {
                              const std::size_t i = base + e * elem_stride;
                              g[i] += o.data[i] * (o.grad[i] - static_cast<T>(dot));
                            }
                          }
                        });
}

template <typename T>
BasicTensor<T> layer_norm(const BasicTensor<T>& x, const BasicTensor<T>& gamma, const BasicTensor<T>& beta,
                          double eps) {
  require_rank(x, 2, "layer_norm");
  const std::size_t n = x.dim(0), d = x.dim(1);
  const bool affine = gamma.defined();
  if (affine && (gamma.numel() != d || !beta.defined() || beta.numel() != d)) {
    throw ShapeError("layer_norm: affine parameters must have " + std::to_string(d) + " elements");
  }
  std::vector<T> xhat(x.numel());
  std::vector<T> inv_std(n);
  for (std::size_t i = 0; i < n; ++i) {
    const T* row = x.data().data() + i * d;
    double mu = 0;
    for (std::size_t j = 0; j < d; ++j) mu += row[j];
    mu /= static_cast<double>(d);
    double var = 0;
    for (std::size_t j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(d);
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[i] = static_cast<T>(is);
    for (std::size_t j = 0; j < d; ++j) xhat[i * d + j] = static_cast<T>((row[j] - mu) * is);
  }
  std::vector<T> out = xhat;
  if (affine) {
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < d; ++j) out[i * d + j] = xhat[i * d + j] * gamma.data()[j] + beta.data()[j];
  }
  FlopCounter::add(5ull * out.size(), false);
  return make_result<T>(
      "layer_norm", x.shape(), std::move(out), {&x, &gamma, &beta},
      [n, d, affine, xhat = std::move(xhat), inv_std = std::move(inv_std)](NodeT<T>& o) {
        NodeT<T>* nx = o.inputs[0].get();
        NodeT<T>* ng = affine ? o.inputs[1].get() : nullptr;
        NodeT<T>* nb = affine ? o.inputs[2].get() : nullptr;
        if (ng && ng->requires_grad) {
          T* g = ng->grad_buffer();
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < d; ++j) g[j] += o.grad[i * d + j] * xhat[i * d + j];
        }
        if (nb && nb->requires_grad) {
          T* g = nb->grad_buffer();
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < d; ++j) g[j] += o.grad[i * d + j];
        }
        if (!nx->requires_grad) return;
        T* g = nx->grad_buffer();
        std::vector<T> dxhat(d);
        for (std::size_t i = 0; i < n; ++i) {
          double mean_d = 0, mean_dx = 0;
          for (std::size_t j = 0; j < d; ++j) {
            dxhat[j] = o.grad[i * d + j] * (ng ? ng->data[j] : T(1));
            mean_d += dxhat[j];
            mean_dx += dxhat[j] * xhat[i * d + j];
          }
          mean_d /= static_cast<double>(d);
          mean_dx /= static_cast<double>(d);
          for (std::size_t j = 0; j < d; ++j) {
            g[i * d + j] += inv_std[i] * static_cast<T>(dxhat[j] - mean_d - xhat[i * d + j] * mean_dx);
          }
        }
      });
}

template <typename T>
BasicTensor<T> gelu(const BasicTensor<T>& x) {
  require_defined(x, "gelu");
  std::vector<T> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const T v = x.data()[i];
    out[i] = T(0.5) * v * (T(1) + std::erf(v * static_cast<T>(std::numbers::sqrt2 / 2)));
  }
  FlopCounter::add(out.size(), false);
  return make_result<T>("gelu", x.shape(), std::move(out), {&x}, [](NodeT<T>& o) {
    auto* in = grad_target(o, 0);
    if (!in) return;
    T* g = in->grad_buffer();
    const T inv_sqrt_2pi = static_cast<T>(0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2);
    for (std::size_t i = 0; i < o.grad.size(); ++i) {
      const T v = in->data[i];
      const T cdf = T(0.5) * (T(1) + std::erf(v * static_cast<T>(std::numbers::sqrt2 / 2)));
      const T pdf = inv_sqrt_2pi * std::exp(T(-0.5) * v * v);
      g[i] += o.grad[i] * (cdf + v * pdf);
    }
  });
}

template <typename T>
BasicTensor<T> softplus(const BasicTensor<T>& x) {
  require_defined(x, "softplus");
  std::vector<T> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const T v = x.data()[i];
    out[i] = v > T(20) ? v : std::log1p(std::exp(v));
  }
  FlopCounter::add(out.size(), false);
  return make_result<T>("softplus", x.shape(), std::move(out), {&x}, [](NodeT<T>& o) {
    auto* in = grad_target(o, 0);
    if (!in) return;
    T* g = in->grad_buffer();
    for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i] / (T(1) + std::exp(-in->data[i]));
  });
}

template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& x, const BasicTensor<T>& weight, const BasicTensor<T>& bias,
                      std::size_t stride, std::size_t pad) {
  require_rank(x, 3, "conv2d");
  require_rank(weight, 4, "conv2d");
  const std::size_t H = x.dim(0), W = x.dim(1), Cin = x.dim(2);
  const std::size_t Cout = weight.dim(0), K = weight.dim(1);
  if (weight.dim(2) != K || weight.dim(3) != Cin) {
    throw ShapeError("conv2d: weight " + to_string(weight.shape()) + " for input " + to_string(x.shape()));
  }
  if (stride == 0 || H + 2 * pad < K || W + 2 * pad < K) throw ShapeError("conv2d: kernel larger than padded input");
  const bool has_bias = bias.defined();
  if (has_bias && bias.numel() != Cout) throw ShapeError("conv2d: bias size mismatch");
  const std::size_t Ho = (H + 2 * pad - K) / stride + 1, Wo = (W + 2 * pad - K) / stride + 1;
  std::vector<T> out(Ho * Wo * Cout, T(0));
  const T* xd = x.data().data();
  const T* wd = weight.data().data();
  for (std::size_t oy = 0; oy < Ho; ++oy) {
    for (std::size_t ox = 0; ox < Wo; ++ox) {
      T* o = out.data() + (oy * Wo + ox) * Cout;
      if (has_bias) std::copy(bias.data().begin(), bias.data().end(), o);
      for (std::size_t ky = 0; ky < K; ++ky) {
        const long iy = static_cast<long>(oy * stride + ky) - static_cast<long>(pad);
        if (iy < 0 || iy >= static_cast<long>(H)) continue;
        for (std::size_t kx = 0; kx < K; ++kx) {
          const long ix = static_cast<long>(ox * stride + kx) - static_cast<long>(pad);
          if (ix < 0 || ix >= static_cast<long>(W)) continue;
          const T* xi = xd + (static_cast<std::size_t>(iy) * W + static_cast<std::size_t>(ix)) * Cin;
          for (std::size_t co = 0; co < Cout; ++co) {
            const T* w = wd + ((co * K + ky) * K + kx) * Cin;
            T acc = 0;
            for (std::size_t ci = 0; ci < Cin; ++ci) acc += w[ci] * xi[ci];
            o[co] += acc;
          }
        }
      }
    }
  }
  FlopCounter::add(2ull * Ho * Wo * Cout * K * K * Cin, true);
  return make_result<T>(
      "conv2d", {Ho, Wo, Cout}, std::move(out), {&x, &weight, &bias},
      [=](NodeT<T>& o) {
        NodeT<T>* nx = o.inputs[0].get();
        NodeT<T>* nw = o.inputs[1].get();
        NodeT<T>* nb = grad_target(o, 2);
        T* gx = nx->requires_grad ? nx->grad_buffer() : nullptr;
        T* gw = nw->requires_grad ? nw->grad_buffer() : nullptr;
        T* gb = nb ? nb->grad_buffer() : nullptr;
        for (std::size_t oy = 0; oy < Ho; ++oy) {
          for (std::size_t ox = 0; ox < Wo; ++ox) {
            const T* go = o.grad.data() + (oy * Wo + ox) * Cout;
            if (gb)
              for (std::size_t co = 0; co < Cout; ++co) gb[co] += go[co];
            for (std::size_t ky = 0; ky < K; ++ky) {
              const long iy = static_cast<long>(oy * stride + ky) - static_cast<long>(pad);
              if (iy < 0 || iy >= static_cast<long>(H)) continue;
              for (std::size_t kx = 0; kx < K; ++kx) {
                const long ix = static_cast<long>(ox * stride + kx) - static_cast<long>(pad);
                if (ix < 0 || ix >= static_cast<long>(W)) continue;
                const std::size_t xoff = (static_cast<std::size_t>(iy) * W + static_cast<std::size_t>(ix)) * Cin;
                for (std::size_t co = 0; co < Cout; ++co) {
                  const T gval = go[co];
                  if (gval == T(0)) continue;
                  const std::size_t woff = ((co * K + ky) * K + kx) * Cin;
                  if (gx)
                    for (std::size_t ci = 0; ci < Cin; ++ci) gx[xoff + ci] += gval * nw->data[woff + ci];
                  if (gw)
                    for (std::size_t ci = 0; ci < Cin; ++ci) gw[woff + ci] += gval * nx->data[xoff + ci];
                }
              }
            }
          }
        }
      });
}

template <typename T>
BasicTensor<T> sum(const BasicTensor<T>& x) {
  require_defined(x, "sum");
  double acc = 0;
  for (const T& v : x.data()) acc += v;
  FlopCounter::add(x.numel(), false);
  return make_result<T>("sum", {1}, {static_cast<T>(acc)}, {&x}, [](NodeT<T>& o) {
    if (auto* in = grad_target(o, 0)) {
      T* g = in->grad_buffer();
      for (std::size_t i = 0; i < in->data.size(); ++i) g[i] += o.grad[0];
    }
  });
}

template <typename T>
BasicTensor<T> mean(const BasicTensor<T>& x) {
  require_defined(x, "mean");
  if (x.numel() == 0) throw ShapeError("mean: empty tensor");
  double acc = 0;
  for (const T& v : x.data()) acc += v;
  const double n = static_cast<double>(x.numel());
  FlopCounter::add(x.numel(), false);
  return make_result<T>("mean", {1}, {static_cast<T>(acc / n)}, {&x}, [n](NodeT<T>& o) {
    if (auto* in = grad_target(o, 0)) {
      T* g = in->grad_buffer();
      const T s = static_cast<T>(o.grad[0] / n);
      for (std::size_t i = 0; i < in->data.size(); ++i) g[i] += s;
    }
  });
}

template <typename T>
BasicTensor<T> l1_mean(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_same_shape(a, b, "l1_mean");
  if (a.numel() == 0) throw ShapeError("l1_mean: empty tensor");
  double acc = 0;
  for (std::size_t i = 0; i < a.numel(); ++i) acc += std::abs(static_cast<double>(a.data()[i]) - b.data()[i]);
  const double n = static_cast<double>(a.numel());
  FlopCounter::add(2 * a.numel(), false);
  return make_result<T>("l1_mean", {1}, {static_cast<T>(acc / n)}, {&a, &b}, [n](NodeT<T>& o) {
    NodeT<T>* na = o.inputs[0].get();
    NodeT<T>* nb = o.inputs[1].get();
    const T s = static_cast<T>(o.grad[0] / n);
    T* ga = na->requires_grad ? na->grad_buffer() : nullptr;
    T* gb = nb->requires_grad ? nb->grad_buffer() : nullptr;
    for (std::size_t i = 0; i < na->data.size(); ++i) {
      const T diff = na->data[i] - nb->data[i];
      const T sign = diff > T(0) ? T(1) : (diff < T(0) ? T(-1) : T(0));
      if (ga) ga[i] += s * sign;
      if (gb) gb[i] -= s * sign;
    }
  });
}

template <typename T>
BasicTensor<T> reshape(const BasicTensor<T>& x, Shape shape) {
  require_defined(x, "reshape");
  if (tore::numel(shape) != x.numel()) {
    throw ShapeError("reshape: cannot view " + to_string(x.shape()) + " as " + to_string(shape));
  }
  std::vector<T> out(x.data().begin(), x.data().end());
  return make_result<T>("reshape", std::move(shape), std::move(out), {&x}, [](NodeT<T>& o) {
    if (auto* in = grad_target(o, 0)) {
      T* g = in->grad_buffer();
      for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i];
    }
  });
}

template <typename T>
BasicTensor<T> concat_rows(const std::vector<BasicTensor<T>>& parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  const std::size_t c = parts.front().dim(1);
  std::size_t rows = 0;
  for (const auto& p : parts) {
    require_rank(p, 2, "concat_rows");
    if (p.dim(1) != c) throw ShapeError("concat_rows: column mismatch " + to_string(p.shape()));
    rows += p.dim(0);
  }
  std::vector<T> out;
  out.reserve(rows * c);
  std::vector<std::size_t> offsets;
  for (const auto& p : parts) {
    offsets.push_back(out.size());
    out.insert(out.end(), p.data().begin(), p.data().end());
  }
  auto node = std::make_shared<NodeT<T>>();
  // Variadic inputs: build the result by hand rather than via make_result.
  node->shape = {rows, c};
  node->data = std::move(out);
  node->op = "concat_rows";
  if (grad_enabled() && std::any_of(parts.begin(), parts.end(), [](const auto& p) { return p.requires_grad(); })) {
    node->requires_grad = true;
    for (const auto& p : parts) node->inputs.push_back(p.node_ptr());
    node->backward = [offsets](NodeT<T>& o) {
      for (std::size_t s = 0; s < o.inputs.size(); ++s) {
        NodeT<T>* in = o.inputs[s].get();
        if (!in->requires_grad) continue;
        T* g = in->grad_buffer();
        for (std::size_t i = 0; i < in->data.size(); ++i) g[i] += o.grad[offsets[s] + i];
      }
    };
  }
  return BasicTensor<T>(std::move(node));
}

template <typename T>
BasicTensor<T> slice_rows(const BasicTensor<T>& x, std::size_t begin, std::size_t end) {
  require_rank(x, 2, "slice_rows");
  if (begin > end || end > x.dim(0)) throw ShapeError("slice_rows: range out of bounds for " + to_string(x.shape()));
  const std::size_t c = x.dim(1);
  std::vector<T> out(x.data().begin() + begin * c, x.data().begin() + end * c);
  return make_result<T>("slice_rows", {end - begin, c}, std::move(out), {&x}, [begin, c](NodeT<T>& o) {
    if (auto* in = grad_target(o, 0)) {
      T* g = in->grad_buffer() + begin * c;
      for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i];
    }
  });
}

template <typename T>
BasicTensor<T> slice_cols(const BasicTensor<T>& x, std::size_t begin, std::size_t end) {
  require_rank(x, 2, "slice_cols");
  if (begin > end || end > x.dim(1)) throw ShapeError("slice_cols: range out of bounds for " + to_string(x.shape()));
  const std::size_t r = x.dim(0), c = x.dim(1), w = end - begin;
  std::vector<T> out(r * w);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < w; ++j) out[i * w + j] = x.data()[i * c + begin + j];
  return make_result<T>("slice_cols", {r, w}, std::move(out), {&x}, [r, c, w, begin](NodeT<T>& o) {
    if (auto* in = grad_target(o, 0)) {
      T* g = in->grad_buffer();
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < w; ++j) g[i * c + begin + j] += o.grad[i * w + j];
    }
  });
}

template <typename T>
BasicTensor<T> where_rows(const std::vector<std::uint8_t>& keep, const BasicTensor<T>& x, const BasicTensor<T>& fill) {
  require_rank(x, 2, "where_rows");
  require_defined(fill, "where_rows");
  const std::size_t n = x.dim(0), c = x.dim(1);
  if (keep.size() != n) throw ShapeError("where_rows: keep vector length does not match rows");
  if (fill.numel() != c) throw ShapeError("where_rows: fill row has wrong width");
  std::vector<T> out(x.numel());
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] = keep[i] ? x.data()[i * c + j] : fill.data()[j];
  return make_result<T>("where_rows", x.shape(), std::move(out), {&x, &fill}, [keep, n, c](NodeT<T>& o) {
    NodeT<T>* nx = o.inputs[0].get();
    NodeT<T>* nf = o.inputs[1].get();
    T* gx = nx->requires_grad ? nx->grad_buffer() : nullptr;
    T* gf = nf->requires_grad ? nf->grad_buffer() : nullptr;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < c; ++j) {
        if (keep[i]) {
          if (gx) gx[i * c + j] += o.grad[i * c + j];
        } else if (gf) {
          gf[j] += o.grad[i * c + j];
        }
      }
    }
  });
}

template <typename T>
AttentionResult<T> attention(const BasicTensor<T>& q, const BasicTensor<T>& k, const BasicTensor<T>& v,
                             std::size_t heads, const AttnMask* mask) {
  require_rank(q, 2, "attention");
  require_rank(k, 2, "attention");
  require_rank(v, 2, "attention");
  const std::size_t Q = q.dim(0), K = k.dim(0), d = q.dim(1);
  if (k.dim(1) != d || v.dim(1) != d || v.dim(0) != K) {
    throw ShapeError("attention: q " + to_string(q.shape()) + ", k " + to_string(k.shape()) + ", v " + to_string(v.shape()));
  }
  if (heads == 0 || d % heads != 0) throw ShapeError("attention: model dim not divisible by heads");
  if (mask && (mask->queries() != Q || mask->keys() != K)) throw ShapeError("attention: mask shape mismatch");
  const std::size_t dh = d / heads;
  const T inv_scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));
  const T masked_logit = static_cast<T>(-1e9);

  std::vector<T> probs(heads * Q * K);
  std::vector<T> out(Q * d, T(0));
  const T* qd = q.data().data();
  const T* kd = k.data().data();
  const T* vd = v.data().data();
  for (std::size_t h = 0; h < heads; ++h) {
    const std::size_t off = h * dh;
    for (std::size_t i = 0; i < Q; ++i) {
      T* p = probs.data() + (h * Q + i) * K;
      T mx = -std::numeric_limits<T>::infinity();
      for (std::size_t j = 0; j < K; ++j) {
        T s;
        if (mask && !mask->allowed(i, j)) {
          s = masked_logit;
        } else {
          s = 0;
          for (std::size_t c = 0; c < dh; ++c) s += qd[i * d + off + c] * kd[j * d + off + c];
          s *= inv_scale;
        }
        p[j] = s;
        mx = std::max(mx, s);
      }
      double total = 0;
      for (std::size_t j = 0; j < K; ++j) {
        p[j] = std::exp(p[j] - mx);
        total += p[j];
      }
      const T inv = static_cast<T>(1.0 / total);
      for (std::size_t j = 0; j < K; ++j) {
        p[j] = (mask && !mask->allowed(i, j)) ? T(0) : p[j] * inv;
      }
      T* o = out.data() + i * d + off;
      for (std::size_t j = 0; j < K; ++j) {
        const T pj = p[j];
        if (pj == T(0)) continue;
        const T* vr = vd + j * d + off;
        for (std::size_t c = 0; c < dh; ++c) o[c] += pj * vr[c];
      }
    }
  }
  // Only allowed pairs are computed, so only they are counted.
  const std::size_t pairs = mask ? mask->allowed_count() : Q * K;
  FlopCounter::add(4ull * pairs * d, true);
  FlopCounter::add(3ull * heads * pairs, false);

  auto weights = BasicTensor<T>::from({heads, Q, K}, probs);
  auto result = make_result<T>(
      "attention", {Q, d}, std::move(out), {&q, &k, &v},
      [Q, K, d, dh, heads, inv_scale, probs = std::move(probs)](NodeT<T>& o) {
        NodeT<T>* nq = o.inputs[0].get();
        NodeT<T>* nk = o.inputs[1].get();
        NodeT<T>* nv = o.inputs[2].get();
        T* gq = nq->requires_grad ? nq->grad_buffer() : nullptr;
        T* gk = nk->requires_grad ? nk->grad_buffer() : nullptr;
        T* gv = nv->requires_grad ? nv->grad_buffer() : nullptr;
        std::vector<T> dp(K);
        for (std::size_t h = 0; h < heads; ++h) {
          const std::size_t off = h * dh;
          for (std::size_t i = 0; i < Q; ++i) {
            const T* p = probs.data() + (h * Q + i) * K;
            const T* go = o.grad.data() + i * d + off;
            double dot = 0;
            for (std::size_t j = 0; j < K; ++j) {
              T acc = 0;
              const T* vr = nv->data.data() + j * d + off;
              for (std::size_t c = 0; c < dh; ++c) acc += go[c] * vr[c];
              dp[j] = acc;
              dot += acc * p[j];
              if (gv && p[j] != T(0)) {
                T* gvr = gv + j * d + off;
                for (std::size_t c = 0; c < dh; ++c) gvr[c] += p[j] * go[c];
              }
            }
            for (std::size_t j = 0; j < K; ++j) {
              if (p[j] == T(0)) continue;
              const T ds = p[j] * (dp[j] - static_cast<T>(dot)) * inv_scale;
              if (gq) {
                const T* kr = nk->data.data() + j * d + off;
                T* gqr = gq + i * d + off;
                for (std::size_t c = 0; c < dh; ++c) gqr[c] += ds * kr[c];
              }
              if (gk) {
                const T* qr = nq->data.data() + i * d + off;
                T* gkr = gk + j * d + off;
                for (std::size_t c = 0; c < dh; ++c) gkr[c] += ds * qr[c];
              }
            }
          }
        }
      });
  return {std::move(result), std::move(weights)};
}

#define TORE_INSTANTIATE_OPS(T)                                                                                   \
  template BasicTensor<T> add(const BasicTensor<T>&, const BasicTensor<T>&);                                    \
  template BasicTensor<T> sub(const BasicTensor<T>&, const BasicTensor<T>&);                                    \
  template BasicTensor<T> mul(const BasicTensor<T>&, const BasicTensor<T>&);                                    \
  template BasicTensor<T> scale(const BasicTensor<T>&, double);                                                 \
  template BasicTensor<T> add_row(const BasicTensor<T>&, const BasicTensor<T>&);                                \
  template BasicTensor<T> mul_scalar(const BasicTensor<T>&, const BasicTensor<T>&);                             \
  template BasicTensor<T> matmul(const BasicTensor<T>&, const BasicTensor<T>&);                                 \
  template BasicTensor<T> linear(const BasicTensor<T>&, const BasicTensor<T>&, const BasicTensor<T>&);          \
  template BasicTensor<T> transpose(const BasicTensor<T>&);                                                     \
  template BasicTensor<T> softmax(const BasicTensor<T>&, Axis);                                                 \
  template BasicTensor<T> layer_norm(const BasicTensor<T>&, const BasicTensor<T>&, const BasicTensor<T>&,       \
                                     double);                                                                   \
  template BasicTensor<T> gelu(const BasicTensor<T>&);                                                          \
  template BasicTensor<T> softplus(const BasicTensor<T>&);                                                      \
  template BasicTensor<T> conv2d(const BasicTensor<T>&, const BasicTensor<T>&, const BasicTensor<T>&,           \
                                 std::size_t, std::size_t);                                                     \
  template BasicTensor<T> sum(const BasicTensor<T>&);                                                           \
  template BasicTensor<T> mean(const BasicTensor<T>&);                                                          \
  template BasicTensor<T> l1_mean(const BasicTensor<T>&, const BasicTensor<T>&);                                \
  template BasicTensor<T> reshape(const BasicTensor<T>&, Shape);                                                \
  template BasicTensor<T> concat_rows(const std::vector<BasicTensor<T>>&);                                      \
  template BasicTensor<T> slice_rows(const BasicTensor<T>&, std::size_t, std::size_t);                          \
  template BasicTensor<T> slice_cols(const BasicTensor<T>&, std::size_t, std::size_t);                          \
  template BasicTensor<T> where_rows(const std::vector<std::uint8_t>&, const BasicTensor<T>&,                   \
                                     const BasicTensor<T>&);                                                    \
  template AttentionResult<T> attention(const BasicTensor<T>&, const BasicTensor<T>&, const BasicTensor<T>&,    \
                                        std::size_t, const AttnMask*);

TORE_INSTANTIATE_OPS(float)
TORE_INSTANTIATE_OPS(double)

}  // namespace tore
