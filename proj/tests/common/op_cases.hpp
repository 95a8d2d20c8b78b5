#pragma once

// Random-shape gradient cases for every differentiable op.

#include "cross_check.hpp"

namespace tore::testing {

inline std::size_t draw(Rng& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

inline std::vector<GradCase> op_cases() {
  std::vector<GradCase> cases;
  auto two_same = [](Rng& rng) {
    const Shape s{draw(rng, 1, 6), draw(rng, 1, 7)};
    return std::vector<TensorD>{randn<double>(s, rng), randn<double>(s, rng)};
  };
  auto one_matrix = [](Rng& rng) {
    return std::vector<TensorD>{randn<double>({draw(rng, 1, 6), draw(rng, 2, 7)}, rng, 1.5)};
  };

  cases.push_back({"add", two_same, make_graph([]<typename T>(std::vector<BasicTensor<T>>& in) {
                     return readout(add(in[0], in[1]));
                   })});
  cases.push_back({"sub", two_same, make_graph([]<typename T>(std::vector<BasicTensor<T>>& in) {
                     return readout(sub(in[0], in[1]));
                   })});
  cases.push_back({"mul", two_same, make_graph([]<typename T>(std::vector<BasicTensor<T>>& in) {
                     return readout(mul(in[0], in[1]));
                   })});
  cases.push_back({"mul_self", one_matrix, make_graph([]<typename T>(std::vector<BasicTensor<T>>& in) {
                     return readout(mul(in[0], in[0]));
                   })});
  cases.push_back({"scale", one_matrix, make_graph([]<typename T>(std::vector<BasicTensor<T>>& in) {
                     return readout(scale(in[0], -2.5));
                   })});
  cases.push_back({"add_row",
                   [](Rng& rng) {
                     const std::size_t r = draw(rng, 1, 6), c = draw(rng, 1, 7);
                     return std::vector<TensorD>{randn<double>({r, c}, rng), randn<double>({c}, rng)};
                   },
                   make_graph([]<typename T>(std::vector<BasicTensor<T>>& in) {
                     return readout(add_row(in[0], in[1]));
                   })});
  cases.push_back({"mul_scalar",
                   [](Rng& rng) {
                     return std::vector<TensorD>{randn<double>({draw(rng, 1, 6), draw(rng, 1, 7)}, rng),
                                                 randn<double>({1}, rng)};
                   },
                   make_graph([]<typename T>(std::vector<BasicTensor<T>>& in) {
                     return readout(mul_scalar(in[0], in[1]));
                   })});
  cases.push_back({"matmul",
                   [](Rng& rng) {
                     const std::size_t m = draw(rng, 1, 6), k = draw(rng, 1, 6), n = draw(rng, 1, 6);
                     return std::vector<TensorD>{randn<double>({m, k}, rng), randn<double>({k, n}, rng)};
                   },
                   make_graph([]<typename T>(std::vector<BasicTensor<T>>& in) {
                     return readout(matmul(in[0], in[1]));
                   })});
  cases.push_back({"linear",
                   [](Rng& rng) {
                     const std::size_t m = draw(rng, 1, 6), k = draw(rng, 1, 6), n = draw(rng, 1, 6);
                     return std::vector<TensorD>{randn<double>({m, k}, rng), randn<double>({k, n}, rng),
                                                 randn<double>({n}, rng)};
                   },
                   make_graph([]<typename T>(std::vector<BasicTensor<T>>& in) {
                     return readout(linear(in[0], in[1], in[2]));
                   })});
  cases.push_back({"transpose", one_matrix, make_graph([]<typename T>(std::vector<BasicTensor<T>>& in) {
                     return readout(transpose(in[0]));
                   })});
  cases.push_back({"softmax_rows", one_matrix, make_graph([]<typename T>(std::vector<BasicTensor<T>>& in) {
                     return readout(softmax(in[0], Axis::Rows));
                   })});
  cases.push_back({"softmax_cols", one_matrix, make_graph([]<typename T>(std::vector<BasicTensor<T>>& in) {
                     return readout(softmax(in[0], Axis::Cols));
                   })});
  cases.push_back({"layer_norm_affine",
                   [](Rng& rng) {
                     const std::size_t r = draw(rng, 1, 5), d = draw(rng, 2, 8);
                     return std::vector<TensorD>{randn<double>({r, d}, rng), randn<double>({d}, rng),
                                                 randn<double>({d}, rng)};
                   },
                   make_graph([]<typename T>(std::vector<BasicTensor<T>>& in) {
                     return readout(layer_norm(in[0], in[1], in[2]));
                   })});
  cases.push_back({"layer_norm_plain", one_matrix, make_graph([]<typename T>(std::vector<BasicTensor<T>>& in) {
                     return readout(layer_norm(in[0], BasicTensor<T>(), BasicTensor<T>()));
                   })});
  cases.push_back({"gelu", one_matrix, make_graph([]<typename T>(std::vector<BasicTensor<T>>& in) {
                     return readout(gelu(in[0]));
                   })});
  cases.push_back({"softplus", one_matrix, make_graph([]<typename T>(std::vector<BasicTensor<T>>& in) {
                     return readout(softplus(in[0]));
                   })});
  cases.push_back({"conv2d",
                   [](Rng& rng) {
                     const std::size_t h = draw(rng, 3, 7), w = draw(rng, 3, 7), ci = draw(rng, 1, 3),
                                       co = draw(rng, 1, 3);
                     return std::vector<TensorD>{randn<double>({h, w, ci}, rng), randn<double>({co, 3, 3, ci}, rng),
                                                 randn<double>({co}, rng)};
                   },
                   make_graph([]<typename T>(std::vector<BasicTensor<T>>& in) {
                     return readout(conv2d(in[0], in[1], in[2], in[0].dim(0) % 2 + 1, 1));
                   })});
  cases.push_back({"sum", one_matrix, make_graph([]<typename T>(std::vector<BasicTensor<T>>& in) {
                     return scale(sum(in[0]), 0.7);
                   })});
  cases.push_back({"mean", one_matrix, make_graph([]<typename T>(std::vector<BasicTensor<T>>& in) {
                     return mean(mul(in[0], in[0]));
                   })});
  cases.push_back({"l1_mean",
                   [](Rng& rng) {
                     // Keep every difference away from the kink at zero.
                     const Shape s{draw(rng, 1, 6), draw(rng, 1, 7)};
                     auto a = randn<double>(s, rng);
                     auto off = randu<double>(s, rng, 0.2, 1.0);
                     std::bernoulli_distribution flip(0.5);
                     std::vector<double> b(a.numel());
                     for (std::size_t i = 0; i < b.size(); ++i) b[i] = a.at(i) + (flip(rng) ? 1 : -1) * off.at(i);
                     return std::vector<TensorD>{a, TensorD::from(s, b)};
                   },
                   make_graph([]<typename T>(std::vector<BasicTensor<T>>& in) {
                     return l1_mean(in[0], in[1]);
                   })});
  cases.push_back({"reshape", one_matrix, make_graph([]<typename T>(std::vector<BasicTensor<T>>& in) {
                     return readout(reshape(in[0], {in[0].numel(), 1}));
                   })});
  cases.push_back({"concat_rows",
                   [](Rng& rng) {
                     const std::size_t c = draw(rng, 1, 5);
                     return std::vector<TensorD>{randn<double>({draw(rng, 1, 4), c}, rng),
                                                 randn<double>({draw(rng, 1, 4), c}, rng)};
                   },
                   make_graph([]<typename T>(std::vector<BasicTensor<T>>& in) {
                     return readout(concat_rows<T>({in[0], in[1], in[0]}));
                   })});
  cases.push_back({"slice_rows", one_matrix, make_graph([]<typename T>(std::vector<BasicTensor<T>>& in) {
                     return readout(slice_rows(in[0], in[0].dim(0) / 2, in[0].dim(0)));
                   })});
  cases.push_back({"slice_cols", one_matrix, make_graph([]<typename T>(std::vector<BasicTensor<T>>& in) {
                     return readout(slice_cols(in[0], 1, in[0].dim(1)));
                   })});
  cases.push_back({"where_rows",
                   [](Rng& rng) {
                     const std::size_t r = draw(rng, 2, 6), c = draw(rng, 1, 5);
                     return std::vector<TensorD>{randn<double>({r, c}, rng), randn<double>({c}, rng)};
                   },
                   make_graph([]<typename T>(std::vector<BasicTensor<T>>& in) {
                     std::vector<std::uint8_t> keep(in[0].dim(0));
                     for (std::size_t i = 0; i < keep.size(); ++i) keep[i] = i % 2;
                     return readout(where_rows(keep, in[0], in[1]));
                   })});
  cases.push_back({"attention",
                   [](Rng& rng) {
                     const std::size_t q = draw(rng, 1, 5), k = draw(rng, 1, 5), d = 2 * draw(rng, 1, 3);
                     return std::vector<TensorD>{randn<double>({q, d}, rng), randn<double>({k, d}, rng),
                                                 randn<double>({k, d}, rng)};
                   },
                   make_graph([]<typename T>(std::vector<BasicTensor<T>>& in) {
                     return readout(attention(in[0], in[1], in[2], 2).out);
                   })});
  cases.push_back({"attention_masked",
                   [](Rng& rng) {
                     const std::size_t q = draw(rng, 2, 5), k = draw(rng, 2, 5), d = 2 * draw(rng, 1, 3);
                     return std::vector<TensorD>{randn<double>({q, d}, rng), randn<double>({k, d}, rng),
                                                 randn<double>({k, d}, rng)};
                   },
                   make_graph([]<typename T>(std::vector<BasicTensor<T>>& in) {
                     const std::size_t q = in[0].dim(0), k = in[1].dim(0);
                     std::vector<std::uint8_t> allow(q * k);
                     // Banded mask, every row keeps its own column modulo k.
                     for (std::size_t i = 0; i < q; ++i)
                       for (std::size_t j = 0; j < k; ++j) allow[i * k + j] = (i % k == j) || ((i + j) % 3 == 0);
                     AttnMask mask(q, k, allow);
                     return readout(attention(in[0], in[1], in[2], in[0].dim(1) / 2, &mask).out);
                   })});
  cases.push_back({"chain_matmul_softmax_layernorm",
                   [](Rng& rng) {
                     const std::size_t n = draw(rng, 2, 5), d = draw(rng, 2, 6);
                     return std::vector<TensorD>{randn<double>({n, d}, rng), randn<double>({d, d}, rng),
                                                 randn<double>({d}, rng), randn<double>({d}, rng),
                                                 randn<double>({d, d}, rng)};
                   },
                   make_graph([]<typename T>(std::vector<BasicTensor<T>>& in) {
                     auto h = softmax(matmul(in[0], in[1]), Axis::Cols);
                     h = layer_norm(h, in[2], in[3]);
                     return readout(matmul(h, in[4]));
                   })});
  return cases;
}

}  // namespace tore::testing
