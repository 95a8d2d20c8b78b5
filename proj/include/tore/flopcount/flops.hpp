#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include "tore/gtr/model.hpp"

namespace tore::flopcount {

/// Floating-point operation counts (two per multiply-accumulate).
struct Components {
  double qkv = 0;           // query/key/value projections
  double scores = 0;        // Q K^T
  double weighted_sum = 0;  // weights V
  double out_proj = 0;
  double feed_forward = 0;
  double norms = 0;         // 5 per normalized element
  double softmax = 0;       // 3 per attention weight
  double projections = 0;   // linears outside the layers (input, stage, heads)
  double elementwise = 0;   // biases, residual adds, activations

  double total() const;
  Components& operator+=(const Components& o);
  Components operator*(double k) const;
};

/// Closed-form per-layer count: projections 2(Mq+2Mk)d^2, scores and weighted
/// sum 2 Mq Mk d each, output 2 Mq d^2, feed-forward 4 Mq d ff. `heads` does
/// not change the count.
double attention_flops(double mq, double mk, double d, double ff, double heads);

struct LayerSpec {
  enum class Kind { Encoder, Decoder };
  Kind kind = Kind::Encoder;
  std::size_t queries = 0;
  std::size_t memory = 0;  // decoder cross-attention keys
  std::size_t d = 0, ff = 0, heads = 1;
  std::size_t self_pairs = 0;  // allowed self-attention pairs, 0 = dense
};

/// Pre-norm layer cost, matching what the numerics module executes.
Components layer_cost(const LayerSpec& l);

struct BlockSpec {
  std::string name;
  LayerSpec layer;
  std::size_t layers = 1;
  bool final_norm = true;
};

struct DenseSpec {
  std::string name;
  std::size_t rows = 0, in = 0, out = 0;
  bool bias = true;
};

/// Architecture description in token counts and dims.
struct ArchSpec {
  std::string name;
  std::vector<BlockSpec> blocks;
  std::vector<DenseSpec> linears;
  double elementwise = 0;  // extra element ops (positional adds, offsets)
  double excluded = 0;     // reported but outside the total (token pruner)
};

struct BlockReport {
  std::string name;
  std::size_t layers = 0;
  Components per_layer, total;
};

struct FlopsReport {
  std::string name;
  std::vector<BlockReport> blocks;
  Components components;  // model-wide sum over blocks and linears
  double excluded = 0;
  double total() const { return components.total(); }
};

FlopsReport model_flops(const ArchSpec& arch);
/// Paper-scale presets: metro_full, metro_gtr, fastmetro_full, fastmetro_gtr,
/// fastmetro_gtr_itpNN (NN = pruning percent), fastmetro_small_full,
/// fastmetro_small_gtr, nsr. Throws std::invalid_argument on unknown names.
ArchSpec paper_preset(const std::string& name);
FlopsReport model_flops(const std::string& preset);
std::vector<std::string> preset_names();

/// Transformer plus shape-regressor cost of a desk model, in the same scopes
/// the executed counter reports (ExecutedFlops::transformer + shape).
ArchSpec describe(const gtr::ModelConfig& cfg);

struct Reduction {
  double percent = 0;  // 100 (1 - variant / base)
  double base_total = 0, variant_total = 0;
};
Reduction reduction_report(const FlopsReport& base, const FlopsReport& variant);

/// Columns: preset, component, flops, reduction_vs_base. One row per
/// component, then total; reduction is empty without a base.
void write_flops_csv(std::ostream& out, const FlopsReport& r, const FlopsReport* base);

}  // namespace tore::flopcount
