#pragma once

#include <filesystem>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "tore/harness/config.hpp"
#include "tore/harness/dataset.hpp"

namespace tore::harness {

/// AdamW with decoupled weight decay and global gradient-norm clipping.
class AdamW {
 public:
  AdamW(ParamStore<float>& params, const OptimizerConfig& cfg);
  /// Clips, updates and zeroes the gradients. Returns the pre-clip norm.
  double step();

 private:
  ParamStore<float>& params_;
  OptimizerConfig cfg_;
  std::vector<std::vector<float>> m_, v_;
  std::uint64_t t_ = 0;
};

/// Raised when the loss or the gradient stops being finite.
class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Per-sample ground truth as tensors, in model precision.
struct TargetSet {
  std::vector<Tensor> renders;
  std::vector<losses::Target<float>> targets;
};
TargetSet make_targets(const Dataset& d);

struct TrainResult {
  std::unique_ptr<gtr::Model<float>> model;
  double initial_loss = 0;  // eval-mode mean total over the dataset before training
  double final_loss = 0;    // same after training
  double first_step_loss = 0, last_step_loss = 0;
  std::size_t steps = 0;
  double seconds = 0;
  std::filesystem::path checkpoint, metrics_csv;
};

/// Trains on `data` and writes metrics.csv, config.json and model.tore to
/// cfg.out (skipped when cfg.out is empty). Throws TrainingError on a
/// non-finite loss after dumping the offending step to nan_dump.json.
TrainResult train(const RunConfig& cfg, const Dataset& data);
TrainResult train(const RunConfig& cfg);

/// Mean eval-mode total loss over a dataset.
double dataset_loss(const gtr::Model<float>& model, const Dataset& data, const losses::LossWeights& w);

void save_checkpoint(const std::filesystem::path& path, const gtr::Model<float>& model, std::uint64_t seed);
std::unique_ptr<gtr::Model<float>> load_checkpoint(const std::filesystem::path& path);

struct SampleMetrics {
  double mpjpe = 0, pampjpe = 0, mpve = 0;  // model units
};

struct EvalResult {
  std::vector<SampleMetrics> rows;
  SampleMetrics mean;
  /// Mean ITP cluster mass on body / background cells (gt camera), when the
  /// pruner is active.
  double body_mass = 0, background_mass = 0;
};

/// Eval-mode metrics per sample. With gt_as_prediction the model is bypassed
/// and the ground truth is scored against itself.
EvalResult evaluate(const gtr::Model<float>& model, const Dataset& data, bool gt_as_prediction = false);
/// One row per sample plus a MEAN row; metrics scaled by 1000.
void write_eval_csv(const std::filesystem::path& path, const EvalResult& r);

struct BenchResult {
  double images_per_s_a = 0, images_per_s_b = 0, speedup = 0;
  std::size_t queries_a = 0, queries_b = 0, image_tokens_a = 0, image_tokens_b = 0;
};

/// Median images/s over `reps` timed repetitions of transformer-only forward
/// passes (backbone excluded, eval mode, no graph) on a batch of random
/// feature maps; two warmup repetitions are discarded.
BenchResult bench(const gtr::ModelConfig& a, const gtr::ModelConfig& b, std::size_t batch, std::size_t reps);
void write_bench_csv(const std::filesystem::path& path, const std::string& label_a, const std::string& label_b,
                     std::size_t batch, std::size_t reps, const BenchResult& r);

/// Vertex-to-joint attention averaged over heads: one row per coarse vertex.
void write_attention_csv(const std::filesystem::path& path, const Tensor& attn_vj);
/// Cluster score maps: one row per (cluster, y, x).
void write_cluster_csv(const std::filesystem::path& path, const itp::PrunerOutput<float>& p);

}  // namespace tore::harness
