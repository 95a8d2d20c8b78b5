#include <CLI11.hpp>

#include <fstream>
#include <iostream>

#include "tore/flopcount/flops.hpp"
#include "tore/harness/train.hpp"

using namespace tore;

namespace {

std::ostream& open_or_stdout(const std::string& path, std::ofstream& file) {
  if (path.empty() || path == "-") return std::cout;
  const std::filesystem::path p(path);
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  file.open(p);
  if (!file) throw std::runtime_error("cannot write " + path);
  return file;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Token-reduced human mesh recovery: data, training, evaluation, benchmarks and flop counts"};
  app.require_subcommand(1);

  auto* synth = app.add_subcommand("synth", "Generate a synthetic dataset");
  std::size_t n = 64;
  std::uint64_t seed = 0;
  std::string out;
  double noise = harness::SynthConfig{}.noise_sigma;
  synth->add_option("--n", n, "Number of samples")->check(CLI::PositiveNumber);
  synth->add_option("--seed", seed, "Generator seed");
  synth->add_option("--noise", noise, "Background noise std");
  synth->add_option("--out", out, "Output dataset file")->required();

  auto* train = app.add_subcommand("train", "Train a model from a JSON run config");
  std::string config, data;
  std::size_t steps = 0;
  train->add_option("--config", config, "Run config JSON")->required()->check(CLI::ExistingFile);
  train->add_option("--out", out, "Output directory (overrides the config)");
  train->add_option("--data", data, "Dataset file (overrides the config)");
  train->add_option("--steps", steps, "Step count (overrides the config)");

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint");
  std::string ckpt, attention_csv, cluster_csv;
  bool gt_pred = false;
  eval->add_option("--ckpt", ckpt, "Checkpoint file")->required()->check(CLI::ExistingFile);
  eval->add_option("--data", data, "Dataset file")->required()->check(CLI::ExistingFile);
  eval->add_option("--out", out, "Metrics CSV")->required();
  eval->add_flag("--gt-as-prediction", gt_pred, "Score ground truth against itself (debug)");
  eval->add_option("--attention-csv", attention_csv, "Write vertex-joint attention of sample 0");
  eval->add_option("--cluster-csv", cluster_csv, "Write pruner cluster maps of sample 0");

  auto* bench = app.add_subcommand("bench", "Transformer-only throughput of two configs");
  std::string config_a, config_b;
  std::size_t batch = 8, reps = 20;
  bench->add_option("--config-a", config_a, "Baseline: preset:NAME or JSON file")->required();
  bench->add_option("--config-b", config_b, "Variant: preset:NAME or JSON file")->required();
  bench->add_option("--batch", batch, "Images per repetition")->check(CLI::PositiveNumber);
  bench->add_option("--reps", reps, "Timed repetitions")->check(CLI::PositiveNumber);
  bench->add_option("--out", out, "CSV file (default stdout)");

  auto* flops = app.add_subcommand("flops", "Analytical transformer flops of a paper-scale preset");
  std::string preset, base;
  flops->add_option("--preset", preset, "Preset name")->required();
  flops->add_option("--base", base, "Baseline preset for the reduction column");
  flops->add_option("--out", out, "CSV file (default stdout)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*synth) {
      harness::SynthConfig cfg;
      cfg.count = n;
      cfg.seed = seed;
      cfg.noise_sigma = noise;
      harness::save_dataset(out, harness::synth_dataset(cfg));
      std::cout << "wrote " << n << " samples to " << out << "\n";
    } else if (*train) {
      auto cfg = harness::load_run_config(config);
      if (!out.empty()) cfg.out = out;
      if (!data.empty()) cfg.data = data;
      if (steps > 0) cfg.steps = steps;
      if (cfg.out.empty()) throw std::invalid_argument("train: no output directory (set \"out\" or --out)");
      const auto r = harness::train(cfg);
      std::cout << "steps " << r.steps << " in " << r.seconds << " s\n"
                << "dataset loss " << r.initial_loss << " -> " << r.final_loss << "\n"
                << "checkpoint " << r.checkpoint.string() << "\nmetrics " << r.metrics_csv.string() << "\n";
    } else if (*eval) {
      const auto model = harness::load_checkpoint(ckpt);
      const auto dataset = harness::load_dataset(data);
      const auto r = harness::evaluate(*model, dataset, gt_pred);
      harness::write_eval_csv(out, r);
      std::cout << "MPJPE " << 1000 * r.mean.mpjpe << " PAMPJPE " << 1000 * r.mean.pampjpe << " MPVE "
                << 1000 * r.mean.mpve << " (x1000)\n";
      if (model->config().pruner_active())
        std::cout << "cluster mass body " << r.body_mass << " background " << r.background_mass << "\n";
      if (!attention_csv.empty() || !cluster_csv.empty()) {
        NoGradGuard guard;
        const auto o = model->forward(harness::make_targets(dataset).renders.front(), gtr::Mode::Eval);
        if (!attention_csv.empty()) {
          if (!o.attn_vj.defined()) throw std::invalid_argument("model has no vertex-joint attention (nsr head only)");
          harness::write_attention_csv(attention_csv, o.attn_vj);
        }
        if (!cluster_csv.empty()) {
          if (!o.pruner) throw std::invalid_argument("model has no token pruner");
          harness::write_cluster_csv(cluster_csv, *o.pruner);
        }
      }
    } else if (*bench) {
      const auto a = harness::resolve_model_config(config_a), b = harness::resolve_model_config(config_b);
      const auto r = harness::bench(a, b, batch, reps);
      harness::write_bench_csv(out.empty() ? "/dev/stdout" : out, config_a, config_b, batch, reps, r);
      if (!out.empty()) std::cout << "speedup " << r.speedup << "\n";
    } else if (*flops) {
      const auto report = flopcount::model_flops(preset);
      std::ofstream file;
      auto& os = open_or_stdout(out, file);
      if (base.empty()) {
        flopcount::write_flops_csv(os, report, nullptr);
      } else {
        const auto b = flopcount::model_flops(base);
        flopcount::write_flops_csv(os, report, &b);
      }
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
