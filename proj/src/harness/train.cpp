#include "tore/harness/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>

#include "tore/harness/container.hpp"
#include "tore/mesh/metrics.hpp"

namespace tore::harness {

AdamW::AdamW(ParamStore<float>& params, const OptimizerConfig& cfg) : params_(params), cfg_(cfg) {
  for (const auto& t : params_.tensors()) {
    m_.emplace_back(t.numel(), 0.f);
    v_.emplace_back(t.numel(), 0.f);
  }
}

double AdamW::step() {
  auto& tensors = params_.tensors();
  double sq = 0;
  for (const auto& t : tensors) {
    if (!t.has_grad()) continue;
    for (float g : t.grad()) sq += static_cast<double>(g) * g;
  }
  const double norm = std::sqrt(sq);
  if (!std::isfinite(norm)) throw TrainingError("gradient norm is not finite");
  const double clip = norm > cfg_.grad_clip_norm ? cfg_.grad_clip_norm / norm : 1.0;
  ++t_;
  const double bc1 = 1 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t k = 0; k < tensors.size(); ++k) {
    auto& t = tensors[k];
    auto w = t.mutable_data();
    const auto& grad = t.node()->grad;
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double g = grad.empty() ? 0.0 : grad[i] * clip;
      m_[k][i] = static_cast<float>(cfg_.beta1 * m_[k][i] + (1 - cfg_.beta1) * g);
      v_[k][i] = static_cast<float>(cfg_.beta2 * v_[k][i] + (1 - cfg_.beta2) * g * g);
      const double update = (m_[k][i] / bc1) / (std::sqrt(v_[k][i] / bc2) + cfg_.eps);
      w[i] = static_cast<float>(w[i] - cfg_.lr * (update + cfg_.weight_decay * w[i]));
    }
  }
  params_.zero_grad();
  return norm;
}

namespace {

template <typename M>
Tensor tensor_of(const M& m) {
  std::vector<float> v;
  v.reserve(static_cast<std::size_t>(m.size()));
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) v.push_back(static_cast<float>(m(r, c)));
  return Tensor::from({static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())}, std::move(v));
}

template <typename T>
Eigen::MatrixX3d matrix_of(const BasicTensor<T>& t) {
  Eigen::MatrixX3d m(static_cast<Eigen::Index>(t.dim(0)), 3);
  for (std::size_t r = 0; r < t.dim(0); ++r)
    for (std::size_t c = 0; c < 3; ++c) m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = t.at(r * 3 + c);
  return m;
}

void check_compatible(const gtr::ModelConfig& m, const Dataset& d) {
  if (m.image_size != d.config.image_size || m.template_seed != d.config.template_seed ||
      m.template_counts.coarse_vertices != d.config.template_counts.coarse_vertices ||
      m.template_counts.joints != d.config.template_counts.joints) {
    throw std::invalid_argument("model config does not match the dataset (image size or template)");
  }
}

struct SampleLoss {
  losses::LossTerms<float> terms;
};

losses::LossTerms<float> sample_loss(const gtr::Model<float>& model, const gtr::ModelOutput<float>& out,
                                     const Sample& s, const losses::Target<float>& target,
                                     const losses::LossWeights& w) {
  const auto& cfg = model.config();
  losses::Prediction<float> pred{out.joints3d, out.regressed_joints3d, out.verts, out.camera,
                                 out.pruner ? out.pruner->mapping : Tensor()};
  std::optional<itp::IndicatorGrid> body;
  if (out.pruner) {
    const auto cam = out.camera.data();
    body = losses::body_indicator(s.verts_high, cam[0], cam[1], cam[2], cfg.grid, cfg.grid,
                                  static_cast<double>(cfg.image_size));
  }
  return losses::total_loss(pred, target, w, body ? &*body : nullptr);
}

}  // namespace

TargetSet make_targets(const Dataset& d) {
  TargetSet ts;
  for (const auto& s : d.samples) {
    ts.renders.push_back(tensor_of(s.render));
    ts.targets.push_back({tensor_of(s.joints3d), tensor_of(s.joints2d),
                          {tensor_of(s.verts_low), tensor_of(s.verts_mid), tensor_of(s.verts_high)}});
  }
  return ts;
}

double dataset_loss(const gtr::Model<float>& model, const Dataset& data, const losses::LossWeights& w) {
  NoGradGuard guard;
  const auto ts = make_targets(data);
  double total = 0;
  for (std::size_t i = 0; i < data.samples.size(); ++i) {
    const auto out = model.forward(ts.renders[i], gtr::Mode::Eval);
    total += sample_loss(model, out, data.samples[i], ts.targets[i], w).total.item();
  }
  return total / static_cast<double>(data.samples.size());
}

TrainResult train(const RunConfig& cfg) {
  if (cfg.data.empty()) throw std::invalid_argument("train: config has no data path");
  return train(cfg, load_dataset(cfg.data));
}

TrainResult train(const RunConfig& cfg, const Dataset& data) {
  cfg.validate();
  check_compatible(cfg.model, data);
  TrainResult res;
  res.model = std::make_unique<gtr::Model<float>>(cfg.model, cfg.seed);
  auto& model = *res.model;
  AdamW opt(model.params(), cfg.optimizer);
  const auto ts = make_targets(data);
  const std::size_t n = data.samples.size();
  const std::size_t batch = std::min(cfg.batch, n);
  const std::size_t per_epoch = (n + batch - 1) / batch;
  const std::size_t total_steps = cfg.steps > 0 ? cfg.steps : cfg.epochs * per_epoch;

  std::ofstream csv;
  const std::filesystem::path out_dir = cfg.out;
  if (!cfg.out.empty()) {
    std::filesystem::create_directories(out_dir);
    res.metrics_csv = out_dir / "metrics.csv";
    csv.open(res.metrics_csv);
    csv << "step,epoch,loss_joints3d,loss_reg_joints3d,loss_reg_joints2d,loss_verts3d,loss_pruning,total,grad_norm,"
           "wall_time_s\n";
    csv << std::setprecision(9);
    std::ofstream(out_dir / "config.json") << to_json(cfg).dump(2) << "\n";
  }

  auto abort = [&](std::size_t step, std::size_t epoch, const std::vector<std::size_t>& idx, double total,
                   const std::string& what) {
    if (!cfg.out.empty()) {
      nlohmann::json dump{{"step", step}, {"epoch", epoch}, {"batch_indices", idx}, {"error", what},
                          {"last_total", total}};
      std::ofstream(out_dir / "nan_dump.json") << dump.dump(2) << "\n";
    }
    throw TrainingError("training aborted at step " + std::to_string(step) + ": " + what);
  };
  try {
    res.initial_loss = dataset_loss(model, data, cfg.loss);
  } catch (const NumericError& e) {
    abort(0, 0, {}, 0, std::string("initial evaluation: ") + e.what());
  }
  Rng mask_rng(derive_seed(cfg.seed, 1));
  std::vector<std::size_t> order(n);
  const auto start = std::chrono::steady_clock::now();
  for (std::size_t step = 0; step < total_steps; ++step) {
    const std::size_t epoch = step / per_epoch, slot = step % per_epoch;
    if (slot == 0) {
      std::iota(order.begin(), order.end(), std::size_t{0});
      Rng shuffle_rng(derive_seed(cfg.seed, 1000 + epoch));
      std::shuffle(order.begin(), order.end(), shuffle_rng);
    }
    std::vector<std::size_t> idx;
    for (std::size_t k = 0; k < batch; ++k) idx.push_back(order[(slot * batch + k) % n]);

    double terms[5] = {0, 0, 0, 0, 0};
    double total = 0, grad_norm = 0;
    try {
      std::vector<Tensor> totals;
      for (auto i : idx) {
        const auto out = model.forward(ts.renders[i], gtr::Mode::Train, &mask_rng);
        const auto l = sample_loss(model, out, data.samples[i], ts.targets[i], cfg.loss);
        totals.push_back(l.total);
        terms[0] += l.joints3d;
        terms[1] += l.regressed_joints3d;
        terms[2] += l.regressed_joints2d;
        terms[3] += l.verts3d;
        terms[4] += l.pruning;
      }
      auto acc = totals.front();
      for (std::size_t k = 1; k < totals.size(); ++k) acc = add(acc, totals[k]);
      const auto loss = scale(acc, 1.0 / static_cast<double>(idx.size()));
      total = loss.item();
      if (!std::isfinite(total)) throw TrainingError("loss is not finite");
      backward(loss);
      grad_norm = opt.step();
    } catch (const NumericError& e) {
      abort(step, epoch, idx, total, e.what());
    } catch (const TrainingError& e) {
      abort(step, epoch, idx, total, e.what());
    }
    if (step == 0) res.first_step_loss = total;
    res.last_step_loss = total;
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (csv.is_open()) {
      const double b = static_cast<double>(idx.size());
      csv << step << ',' << epoch;
      for (double t : terms) csv << ',' << t / b;
      csv << ',' << total << ',' << grad_norm << ',' << secs << '\n';
    }
  }
  res.steps = total_steps;
  res.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  res.final_loss = dataset_loss(model, data, cfg.loss);
  if (!cfg.out.empty()) {
    res.checkpoint = out_dir / "model.tore";
    save_checkpoint(res.checkpoint, model, cfg.seed);
  }
  return res;
}

void save_checkpoint(const std::filesystem::path& path, const gtr::Model<float>& model, std::uint64_t seed) {
  Container c;
  c.meta["kind"] = "checkpoint";
  c.meta["model"] = to_json(model.config());
  c.meta["seed"] = seed;
  const auto& p = model.params();
  for (std::size_t k = 0; k < p.size(); ++k) {
    const auto& t = p.tensors()[k];
    c.add(p.names()[k], t.shape(), std::vector<float>(t.data().begin(), t.data().end()));
  }
  write_container(path, c);
}

std::unique_ptr<gtr::Model<float>> load_checkpoint(const std::filesystem::path& path) {
  const auto c = read_container(path);
  if (c.meta.value("kind", "") != "checkpoint") throw std::runtime_error(path.string() + " is not a checkpoint");
  auto model = std::make_unique<gtr::Model<float>>(model_config_from_json(c.meta.at("model")),
                                                   c.meta.at("seed").get<std::uint64_t>());
  auto& p = model->params();
  if (c.arrays.size() != p.size()) throw std::runtime_error("checkpoint parameter count does not match the config");
  for (std::size_t k = 0; k < p.size(); ++k) {
    const auto& a = c.get(p.names()[k]);
    auto& t = p.tensors()[k];
    if (a.shape != t.shape()) throw std::runtime_error("checkpoint shape mismatch for " + a.name);
    std::copy(a.data.begin(), a.data.end(), t.mutable_data().begin());
  }
  return model;
}

EvalResult evaluate(const gtr::Model<float>& model, const Dataset& data, bool gt_as_prediction) {
  const auto& cfg = model.config();
  check_compatible(cfg, data);
  NoGradGuard guard;
  EvalResult r;
  std::size_t mass_samples = 0;
  for (const auto& s : data.samples) {
    Eigen::MatrixX3d joints = s.joints3d, verts = s.verts_high;
    if (!gt_as_prediction) {
      const auto out = model.forward(tensor_of(s.render), gtr::Mode::Eval);
      joints = matrix_of(out.regressed_joints3d);
      verts = matrix_of(out.verts.high);
      if (out.pruner) {
        const auto body = losses::body_indicator(s.verts_high, s.camera(0), s.camera(1), s.camera(2), cfg.grid,
                                                 cfg.grid, static_cast<double>(cfg.image_size));
        const auto [on, off] = itp::cluster_mass(body, out.pruner->mapping.data(), out.pruner->tokens);
        r.body_mass += on;
        r.background_mass += off;
        ++mass_samples;
      }
    }
    const auto m = mesh::compute_metrics(joints, verts, s.joints3d, s.verts_high);
    r.rows.push_back({m.mpjpe, m.pampjpe, m.mpve});
  }
  const double n = static_cast<double>(r.rows.size());
  for (const auto& row : r.rows) {
    r.mean.mpjpe += row.mpjpe / n;
    r.mean.pampjpe += row.pampjpe / n;
    r.mean.mpve += row.mpve / n;
  }
  if (mass_samples) {
    r.body_mass /= static_cast<double>(mass_samples);
    r.background_mass /= static_cast<double>(mass_samples);
  }
  return r;
}

void write_eval_csv(const std::filesystem::path& path, const EvalResult& r) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "sample,mpjpe,pampjpe,mpve\n" << std::setprecision(9);
  for (std::size_t i = 0; i < r.rows.size(); ++i) {
    out << i << ',' << 1000 * r.rows[i].mpjpe << ',' << 1000 * r.rows[i].pampjpe << ',' << 1000 * r.rows[i].mpve << '\n';
  }
  out << "MEAN," << 1000 * r.mean.mpjpe << ',' << 1000 * r.mean.pampjpe << ',' << 1000 * r.mean.mpve << '\n';
}

namespace {

double images_per_second(const gtr::Model<float>& model, const std::vector<Tensor>& features, std::size_t reps) {
  NoGradGuard guard;
  std::vector<double> rates;
  for (std::size_t r = 0; r < reps + 2; ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    for (const auto& f : features) model.forward_features(f, gtr::Mode::Eval);
    const double dt = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (r >= 2) rates.push_back(static_cast<double>(features.size()) / dt);
  }
  std::sort(rates.begin(), rates.end());
  const std::size_t m = rates.size();
  return m % 2 ? rates[m / 2] : 0.5 * (rates[m / 2 - 1] + rates[m / 2]);
}

}  // namespace

BenchResult bench(const gtr::ModelConfig& a, const gtr::ModelConfig& b, std::size_t batch, std::size_t reps) {
  if (batch == 0 || reps == 0) throw std::invalid_argument("bench: batch and reps must be positive");
  auto run = [&](const gtr::ModelConfig& cfg, std::size_t& queries, std::size_t& image_tokens) {
    gtr::Model<float> model(cfg, 0);
    Rng rng(derive_seed(17, cfg.backbone_dim));
    std::vector<Tensor> features;
    for (std::size_t i = 0; i < batch; ++i) features.push_back(randn<float>({cfg.grid, cfg.grid, cfg.backbone_dim}, rng));
    {
      NoGradGuard guard;
      queries = model.forward_features(features.front(), gtr::Mode::Eval).transformer_queries;
    }
    image_tokens = cfg.image_tokens();
    return images_per_second(model, features, reps);
  };
  BenchResult r;
  r.images_per_s_a = run(a, r.queries_a, r.image_tokens_a);
  r.images_per_s_b = run(b, r.queries_b, r.image_tokens_b);
  r.speedup = r.images_per_s_b / r.images_per_s_a;
  return r;
}

void write_bench_csv(const std::filesystem::path& path, const std::string& label_a, const std::string& label_b,
                     std::size_t batch, std::size_t reps, const BenchResult& r) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "config,label,queries,image_tokens,batch,reps,median_images_per_s,speedup_vs_a\n" << std::setprecision(9);
  out << "a," << label_a << ',' << r.queries_a << ',' << r.image_tokens_a << ',' << batch << ',' << reps << ','
      << r.images_per_s_a << ",1\n";
  out << "b," << label_b << ',' << r.queries_b << ',' << r.image_tokens_b << ',' << batch << ',' << reps << ','
      << r.images_per_s_b << ',' << r.speedup << '\n';
}

void write_attention_csv(const std::filesystem::path& path, const Tensor& attn_vj) {
  if (attn_vj.rank() != 3) throw ShapeError("write_attention_csv: expected [heads x V x J]");
  const std::size_t H = attn_vj.dim(0), V = attn_vj.dim(1), J = attn_vj.dim(2);
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "vertex";
  for (std::size_t j = 0; j < J; ++j) out << ',' << (j < mesh::kJointCount ? mesh::joint_names()[j] : std::to_string(j).c_str());
  out << '\n' << std::setprecision(7);
  for (std::size_t v = 0; v < V; ++v) {
    out << v;
    for (std::size_t j = 0; j < J; ++j) {
      double w = 0;
      for (std::size_t h = 0; h < H; ++h) w += attn_vj.at((h * V + v) * J + j);
      out << ',' << w / static_cast<double>(H);
    }
    out << '\n';
  }
}

void write_cluster_csv(const std::filesystem::path& path, const itp::PrunerOutput<float>& p) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "cluster,y,x,weight\n" << std::setprecision(7);
  for (std::size_t i = 0; i < p.tokens; ++i)
    for (std::size_t y = 0; y < p.height; ++y)
      for (std::size_t x = 0; x < p.width; ++x) out << i << ',' << y << ',' << x << ',' << p.mapping.at((y * p.width + x) * p.tokens + i) << '\n';
}

}  // namespace tore::harness
