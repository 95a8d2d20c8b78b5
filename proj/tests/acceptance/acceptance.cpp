// Acceptance run: one PASS/FAIL line per criterion, details indented below.
// Exit status is the number of failed criteria.

#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <iterator>
#include <map>
#include <sstream>

#include "../common/model_check.hpp"
#include "../common/op_cases.hpp"
#include "tore/flopcount/flops.hpp"
#include "tore/mesh/metrics.hpp"
#include "tore/mesh/skinning.hpp"

using namespace tore;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::vector<std::string> details;
  bool skipped = false;

  template <typename... A>
  void note(A&&... parts) {
    std::ostringstream os;
    os << std::setprecision(6);
    (os << ... << parts);
    details.push_back(os.str());
  }
};

struct Options {
  fs::path workdir;
  std::size_t overfit_steps = 2000;
  std::size_t overfit_seeds = 3;
  bool skip_overfit = false;
  double overfit_lr = 1e-3;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// 1
Outcome token_counts() {
  Outcome o;
  const auto a = itp::token_count(49, 0.2), b = itp::token_count(49, 0.5);
  o.note("token_count(49, 0.2) = ", a, ", token_count(49, 0.5) = ", b);
  o.pass = a == 39 && b == 24;
  return o;
}

// 2
Outcome flop_reductions() {
  Outcome o;
  const auto t0 = std::chrono::steady_clock::now();
  auto red = [](const char* base, const char* variant) {
    return flopcount::reduction_report(flopcount::model_flops(base), flopcount::model_flops(variant));
  };
  const auto metro = red("metro_full", "metro_gtr");
  const auto fm = red("fastmetro_full", "fastmetro_gtr");
  const auto i20 = red("fastmetro_gtr", "fastmetro_gtr_itp20");
  const auto i50 = red("fastmetro_gtr", "fastmetro_gtr_itp50");
  const double secs = seconds_since(t0);
  o.note("metro_full -> metro_gtr: ", metro.percent, "% (target 97.1 +- 3; ", metro.base_total / 2e9, " -> ",
         metro.variant_total / 2e9, " GMAC)");
  o.note("fastmetro_full -> fastmetro_gtr: ", fm.percent, "% (target 89.4 +- 3; ", fm.base_total / 2e9, " -> ",
         fm.variant_total / 2e9, " GMAC)");
  o.note("fastmetro_gtr -> ITP@20%: ", i20.percent, "% (target 14.3 +- 4)");
  o.note("fastmetro_gtr -> ITP@50%: ", i50.percent, "% (target [25, 45])");
  o.note("runtime ", secs, " s");
  o.pass = std::abs(metro.percent - 97.1) <= 3 && std::abs(fm.percent - 89.4) <= 3 &&
           std::abs(i20.percent - 14.3) <= 4 && i50.percent >= 25 && i50.percent <= 45 && secs < 1;
  return o;
}

// 3
Outcome analytic_vs_executed() {
  Outcome o;
  o.pass = true;
  std::vector<std::pair<std::string, gtr::ModelConfig>> cfgs;
  for (const auto* name : {"metro_full", "metro_gtr", "fastmetro_full", "fastmetro_gtr", "fastmetro_gtr_itp20",
                           "fastmetro_gtr_itp50"})
    cfgs.emplace_back(name, harness::desk_preset(name));
  auto mlp = harness::desk_preset("fastmetro_gtr");
  mlp.shape_head = gtr::ShapeHead::Mlp;
  cfgs.emplace_back("fastmetro_gtr (mlp head)", mlp);
  for (const auto& [name, cfg] : cfgs) {
    gtr::Model<float> model(cfg, 0);
    Rng rng(3);
    NoGradGuard guard;
    const auto out = model.forward_features(randn<float>({cfg.grid, cfg.grid, cfg.backbone_dim}, rng), gtr::Mode::Eval);
    const double counted = static_cast<double>(out.flops.transformer + out.flops.shape);
    const double analytic = flopcount::model_flops(flopcount::describe(cfg)).total();
    const double err = analytic / counted - 1;
    o.note(name, ": counted ", counted, ", analytic ", analytic, ", relative difference ", 100 * err, "%");
    o.pass = o.pass && std::abs(err) < 0.05;
  }
  return o;
}

// 4
Outcome gradient_suite() {
  Outcome o;
  o.pass = true;
  const auto t0 = std::chrono::steady_clock::now();
  auto record = [&](const std::string& name, const std::vector<double>& errs) {
    const double worst = *std::max_element(errs.begin(), errs.end());
    const bool ok = worst < 1e-3 && errs.size() >= 10;
    o.pass = o.pass && ok;
    if (!ok) o.note(name, ": worst ", worst, " over ", errs.size(), " instances");
    return worst;
  };
  double worst_op = 0;
  const auto cases = testing::op_cases();
  for (std::size_t k = 0; k < cases.size(); ++k) {
    Rng rng(500 + k);
    std::vector<double> errs;
    for (int i = 0; i < 10; ++i) errs.push_back(testing::check_graph<float>(cases[k].graph, cases[k].make_inputs(rng)).rel_error);
    worst_op = std::max(worst_op, record("op " + cases[k].name, errs));
  }
  o.note(cases.size(), " ops x 10 instances, worst ", worst_op);

  using Build = std::function<testing::CheckResult(std::uint64_t)>;
  const mesh::MeshTemplate tmpl = mesh::build_template(0);
  const std::vector<std::pair<std::string, Build>> layers = {
      {"attention", [](std::uint64_t s) {
         return testing::check_params(
             []<typename T>(ParamStore<T>& st) -> std::function<BasicTensor<T>()> {
               auto q = st.add("q", {4, 8}, Init::Normal, 1.0), kv = st.add("kv", {5, 8}, Init::Normal, 1.0);
               auto m = std::make_shared<MultiHeadAttention<T>>(st, "m", 8, 2);
               return [q, kv, m] { return testing::readout((*m)(q, kv).out); };
             },
             s);
       }},
      {"encoder layer", [](std::uint64_t s) {
         return testing::check_params(
             []<typename T>(ParamStore<T>& st) -> std::function<BasicTensor<T>()> {
               auto x = st.add("x", {5, 8}, Init::Normal, 1.0);
               auto l = std::make_shared<EncoderLayer<T>>(st, "l", LayerConfig{8, 16, 2, 1});
               return [x, l] { return testing::readout((*l)(x).out); };
             },
             s);
       }},
      {"decoder layer", [](std::uint64_t s) {
         return testing::check_params(
             []<typename T>(ParamStore<T>& st) -> std::function<BasicTensor<T>()> {
               auto x = st.add("x", {6, 8}, Init::Normal, 1.0), mem = st.add("mem", {3, 8}, Init::Normal, 1.0);
               auto l = std::make_shared<DecoderLayer<T>>(st, "l", LayerConfig{8, 16, 2, 1});
               return [x, mem, l] { return testing::readout((*l)(x, mem).out); };
             },
             s);
       }},
      {"shape regressor (masked)", [&tmpl](std::uint64_t s) {
         return testing::check_params(
             [&tmpl]<typename T>(ParamStore<T>& st) -> std::function<BasicTensor<T>()> {
               auto j = st.add("j", {14, 8}, Init::Normal, 1.0);
               auto r = std::make_shared<gtr::ShapeRegressor<T>>(st, "nsr", LayerConfig{8, 16, 2, 1},
                                                                  static_cast<std::size_t>(tmpl.low_count()));
               auto mask = std::make_shared<AttnMask>(adjacency_mask(tmpl));
               return [j, r, mask] { return testing::readout((*r)(j, *mask).verts_low); };
             },
             s);
       }},
      {"mlp regressor", [](std::uint64_t s) {
         return testing::check_params(
             []<typename T>(ParamStore<T>& st) -> std::function<BasicTensor<T>()> {
               auto j = st.add("j", {14, 4}, Init::Normal, 1.0);
               auto r = std::make_shared<gtr::MlpRegressor<T>>(st, "mlp", 56, 16, 20);
               return [j, r] { return testing::readout((*r)(j)); };
             },
             s);
       }},
      {"token pruner", [](std::uint64_t s) {
         return testing::check_params(
             []<typename T>(ParamStore<T>& st) -> std::function<BasicTensor<T>()> {
               auto f = st.add("f", {9, 8}, Init::Normal, 1.0);
               auto p = std::make_shared<itp::ImageTokenPruner<T>>(st, "p", 8, 3, 3, 4);
               return [f, p] { return testing::readout((*p)(f).clusters); };
             },
             s);
       }},
      {"pruning loss", [](std::uint64_t s) {
         const itp::IndicatorGrid body{3, 3, {1, 0, 0, 1, 1, 0, 0, 1, 0}};
         return testing::check_params(
             [body]<typename T>(ParamStore<T>& st) -> std::function<BasicTensor<T>()> {
               auto f = st.add("f", {9, 8}, Init::Normal, 1.0);
               auto p = std::make_shared<itp::ImageTokenPruner<T>>(st, "p", 8, 3, 3, 4);
               return [f, p, body] { return itp::pruning_loss(body, (*p)(f).mapping); };
             },
             s);
       }},
  };
  for (const auto& [name, build] : layers) {
    std::vector<double> errs;
    for (std::uint64_t s = 0; s < 10; ++s) errs.push_back(build(s).rel_error);
    o.note(name, ": 10 instances, worst ", record(name, errs));
  }
  std::vector<double> errs;
  gtr::ModelConfig cfg;
  cfg.prune_rate = 0.2;
  for (std::uint64_t s = 0; s < 10; ++s) errs.push_back(testing::model_gradient_check(cfg, s, 1).rel_error);
  o.note("total_loss through the full desk model: 10 instances, worst ", record("total_loss", errs));
  o.note("runtime ", seconds_since(t0), " s");
  return o;
}

// 5
Outcome mask_correctness() {
  Outcome o;
  gtr::ModelConfig cfg;
  gtr::Model<float> model(cfg, 0);
  const auto& t = model.mesh_template();
  const std::size_t V = cfg.coarse_vertices(), J = cfg.joints(), H = cfg.nsr.heads;
  std::size_t nonzero = 0, checked = 0;
  double worst_row = 0;
  for (std::uint64_t s = 0; s < 5; ++s) {
    Rng rng(s);
    NoGradGuard guard;
    const auto out = model.forward_features(randn<float>({cfg.grid, cfg.grid, cfg.backbone_dim}, rng, 3.0), gtr::Mode::Eval);
    for (std::size_t h = 0; h < H; ++h)
      for (std::size_t i = 0; i < V; ++i) {
        double row = 0, cross = 0;
        for (std::size_t j = 0; j < V; ++j) {
          const float w = out.attn_vv.at((h * V + i) * V + j);
          if (!t.adjacent(static_cast<int>(i), static_cast<int>(j))) {
            ++checked;
            nonzero += w != 0.f;
          }
          row += w;
        }
        for (std::size_t j = 0; j < J; ++j) cross += out.attn_vj.at((h * V + i) * J + j);
        worst_row = std::max({worst_row, std::abs(row - 1), std::abs(cross - 1)});
      }
  }
  o.note(checked, " non-adjacent weights checked, ", nonzero, " nonzero");
  o.note("worst |row sum - 1| ", worst_row);
  o.pass = nonzero == 0 && worst_row <= 1e-5;
  return o;
}

mesh::Pose random_pose(Rng& rng, int joints) {
  const double bound = harness::SynthConfig{}.max_rotation / std::sqrt(3.0);
  std::uniform_real_distribution<double> angle(-bound, bound), shift(-0.3, 0.3);
  auto p = mesh::Pose::identity(joints);
  for (Eigen::Index j = 0; j < p.joint_rotations.rows(); ++j)
    for (int a = 0; a < 3; ++a) p.joint_rotations(j, a) = angle(rng);
  p.root_translation = {shift(rng), shift(rng), shift(rng)};
  return p;
}

// 6
Outcome metric_invariants() {
  Outcome o;
  const auto t = mesh::build_template(0);
  Rng rng(66);
  std::normal_distribution<double> n(0, 1);
  std::uniform_real_distribution<double> scale(0.5, 2.0);
  double worst_invariance = 0, worst_zero = 0;
  std::size_t violations = 0;
  double worst_margin = 0;
  for (int i = 0; i < 1000; ++i) {
    const auto gt = mesh::lbs_pose(t, random_pose(rng, t.joint_count()));
    const auto pred = mesh::lbs_pose(t, random_pose(rng, t.joint_count()));
    const auto m = mesh::compute_metrics(pred.joints3d, pred.verts_high, gt.joints3d, gt.verts_high);
    violations += m.mpjpe < m.pampjpe;
    worst_margin = std::max(worst_margin, m.pampjpe - m.mpjpe);
    const auto r = mesh::axis_angle_to_matrix(Eigen::Vector3d(n(rng), n(rng), n(rng)));
    const double s = scale(rng);
    const Eigen::RowVector3d shift(n(rng), n(rng), n(rng));
    const Eigen::MatrixX3d moved = ((s * pred.joints3d * r.transpose()).rowwise() + shift).eval();
    const auto m2 = mesh::compute_metrics(moved, pred.verts_high, gt.joints3d, gt.verts_high);
    worst_invariance = std::max(worst_invariance, std::abs(m2.pampjpe - m.pampjpe));
    const auto z = mesh::compute_metrics(gt.joints3d, gt.verts_high, gt.joints3d, gt.verts_high);
    worst_zero = std::max({worst_zero, z.mpjpe, z.pampjpe, z.mpve});
  }
  o.note("PAMPJPE change under random similarity transforms: worst ", worst_invariance, " (limit 1e-5)");
  o.note("MPJPE < PAMPJPE on ", violations, " of 1000 random pairs (largest PAMPJPE - MPJPE ", worst_margin, ")");
  o.note("largest metric on identical inputs: ", worst_zero);
  o.pass = worst_invariance < 1e-5 && violations == 0 && worst_zero == 0;
  return o;
}

// 7
Outcome pruning_loss_bounds() {
  Outcome o;
  Rng rng(77);
  std::uniform_int_distribution<int> bit(0, 1);
  const double rates[] = {0.0, 0.2, 0.5, 0.8};
  std::size_t out_of_range = 0;
  bool empty_exact = true;
  std::map<std::size_t, std::pair<double, std::size_t>> full_by_t;  // T -> (last value, exact matches)
  std::map<std::size_t, std::size_t> draws_by_t;
  for (int i = 0; i < 1000; ++i) {
    const std::size_t T = itp::token_count(49, rates[i % 4]);
    ParamStore<double> store(static_cast<std::uint64_t>(i));
    itp::ImageTokenPruner<double> p(store, "p", 8, 7, 7, T);
    const auto m = p(randn<double>({49, 8}, rng, 2.0)).mapping;
    std::vector<std::uint8_t> cells(49);
    for (auto& c : cells) c = static_cast<std::uint8_t>(bit(rng));
    const double l = itp::pruning_loss(itp::IndicatorGrid{7, 7, cells}, m).item();
    out_of_range += !(l <= 0 && l >= -1.0 / static_cast<double>(T));
    const double full = itp::pruning_loss(itp::IndicatorGrid{7, 7, std::vector<std::uint8_t>(49, 1)}, m).item();
    const double empty = itp::pruning_loss(itp::IndicatorGrid{7, 7, std::vector<std::uint8_t>(49, 0)}, m).item();
    auto& [value, exact] = full_by_t[T];
    value = full;
    exact += full == -1.0 / static_cast<double>(T);
    ++draws_by_t[T];
    empty_exact = empty_exact && empty == 0.0;
  }
  o.note("L_P outside [-1/T, 0] on ", out_of_range, " of 1000 random (M, F_d)");
  o.note("F_d = 0 gives exactly 0: ", empty_exact ? "yes" : "no");
  bool full_exact = true;
  for (const auto& [T, r] : full_by_t) {
    o.note("T = ", T, ": F_d = 1 gives ", std::setprecision(17), r.first, " (-1/T = ", -1.0 / static_cast<double>(T),
           ", -1/HW = ", -1.0 / 49, "), exact -1/T in ", r.second, " of ", draws_by_t[T]);
    full_exact = full_exact && r.second == draws_by_t[T];
  }
  if (!full_exact) o.note("clusters are convex combinations of the HW tokens, so full coverage gives -1/HW, not -1/T");
  o.pass = out_of_range == 0 && empty_exact && full_exact;
  return o;
}

struct OverfitRun {
  std::string head;
  std::uint64_t seed = 0;
  double initial = 0, final_loss = 0, mpve = 0, seconds = 0, body = 0, background = 0;
  fs::path checkpoint;
  bool pass = false;
};

// 8 and 9
std::vector<OverfitRun> overfit_runs(const Options& opt, const harness::Dataset& data, double limit) {
  std::vector<OverfitRun> runs;
  for (std::uint64_t seed = 0; seed < opt.overfit_seeds; ++seed) {
    for (auto head : {gtr::ShapeHead::Nsr, gtr::ShapeHead::Mlp}) {
      harness::RunConfig cfg;
      cfg.model.prune_rate = 0.2;
      cfg.model.shape_head = head;
      cfg.optimizer.lr = opt.overfit_lr;
      cfg.steps = opt.overfit_steps;
      cfg.batch = 8;
      cfg.seed = seed;
      cfg.out = (opt.workdir / ("overfit_" + gtr::to_string(head) + "_seed" + std::to_string(seed))).string();
      const auto res = harness::train(cfg, data);
      const auto ev = harness::evaluate(*res.model, data);
      OverfitRun r{gtr::to_string(head), seed, res.initial_loss, res.final_loss, ev.mean.mpve, res.seconds,
                   ev.body_mass, ev.background_mass, res.checkpoint, false};
      r.pass = r.final_loss < 0.1 * r.initial && r.mpve < limit && r.seconds < 600;
      std::cout << "    [overfit] " << r.head << " seed " << seed << ": loss " << r.initial << " -> " << r.final_loss
                << ", MPVE " << r.mpve << ", " << r.seconds << " s" << std::endl;
      runs.push_back(r);
    }
  }
  return runs;
}

// 10
Outcome throughput() {
  Outcome o;
  const auto r = harness::bench(harness::desk_preset("metro_full"), harness::desk_preset("metro_gtr"), 8, 20);
  o.note("metro_full: ", r.queries_a, " tokens, ", r.images_per_s_a, " images/s");
  o.note("metro_gtr: ", r.queries_b, " tokens, ", r.images_per_s_b, " images/s");
  o.note("speedup ", r.speedup, " (target >= 2)");
  o.pass = r.speedup >= 2;
  return o;
}

std::string bytes_of(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

// 11
Outcome determinism(const Options& opt, const fs::path& checkpoint, const harness::Dataset& data) {
  Outcome o;
  harness::SynthConfig sc;
  sc.count = 16;
  sc.seed = 11;
  harness::save_dataset(opt.workdir / "det_a.tore", harness::synth_dataset(sc));
  harness::save_dataset(opt.workdir / "det_b.tore", harness::synth_dataset(sc));
  const bool same_bytes = bytes_of(opt.workdir / "det_a.tore") == bytes_of(opt.workdir / "det_b.tore");
  o.note("two fixed-seed datasets byte-identical: ", same_bytes ? "yes" : "no");

  fs::path ckpt = checkpoint;
  if (ckpt.empty() || !fs::exists(ckpt)) {
    harness::RunConfig cfg;
    cfg.model.prune_rate = 0.2;
    cfg.steps = 5;
    cfg.out = (opt.workdir / "det_run").string();
    auto r = harness::train(cfg, data);
    ckpt = r.checkpoint;
  }
  const auto a = harness::load_checkpoint(ckpt);
  harness::save_checkpoint(opt.workdir / "det_resaved.tore", *a, 0);
  const auto b = harness::load_checkpoint(opt.workdir / "det_resaved.tore");
  const auto ea = harness::evaluate(*a, data), eb = harness::evaluate(*b, data);
  bool identical = ea.rows.size() == eb.rows.size();
  for (std::size_t i = 0; identical && i < ea.rows.size(); ++i)
    identical = ea.rows[i].mpjpe == eb.rows[i].mpjpe && ea.rows[i].pampjpe == eb.rows[i].pampjpe &&
                ea.rows[i].mpve == eb.rows[i].mpve;
  o.note("checkpoint ", ckpt.filename().string(), " save -> load -> evaluate bit-identical: ", identical ? "yes" : "no");
  o.pass = same_bytes && identical;
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria"};
  Options opt;
  std::string workdir = "acceptance_work";
  app.add_option("--workdir", workdir, "Scratch directory");
  app.add_option("--overfit-steps", opt.overfit_steps, "Steps per overfit run");
  app.add_option("--overfit-seeds", opt.overfit_seeds, "Seeds per head (seed 0 is gated)")->check(CLI::PositiveNumber);
  app.add_option("--overfit-lr", opt.overfit_lr, "Learning rate of the overfit runs");
  app.add_flag("--skip-overfit", opt.skip_overfit, "Skip criteria 8 and 9");
  CLI11_PARSE(app, argc, argv);
  opt.workdir = workdir;
  fs::create_directories(opt.workdir);

  int failures = 0;
  auto report = [&](int id, const std::string& title, const Outcome& o) {
    const char* status = o.skipped ? "SKIP" : (o.pass ? "PASS" : "FAIL");
    if (!o.skipped && !o.pass) ++failures;
    std::cout << "criterion " << std::setw(2) << id << ": " << status << "  " << title << std::endl;
    for (const auto& d : o.details) std::cout << "    " << d << "\n";
    std::cout << std::flush;
  };
  auto timed = [](const std::function<Outcome()>& f) {
    const auto t0 = std::chrono::steady_clock::now();
    auto o = f();
    o.note("elapsed ", seconds_since(t0), " s");
    return o;
  };

  report(1, "token counts of the pruning rates", timed(token_counts));
  report(2, "analytical transformer flop reductions", timed(flop_reductions));
  report(3, "analytical vs executed flops within 5%", timed(analytic_vs_executed));
  report(4, "finite-difference gradient suite (f32, rel err < 1e-3)", timed(gradient_suite));
  report(5, "adjacency mask and attention normalization", timed(mask_correctness));
  report(6, "metric invariants", timed(metric_invariants));
  report(7, "pruning loss bounds", timed(pruning_loss_bounds));

  harness::SynthConfig sc;
  sc.count = 64;
  sc.seed = 0;
  const auto data = harness::synth_dataset(sc);
  harness::save_dataset(opt.workdir / "overfit_data.tore", data);
  fs::path checkpoint;
  if (opt.skip_overfit) {
    Outcome s;
    s.skipped = true;
    s.note("skipped by flag");
    report(8, "overfit benchmark", s);
    report(9, "pruner attends to the body region", s);
  } else {
    const double limit = 0.1 * mesh::build_template(0).bbox_diagonal();
    const auto runs = overfit_runs(opt, data, limit);
    Outcome o8, o9;
    o8.pass = true;
    for (const auto& r : runs) {
      o8.note(r.head, " seed ", r.seed, ": final/initial loss ", r.final_loss / r.initial, " (", r.final_loss, " / ",
              r.initial, "), MPVE ", r.mpve, " (limit ", limit, "), ", r.seconds, " s: ", r.pass ? "ok" : "missed",
              r.seed == 0 ? "" : " (reported)");
      if (r.seed == 0) o8.pass = o8.pass && r.pass;
    }
    std::size_t nsr_wins = 0, pairs = 0;
    for (const auto& a : runs)
      for (const auto& b : runs)
        if (a.head == "nsr" && b.head == "mlp" && a.seed == b.seed) {
          ++pairs;
          nsr_wins += a.mpve <= b.mpve;
        }
    o8.note("NSR MPVE <= MLP MPVE in ", nsr_wins, " of ", pairs, " seeds (reported, not gated)");
    report(8, "overfit benchmark (nsr and mlp heads, seed 0 gated)", o8);

    const auto& first = runs.front();
    checkpoint = first.checkpoint;
    o9.note("nsr seed 0, prune rate 0.2: mean cluster mass on body cells ", first.body, ", background ", first.background);
    o9.pass = first.body > first.background;
    report(9, "pruner attends to the body region", o9);
  }
  report(10, "transformer-only throughput metro_full vs metro_gtr", timed(throughput));
  report(11, "determinism and checkpoint round-trip", timed([&] { return determinism(opt, checkpoint, data); }));

  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed") << std::endl;
  return failures;
}
