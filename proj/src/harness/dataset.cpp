#include "tore/harness/dataset.hpp"

#include <cmath>
#include <stdexcept>

#include "tore/harness/container.hpp"
#include "tore/losses/losses.hpp"
#include "tore/mesh/skinning.hpp"
#include "tore/numerics/random.hpp"

namespace tore::harness {

namespace {

// Everything a dataset holds is stored as f32, so samples are rounded on
// creation and a loaded dataset equals the generated one exactly.
template <typename M>
M round_f32(const M& m) {
  return m.template cast<float>().template cast<double>();
}

Eigen::MatrixXf render_points(const Eigen::MatrixX2d& pts, const SynthConfig& cfg, Rng& rng) {
  const auto S = static_cast<Eigen::Index>(cfg.image_size);
  Eigen::MatrixXf img = Eigen::MatrixXf::Zero(S, S);
  const double inv = 1.0 / (2 * cfg.blob_sigma * cfg.blob_sigma);
  const int reach = static_cast<int>(std::ceil(3 * cfg.blob_sigma));
  for (Eigen::Index p = 0; p < pts.rows(); ++p) {
    const double px = pts(p, 0), py = pts(p, 1);
    const int cx = static_cast<int>(std::floor(px)), cy = static_cast<int>(std::floor(py));
    for (int y = cy - reach; y <= cy + reach; ++y) {
      if (y < 0 || y >= S) continue;
      for (int x = cx - reach; x <= cx + reach; ++x) {
        if (x < 0 || x >= S) continue;
        const double dx = x + 0.5 - px, dy = y + 0.5 - py;
        img(y, x) += static_cast<float>(std::exp(-(dx * dx + dy * dy) * inv));
      }
    }
  }
  // Uniform noise with standard deviation noise_sigma.
  std::uniform_real_distribution<double> noise(0.0, cfg.noise_sigma * std::sqrt(12.0));
  for (Eigen::Index y = 0; y < S; ++y)
    for (Eigen::Index x = 0; x < S; ++x) img(y, x) = std::min(img(y, x), 1.0f) + static_cast<float>(noise(rng));
  return img;
}

}  // namespace

Dataset synth_dataset(const SynthConfig& cfg) {
  return synth_dataset(cfg, mesh::build_template(cfg.template_seed, cfg.template_counts));
}

Dataset synth_dataset(const SynthConfig& cfg, const mesh::MeshTemplate& tmpl) {
  if (cfg.count == 0) throw std::invalid_argument("synth_dataset: n must be at least 1");
  if (cfg.image_size == 0 || cfg.min_scale <= 0 || cfg.max_scale < cfg.min_scale || cfg.noise_sigma < 0) {
    throw std::invalid_argument("synth_dataset: bad camera or image settings");
  }
  Dataset d{cfg, {}};
  const double bound = cfg.max_rotation / std::sqrt(3.0);
  const double center = static_cast<double>(cfg.image_size) / 2;
  for (std::size_t i = 0; i < cfg.count; ++i) {
    Sample s;
    s.pose_seed = derive_seed(cfg.seed, i);
    Rng rng(s.pose_seed);
    std::uniform_real_distribution<double> angle(-bound, bound);
    auto pose = mesh::Pose::identity(tmpl.joint_count());
    for (Eigen::Index j = 0; j < pose.joint_rotations.rows(); ++j)
      for (int a = 0; a < 3; ++a) pose.joint_rotations(j, a) = angle(rng);
    const auto posed = mesh::lbs_pose(tmpl, pose);
    std::uniform_real_distribution<double> scale(cfg.min_scale, cfg.max_scale), shift(-cfg.max_shift, cfg.max_shift);
    const double cs = scale(rng);
    const double tx = center + shift(rng), ty = center + shift(rng);
    s.camera = round_f32(Eigen::Vector3d(cs, tx, ty));
    s.verts_low = round_f32(posed.verts_low);
    s.verts_mid = round_f32(posed.verts_mid);
    s.verts_high = round_f32(posed.verts_high);
    s.joints3d = round_f32(posed.joints3d);
    s.joints2d = round_f32(losses::project_points(s.joints3d, s.camera(0), s.camera(1), s.camera(2)));
    s.render = render_points(losses::project_points(s.verts_low, s.camera(0), s.camera(1), s.camera(2)), cfg, rng);
    d.samples.push_back(std::move(s));
  }
  return d;
}

namespace {

template <typename M>
void append(std::vector<float>& out, const M& m) {
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) out.push_back(static_cast<float>(m(r, c)));
}

template <typename M>
void fill(M& m, const std::vector<float>& src, std::size_t& pos) {
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = src.at(pos++);
}

nlohmann::json config_json(const SynthConfig& c) {
  return {{"count", c.count},
          {"seed", c.seed},
          {"image_size", c.image_size},
          {"noise_sigma", c.noise_sigma},
          {"blob_sigma", c.blob_sigma},
          {"max_rotation", c.max_rotation},
          {"min_scale", c.min_scale},
          {"max_scale", c.max_scale},
          {"max_shift", c.max_shift},
          {"template_seed", c.template_seed},
          {"joints", c.template_counts.joints},
          {"coarse_vertices", c.template_counts.coarse_vertices}};
}

SynthConfig config_from(const nlohmann::json& j) {
  SynthConfig c;
  c.count = j.at("count");
  c.seed = j.at("seed");
  c.image_size = j.at("image_size");
  c.noise_sigma = j.at("noise_sigma");
  c.blob_sigma = j.at("blob_sigma");
  c.max_rotation = j.at("max_rotation");
  c.min_scale = j.at("min_scale");
  c.max_scale = j.at("max_scale");
  c.max_shift = j.at("max_shift");
  c.template_seed = j.at("template_seed");
  c.template_counts.joints = j.at("joints");
  c.template_counts.coarse_vertices = j.at("coarse_vertices");
  return c;
}

}  // namespace

void save_dataset(const std::filesystem::path& path, const Dataset& d) {
  if (d.samples.empty()) throw std::invalid_argument("save_dataset: empty dataset");
  const auto& f = d.samples.front();
  const std::size_t n = d.samples.size();
  std::vector<float> renders, low, mid, high, j3, j2, cams;
  for (const auto& s : d.samples) {
    append(renders, s.render);
    append(low, s.verts_low);
    append(mid, s.verts_mid);
    append(high, s.verts_high);
    append(j3, s.joints3d);
    append(j2, s.joints2d);
    append(cams, s.camera.transpose());
  }
  auto rows = [](const auto& m) { return static_cast<std::size_t>(m.rows()); };
  Container c;
  c.meta["kind"] = "dataset";
  c.meta["records"] = n;
  c.meta["config"] = config_json(d.config);
  std::vector<std::uint64_t> seeds;
  for (const auto& s : d.samples) seeds.push_back(s.pose_seed);
  c.meta["pose_seeds"] = seeds;
  c.add("renders", {n, rows(f.render), static_cast<std::size_t>(f.render.cols())}, std::move(renders));
  c.add("verts_low", {n, rows(f.verts_low), 3}, std::move(low));
  c.add("verts_mid", {n, rows(f.verts_mid), 3}, std::move(mid));
  c.add("verts_high", {n, rows(f.verts_high), 3}, std::move(high));
  c.add("joints3d", {n, rows(f.joints3d), 3}, std::move(j3));
  c.add("joints2d", {n, rows(f.joints2d), 2}, std::move(j2));
  c.add("cameras", {n, 3}, std::move(cams));
  write_container(path, c);
}

Dataset load_dataset(const std::filesystem::path& path) {
  const auto c = read_container(path);
  if (c.meta.value("kind", "") != "dataset") throw std::runtime_error("load_dataset: " + path.string() + " is not a dataset");
  Dataset d;
  d.config = config_from(c.meta.at("config"));
  const std::size_t n = c.meta.at("records");
  const auto seeds = c.meta.at("pose_seeds").get<std::vector<std::uint64_t>>();
  const auto& renders = c.get("renders");
  const auto& low = c.get("verts_low");
  const auto& mid = c.get("verts_mid");
  const auto& high = c.get("verts_high");
  const auto& j3 = c.get("joints3d");
  const auto& j2 = c.get("joints2d");
  const auto& cams = c.get("cameras");
  std::size_t pr = 0, pl = 0, pm = 0, ph = 0, p3 = 0, p2 = 0, pc = 0;
  for (std::size_t i = 0; i < n; ++i) {
    Sample s;
    s.pose_seed = seeds.at(i);
    s.render.resize(static_cast<Eigen::Index>(renders.shape[1]), static_cast<Eigen::Index>(renders.shape[2]));
    s.verts_low.resize(static_cast<Eigen::Index>(low.shape[1]), 3);
    s.verts_mid.resize(static_cast<Eigen::Index>(mid.shape[1]), 3);
    s.verts_high.resize(static_cast<Eigen::Index>(high.shape[1]), 3);
    s.joints3d.resize(static_cast<Eigen::Index>(j3.shape[1]), 3);
    s.joints2d.resize(static_cast<Eigen::Index>(j2.shape[1]), 2);
    fill(s.render, renders.data, pr);
    fill(s.verts_low, low.data, pl);
    fill(s.verts_mid, mid.data, pm);
    fill(s.verts_high, high.data, ph);
    fill(s.joints3d, j3.data, p3);
    fill(s.joints2d, j2.data, p2);
    for (int k = 0; k < 3; ++k) s.camera(k) = cams.data.at(pc++);
    d.samples.push_back(std::move(s));
  }
  return d;
}

}  // namespace tore::harness
