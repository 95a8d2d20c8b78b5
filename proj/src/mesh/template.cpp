#include "tore/mesh/template.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <stdexcept>

namespace tore::mesh {

const std::array<const char*, kJointCount>& joint_names() {
  static const std::array<const char*, kJointCount> names{
      "pelvis", "right_knee",     "right_ankle", "left_knee",   "left_ankle",     "spine",      "neck",
      "head",   "right_shoulder", "right_elbow", "right_wrist", "left_shoulder", "left_elbow", "left_wrist"};
  return names;
}

double MeshTemplate::bbox_diagonal() const {
  const Eigen::RowVector3d lo = verts_high.colwise().minCoeff();
  const Eigen::RowVector3d hi = verts_high.colwise().maxCoeff();
  return (hi - lo).norm();
}

namespace {

// Rest skeleton in model units. y points down (image convention), so the
// head has negative y and the ankles positive y.
const std::array<Eigen::Vector3d, kJointCount>& rest_skeleton() {
  static const std::array<Eigen::Vector3d, kJointCount> joints{
      Eigen::Vector3d(0.0, 0.0, 0.0),      // pelvis
      Eigen::Vector3d(-0.10, 0.42, 0.02),  // right knee
      Eigen::Vector3d(-0.11, 0.82, 0.0),   // right ankle
      Eigen::Vector3d(0.10, 0.42, 0.02),   // left knee
      Eigen::Vector3d(0.11, 0.82, 0.0),    // left ankle
      Eigen::Vector3d(0.0, -0.25, -0.01),  // spine
      Eigen::Vector3d(0.0, -0.50, 0.0),    // neck
      Eigen::Vector3d(0.0, -0.68, 0.01),   // head
      Eigen::Vector3d(-0.18, -0.46, 0.0),  // right shoulder
      Eigen::Vector3d(-0.44, -0.45, 0.0),  // right elbow
      Eigen::Vector3d(-0.68, -0.44, 0.0),  // right wrist
      Eigen::Vector3d(0.18, -0.46, 0.0),   // left shoulder
      Eigen::Vector3d(0.44, -0.45, 0.0),   // left elbow
      Eigen::Vector3d(0.68, -0.44, 0.0),   // left wrist
  };
  return joints;
}

const std::array<int, kJointCount> kParents{-1,     kPelvis, kRightKnee, kPelvis,        kLeftKnee,
                                            kPelvis, kSpine, kNeck,      kNeck,          kRightShoulder,
                                            kRightElbow,     kNeck,      kLeftShoulder, kLeftElbow};

struct Chain {
  std::vector<int> joints;
  std::vector<double> radii;  // tube radius at each joint of the chain
};

const std::vector<Chain>& chains() {
  static const std::vector<Chain> c{
      {{kPelvis, kRightKnee, kRightAnkle}, {0.08, 0.06, 0.045}},
      {{kPelvis, kLeftKnee, kLeftAnkle}, {0.08, 0.06, 0.045}},
      {{kPelvis, kSpine, kNeck, kHead}, {0.12, 0.13, 0.06, 0.09}},
      {{kNeck, kRightShoulder, kRightElbow, kRightWrist}, {0.05, 0.05, 0.04, 0.03}},
      {{kNeck, kLeftShoulder, kLeftElbow, kLeftWrist}, {0.05, 0.05, 0.04, 0.03}},
  };
  return c;
}

struct Station {
  Eigen::Vector3d center;
  Eigen::Vector3d dir;
  double radius;
  int joint;  // -1 for rings inserted inside a bone
};

double point_segment_distance(const Eigen::Vector3d& p, const Eigen::Vector3d& a, const Eigen::Vector3d& b) {
  const Eigen::Vector3d ab = b - a;
  const double t = std::clamp((p - a).dot(ab) / ab.squaredNorm(), 0.0, 1.0);
  return (p - (a + t * ab)).norm();
}

}  // namespace

Eigen::MatrixXd subdivide(int vertex_count, const Faces& faces, Faces& out_faces) {
  std::map<std::pair<int, int>, int> midpoint;
  std::vector<std::pair<int, int>> edges;
  auto mid = [&](int a, int b) {
    const auto key = std::minmax(a, b);
    auto [it, inserted] = midpoint.try_emplace({key.first, key.second}, vertex_count + static_cast<int>(edges.size()));
    if (inserted) edges.emplace_back(key.first, key.second);
    return it->second;
  };
  out_faces.clear();
  out_faces.reserve(faces.size() * 4);
  for (const auto& f : faces) {
    const int a = f[0], b = f[1], c = f[2];
    const int ab = mid(a, b), bc = mid(b, c), ca = mid(c, a);
    out_faces.push_back({a, ab, ca});
    out_faces.push_back({ab, b, bc});
    out_faces.push_back({ca, bc, c});
    out_faces.push_back({ab, bc, ca});
  }
  const int total = vertex_count + static_cast<int>(edges.size());
  Eigen::MatrixXd up = Eigen::MatrixXd::Zero(total, vertex_count);
  for (int v = 0; v < vertex_count; ++v) up(v, v) = 1.0;
  for (std::size_t e = 0; e < edges.size(); ++e) {
    up(vertex_count + static_cast<int>(e), edges[e].first) = 0.5;
    up(vertex_count + static_cast<int>(e), edges[e].second) = 0.5;
  }
  return up;
}

void upsample(const Eigen::MatrixX3d& verts_low, const Eigen::MatrixXd& up_mid, const Eigen::MatrixXd& up_high,
              Eigen::MatrixX3d& verts_mid, Eigen::MatrixX3d& verts_high) {
  if (up_mid.cols() != verts_low.rows() || up_high.cols() != up_mid.rows()) {
    throw std::invalid_argument("upsample: operator shapes do not match the vertex count");
  }
  verts_mid = up_mid * verts_low;
  verts_high = up_high * verts_mid;
}

std::vector<int> vertex_degrees(int vertex_count, const Faces& faces) {
  std::vector<std::vector<int>> nbrs(static_cast<std::size_t>(vertex_count));
  for (const auto& f : faces) {
    for (int i = 0; i < 3; ++i) {
      nbrs[f[i]].push_back(f[(i + 1) % 3]);
      nbrs[f[i]].push_back(f[(i + 2) % 3]);
    }
  }
  std::vector<int> deg;
  for (auto& n : nbrs) {
    std::sort(n.begin(), n.end());
    deg.push_back(static_cast<int>(std::unique(n.begin(), n.end()) - n.begin()));
  }
  return deg;
}

MeshTemplate build_template(std::uint64_t seed, const TemplateCounts& counts) {
  if (counts.joints != kJointCount) {
    throw std::invalid_argument("build_template: only the 14-joint body preset is available, got " +
                                std::to_string(counts.joints) + " joints");
  }
  if (counts.coarse_vertices < 4 * counts.joints) {
    throw std::invalid_argument("build_template: coarse vertex budget " + std::to_string(counts.coarse_vertices) +
                                " is below 4 * joints = " + std::to_string(4 * counts.joints));
  }
  const auto& skel = rest_skeleton();
  const auto& chain_list = chains();

  int base_rings = 0;
  for (const auto& c : chain_list) base_rings += static_cast<int>(c.joints.size());
  const int sides = std::min(6, counts.coarse_vertices / base_rings);
  const int spare = counts.coarse_vertices - base_rings * sides;
  const int extra_rings = spare / sides;
  const int cap_centers = spare % sides;

  // Spread extra rings over the bones, longest effective segment first.
  struct Bone {
    std::size_t chain, seg;
    double length;
    int inserted = 0;
  };
  std::vector<Bone> bones;
  for (std::size_t c = 0; c < chain_list.size(); ++c) {
    for (std::size_t s = 0; s + 1 < chain_list[c].joints.size(); ++s) {
      bones.push_back({c, s, (skel[chain_list[c].joints[s + 1]] - skel[chain_list[c].joints[s]]).norm()});
    }
  }
  for (int r = 0; r < extra_rings; ++r) {
    auto best = std::max_element(bones.begin(), bones.end(), [](const Bone& a, const Bone& b) {
      return a.length / (a.inserted + 1) < b.length / (b.inserted + 1);
    });
    ++best->inserted;
  }

  MeshTemplate t;
  t.seed = seed;
  t.counts = counts;
  t.parents.assign(kParents.begin(), kParents.end());
  t.rest_joints.resize(kJointCount, 3);
  for (int j = 0; j < kJointCount; ++j) t.rest_joints.row(j) = skel[j].transpose();

  // Seeded global ring phase, small enough to keep rings well shaped.
  const double phase = std::numbers::pi / sides * static_cast<double>(seed % 1000) / 1000.0;
  const Eigen::Vector3d reference(0, 0, 1);

  std::vector<Eigen::Vector3d> positions;
  std::vector<int> chain_of, joint_ring_of;
  std::vector<double> radius_of;
  Faces faces;
  int centers_left = cap_centers;

  for (std::size_t c = 0; c < chain_list.size(); ++c) {
    const auto& chain = chain_list[c];
    const std::size_t n = chain.joints.size();
    std::vector<Station> stations;
    for (std::size_t s = 0; s < n; ++s) {
      const Eigen::Vector3d p = skel[chain.joints[s]];
      Eigen::Vector3d dir = Eigen::Vector3d::Zero();
      if (s > 0) dir += (p - skel[chain.joints[s - 1]]).normalized();
      if (s + 1 < n) dir += (skel[chain.joints[s + 1]] - p).normalized();
      stations.push_back({p, dir.normalized(), chain.radii[s], chain.joints[s]});
      if (s + 1 < n) {
        const auto& bone = *std::find_if(bones.begin(), bones.end(),
                                         [&](const Bone& b) { return b.chain == c && b.seg == s; });
        const Eigen::Vector3d q = skel[chain.joints[s + 1]];
        for (int k = 1; k <= bone.inserted; ++k) {
          const double f = static_cast<double>(k) / (bone.inserted + 1);
          stations.push_back({p + f * (q - p), (q - p).normalized(),
                              (1 - f) * chain.radii[s] + f * chain.radii[s + 1], -1});
        }
      }
    }

    std::vector<int> ring_start;
    for (const auto& st : stations) {
      const Eigen::Vector3d u = (reference - reference.dot(st.dir) * st.dir).normalized();
      const Eigen::Vector3d w = st.dir.cross(u);
      ring_start.push_back(static_cast<int>(positions.size()));
      for (int i = 0; i < sides; ++i) {
        const double theta = 2 * std::numbers::pi * i / sides + phase;
        positions.push_back(st.center + st.radius * (std::cos(theta) * u + std::sin(theta) * w));
        chain_of.push_back(static_cast<int>(c));
        joint_ring_of.push_back(st.joint);
        radius_of.push_back(st.radius);
      }
    }
    for (std::size_t r = 0; r + 1 < ring_start.size(); ++r) {
      const int a = ring_start[r], b = ring_start[r + 1];
      for (int i = 0; i < sides; ++i) {
        const int i1 = (i + 1) % sides;
        faces.push_back({a + i, a + i1, b + i1});
        faces.push_back({a + i, b + i1, b + i});
      }
    }
    // Caps: far end first (extremities get the domed caps first).
    const std::array<std::pair<std::size_t, double>, 2> ends{{{stations.size() - 1, 1.0}, {0, -1.0}}};
    for (const auto& [idx, sign] : ends) {
      const int a = ring_start[idx];
      const bool far_end = sign > 0;
      if (centers_left > 0) {
        --centers_left;
        const auto& st = stations[idx];
        const int centre = static_cast<int>(positions.size());
        positions.push_back(st.center + sign * 0.5 * st.radius * st.dir);
        chain_of.push_back(static_cast<int>(c));
        joint_ring_of.push_back(-1);
        radius_of.push_back(st.radius);
        for (int i = 0; i < sides; ++i) {
          const int i1 = (i + 1) % sides;
          faces.push_back(far_end ? std::array<int, 3>{centre, a + i, a + i1} : std::array<int, 3>{centre, a + i1, a + i});
        }
      } else {
        for (int i = 1; i + 1 < sides; ++i) {
          faces.push_back(far_end ? std::array<int, 3>{a, a + i, a + i + 1} : std::array<int, 3>{a, a + i + 1, a + i});
        }
      }
    }
  }

  const int vl = static_cast<int>(positions.size());
  if (vl != counts.coarse_vertices) throw std::logic_error("build_template: vertex budget bookkeeping failed");
  t.verts_low.resize(vl, 3);
  for (int v = 0; v < vl; ++v) t.verts_low.row(v) = positions[v].transpose();
  t.faces_low = faces;
  t.vertex_chain = chain_of;
  t.vertex_radius = radius_of;

  t.up_mid = subdivide(vl, t.faces_low, t.faces_mid);
  t.up_high = subdivide(static_cast<int>(t.up_mid.rows()), t.faces_mid, t.faces_high);
  upsample(t.verts_low, t.up_mid, t.up_high, t.verts_mid, t.verts_high);

  // Regressor: average of the ring vertices centred on each joint. Coarse
  // vertices keep their index in the high mesh.
  t.regressor = Eigen::MatrixXd::Zero(kJointCount, t.verts_high.rows());
  for (int j = 0; j < kJointCount; ++j) {
    int members = 0;
    for (int v = 0; v < vl; ++v) members += joint_ring_of[v] == j;
    if (members == 0) throw std::logic_error("build_template: joint without a ring");
    for (int v = 0; v < vl; ++v) {
      if (joint_ring_of[v] == j) t.regressor(j, v) = 1.0 / members;
    }
  }

  // Skinning: Gaussian falloff over the two nearest bones of the vertex's own
  // tube; a bone follows its parent joint's transform.
  t.weights = Eigen::MatrixXd::Zero(vl, kJointCount);
  for (int v = 0; v < vl; ++v) {
    const auto& chain = chain_list[chain_of[v]];
    std::vector<std::pair<double, int>> near;
    for (std::size_t s = 0; s + 1 < chain.joints.size(); ++s) {
      near.emplace_back(point_segment_distance(positions[v], skel[chain.joints[s]], skel[chain.joints[s + 1]]),
                        chain.joints[s]);
    }
    std::sort(near.begin(), near.end());
    const double sigma = radius_of[v];
    double total = 0;
    for (std::size_t k = 0; k < std::min<std::size_t>(2, near.size()); ++k) {
      const double w = std::exp(-near[k].first * near[k].first / (2 * sigma * sigma));
      t.weights(v, near[k].second) += w;
      total += w;
    }
    if (total > 0) {
      t.weights.row(v) /= total;
    } else {
      t.weights.row(v).setZero();
      t.weights(v, near.front().second) = 1.0;
    }
  }

  t.adjacency.assign(static_cast<std::size_t>(vl) * vl, 0);
  for (int v = 0; v < vl; ++v) t.adjacency[static_cast<std::size_t>(v) * vl + v] = 1;
  for (const auto& f : t.faces_low) {
    for (int i = 0; i < 3; ++i) {
      const int a = f[i], b = f[(i + 1) % 3];
      t.adjacency[static_cast<std::size_t>(a) * vl + b] = 1;
      t.adjacency[static_cast<std::size_t>(b) * vl + a] = 1;
    }
  }
  return t;
}

}  // namespace tore::mesh
