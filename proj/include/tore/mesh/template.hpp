#pragma once

#include <Eigen/Dense>
#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace tore::mesh {

using Faces = std::vector<std::array<int, 3>>;

/// Fixed joint set, pelvis first (root-centering joint).
enum Joint : int {
  kPelvis = 0,
  kRightKnee,
  kRightAnkle,
  kLeftKnee,
  kLeftAnkle,
  kSpine,
  kNeck,
  kHead,
  kRightShoulder,
  kRightElbow,
  kRightWrist,
  kLeftShoulder,
  kLeftElbow,
  kLeftWrist,
  kJointCount
};

const std::array<const char*, kJointCount>& joint_names();

/// Paper-scale vertex counts; only the FLOP model uses them.
struct PaperScaleCounts {
  static constexpr int low = 431;
  static constexpr int mid = 1723;
  static constexpr int high = 6890;
};

struct TemplateCounts {
  int joints = kJointCount;
  int coarse_vertices = 110;
};

/// Multi-resolution articulated body template.
///
/// The coarse mesh is a set of closed, capped tubes of polygonal rings laid
/// along the kinematic chains (legs, torso with head, arms). Finer levels are
/// midpoint subdivisions, and the original vertices keep their indices at
/// every level, so coarse vertex v is also row v of the mid and high meshes.
struct MeshTemplate {
  Eigen::MatrixX3d verts_low, verts_mid, verts_high;
  Faces faces_low, faces_mid, faces_high;
  Eigen::MatrixXd up_mid;     // [V_m x V_l]
  Eigen::MatrixXd up_high;    // [V_h x V_m]
  Eigen::MatrixXd regressor;  // [J x V_h], rows sum to 1
  Eigen::MatrixXd weights;    // [V_l x J], rows sum to 1, >= 0
  std::vector<std::uint8_t> adjacency;  // [V_l x V_l], 1-ring plus self
  std::vector<int> parents;             // parent joint, -1 for the root
  Eigen::MatrixX3d rest_joints;         // [J x 3]
  std::vector<int> vertex_chain;        // tube index of each coarse vertex
  std::vector<double> vertex_radius;    // tube radius at each coarse vertex
  std::uint64_t seed = 0;
  TemplateCounts counts;

  int joint_count() const { return static_cast<int>(rest_joints.rows()); }
  int low_count() const { return static_cast<int>(verts_low.rows()); }
  int mid_count() const { return static_cast<int>(verts_mid.rows()); }
  int high_count() const { return static_cast<int>(verts_high.rows()); }
  bool adjacent(int i, int j) const { return adjacency[static_cast<std::size_t>(i) * low_count() + j] != 0; }
  /// Diagonal length of the rest-pose bounding box of the high mesh.
  double bbox_diagonal() const;
};

/// Builds the template. Throws std::invalid_argument when counts.joints is
/// not the body preset or the coarse budget is below 4 * joints.
MeshTemplate build_template(std::uint64_t seed, const TemplateCounts& counts = {});

/// One level of midpoint subdivision: each triangle splits into four and every
/// edge gains a midpoint vertex. Returns the upsampling operator
/// [V_out x V_in] and fills the output faces.
Eigen::MatrixXd subdivide(int vertex_count, const Faces& faces, Faces& out_faces);

/// verts_mid = U1 * verts_low, verts_high = U2 * verts_mid.
void upsample(const Eigen::MatrixX3d& verts_low, const Eigen::MatrixXd& up_mid, const Eigen::MatrixXd& up_high,
              Eigen::MatrixX3d& verts_mid, Eigen::MatrixX3d& verts_high);

/// 1-ring neighbour count of each vertex (excluding itself) from a face list.
std::vector<int> vertex_degrees(int vertex_count, const Faces& faces);

}  // namespace tore::mesh
