#include "tore/mesh/skinning.hpp"

#include <stdexcept>

namespace tore::mesh {

Pose Pose::identity(int joints) {
  Pose p;
  p.joint_rotations = Eigen::MatrixX3d::Zero(joints, 3);
  return p;
}

Eigen::Matrix3d axis_angle_to_matrix(const Eigen::Vector3d& axis_angle) {
  const double theta = axis_angle.norm();
  if (theta == 0.0) return Eigen::Matrix3d::Identity();
  const Eigen::Vector3d k = axis_angle / theta;
  Eigen::Matrix3d K;
  K << 0, -k.z(), k.y(), k.z(), 0, -k.x(), -k.y(), k.x(), 0;
  return Eigen::Matrix3d::Identity() + std::sin(theta) * K + (1 - std::cos(theta)) * K * K;
}

void forward_kinematics(const MeshTemplate& t, const Pose& pose, std::vector<Eigen::Matrix3d>& rotations,
                        std::vector<Eigen::Vector3d>& translations) {
  const int J = t.joint_count();
  if (pose.joint_rotations.rows() != J) throw std::invalid_argument("lbs_pose: pose has the wrong joint count");
  rotations.assign(J, Eigen::Matrix3d::Identity());
  translations.assign(J, Eigen::Vector3d::Zero());
  // Parents precede children in the joint order.
  for (int j = 0; j < J; ++j) {
    const Eigen::Matrix3d local = axis_angle_to_matrix(pose.joint_rotations.row(j).transpose());
    const Eigen::Vector3d rest = t.rest_joints.row(j).transpose() * pose.shape_scale;
    const int p = t.parents[j];
    if (p < 0) {
      rotations[j] = local;
      translations[j] = rest - local * rest;
    } else {
      if (p >= j) throw std::logic_error("forward_kinematics: joints must be ordered parent first");
      // G_j(x) = G_p(rest_j + local (x - rest_j))
      rotations[j] = rotations[p] * local;
      translations[j] = (rotations[p] * rest + translations[p]) - rotations[j] * rest;
    }
  }
}

PosedMesh lbs_pose(const MeshTemplate& t, const Pose& pose) {
  std::vector<Eigen::Matrix3d> R;
  std::vector<Eigen::Vector3d> tr;
  forward_kinematics(t, pose, R, tr);
  const int V = t.low_count(), J = t.joint_count();
  PosedMesh out;
  out.verts_low.resize(V, 3);
  for (int v = 0; v < V; ++v) {
    const Eigen::Vector3d rest = t.verts_low.row(v).transpose() * pose.shape_scale;
    // Displacement form keeps the identity pose exact.
    Eigen::Vector3d disp = Eigen::Vector3d::Zero();
    for (int j = 0; j < J; ++j) {
      const double w = t.weights(v, j);
      if (w == 0.0) continue;
      disp += w * ((R[j] * rest + tr[j]) - rest);
    }
    out.verts_low.row(v) = (rest + disp + pose.root_translation).transpose();
  }
  upsample(out.verts_low, t.up_mid, t.up_high, out.verts_mid, out.verts_high);
  out.joints3d = t.regressor * out.verts_high;
  return out;
}

}  // namespace tore::mesh
