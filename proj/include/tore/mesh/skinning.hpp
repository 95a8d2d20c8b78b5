#pragma once

#include <Eigen/Dense>

#include "tore/mesh/template.hpp"

namespace tore::mesh {

struct Pose {
  Eigen::MatrixX3d joint_rotations;  // [J x 3] axis-angle, radians
  Eigen::Vector3d root_translation = Eigen::Vector3d::Zero();
  double shape_scale = 1.0;

  static Pose identity(int joints);
};

struct PosedMesh {
  Eigen::MatrixX3d verts_low, verts_mid, verts_high;
  Eigen::MatrixX3d joints3d;  // regressor applied to verts_high
};

/// Rodrigues formula; returns the exact identity for a zero vector.
Eigen::Matrix3d axis_angle_to_matrix(const Eigen::Vector3d& axis_angle);

/// Linear blend skinning of the coarse mesh followed by upsampling and joint
/// regression. Each joint rotates about its own rest position; transforms
/// compose down the kinematic chain and the root translation is applied last.
PosedMesh lbs_pose(const MeshTemplate& t, const Pose& pose);

/// Global rigid transforms (R_j, t_j) mapping rest space to posed space.
void forward_kinematics(const MeshTemplate& t, const Pose& pose, std::vector<Eigen::Matrix3d>& rotations,
                        std::vector<Eigen::Vector3d>& translations);

}  // namespace tore::mesh
