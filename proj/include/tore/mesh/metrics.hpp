#pragma once

#include <Eigen/Dense>

namespace tore::mesh {

struct Alignment {
  Eigen::MatrixX3d aligned;
  double scale = 1.0;
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Eigen::RowVector3d translation = Eigen::RowVector3d::Zero();
  bool translation_only = false;  // set when the cross-covariance is rank-deficient
};

/// Similarity transform of X that best matches Y in the least-squares sense:
/// s * R * (X - mean X) + mean Y with det(R) = +1. Requires N >= 3.
Alignment procrustes_align(const Eigen::MatrixX3d& X, const Eigen::MatrixX3d& Y);

struct Metrics {
  double mpjpe = 0;
  double pampjpe = 0;
  double mpve = 0;
};

/// Mean Euclidean distance between corresponding rows.
double mean_point_error(const Eigen::MatrixX3d& a, const Eigen::MatrixX3d& b);

/// MPJPE and MPVE after centering both sides on their joint 0; PAMPJPE after
/// Procrustes alignment of the joints. Model units.
Metrics compute_metrics(const Eigen::MatrixX3d& pred_joints, const Eigen::MatrixX3d& pred_verts,
                        const Eigen::MatrixX3d& gt_joints, const Eigen::MatrixX3d& gt_verts);

}  // namespace tore::mesh
