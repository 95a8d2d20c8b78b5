#pragma once

#include <optional>

#include "tore/itp/pruner.hpp"
#include "tore/numerics/ops.hpp"

namespace tore::losses {

struct LossWeights {
  double pruning = 1;
  double joints2d = 100;
  double verts3d = 100;
  double joints3d = 1000;
  double alpha = 1;  // 3-D supervision available
  double beta = 1;   // 2-D supervision available
};

/// s * X[:, :2] + t with camera = (s, t_x, t_y) as a 3-element tensor.
template <typename T>
BasicTensor<T> weak_perspective_project(const BasicTensor<T>& points, const BasicTensor<T>& camera);

/// Plain-value version used for indicator grids and synthetic labels.
Eigen::MatrixX2d project_points(const Eigen::MatrixX3d& points, double s, double tx, double ty);

template <typename T>
struct MeshLevels {
  BasicTensor<T> low, mid, high;
};

/// Sum over the three levels of the mean absolute coordinate error.
template <typename T>
BasicTensor<T> vertex_loss(const MeshLevels<T>& pred, const MeshLevels<T>& gt);

template <typename T>
struct JointLosses {
  BasicTensor<T> joints3d;            // direct joint head vs gt
  BasicTensor<T> regressed_joints3d;  // joints regressed from the mesh vs gt
  BasicTensor<T> regressed_joints2d;  // projected regressed joints vs gt 2-D
};

template <typename T>
JointLosses<T> joint_losses(const BasicTensor<T>& pred_joints, const BasicTensor<T>& regressed_joints,
                            const BasicTensor<T>& gt_joints3d, const BasicTensor<T>& gt_joints2d,
                            const BasicTensor<T>& camera);

template <typename T>
struct Prediction {
  BasicTensor<T> joints3d;            // [J x 3]
  BasicTensor<T> regressed_joints3d;  // [J x 3]
  MeshLevels<T> verts;
  BasicTensor<T> camera;   // [1 x 3] (s, t_x, t_y)
  BasicTensor<T> mapping;  // ITP M [HW x T], undefined when the pruner is off
};

template <typename T>
struct Target {
  BasicTensor<T> joints3d, joints2d;
  MeshLevels<T> verts;
};

template <typename T>
struct LossTerms {
  BasicTensor<T> total;
  double joints3d = 0, regressed_joints3d = 0, regressed_joints2d = 0, verts3d = 0, pruning = 0;
};

/// Body-cell indicator from gt high-resolution vertices projected with the
/// predicted camera. Plain values: no gradient reaches the camera.
itp::IndicatorGrid body_indicator(const Eigen::MatrixX3d& gt_verts_high, double s, double tx, double ty,
                                  std::size_t height, std::size_t width, double image_size);

/// alpha * [w_J3D (L^R_J3D + L_J3D) + w_V3D L_V3D + w_P L_P] + beta * w_J2D L^R_J2D.
/// The pruning term is present only when pred.mapping is defined and `body`
/// is given.
template <typename T>
LossTerms<T> total_loss(const Prediction<T>& pred, const Target<T>& gt, const LossWeights& w,
                        const itp::IndicatorGrid* body);

}  // namespace tore::losses
