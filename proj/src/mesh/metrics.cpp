#include "tore/mesh/metrics.hpp"

#include <stdexcept>

namespace tore::mesh {

Alignment procrustes_align(const Eigen::MatrixX3d& X, const Eigen::MatrixX3d& Y) {
  if (X.rows() != Y.rows()) throw std::invalid_argument("procrustes_align: point counts differ");
  if (X.rows() < 3) throw std::invalid_argument("procrustes_align: need at least 3 points");
  Alignment out;
  // Identical sets: the identity is optimal; skip the SVD so the residual is exactly zero.
  if (X == Y) {
    out.aligned = X;
    return out;
  }
  const Eigen::RowVector3d mx = X.colwise().mean(), my = Y.colwise().mean();
  const Eigen::MatrixX3d xc = X.rowwise() - mx, yc = Y.rowwise() - my;

  const Eigen::Matrix3d H = xc.transpose() * yc;
  Eigen::JacobiSVD<Eigen::Matrix3d> svd(H, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Eigen::Vector3d sv = svd.singularValues();
  const double var_x = xc.squaredNorm();
  // Fewer than two independent directions leave the rotation undetermined.
  if (var_x <= 1e-300 || sv(0) <= 1e-300 || sv(1) <= 1e-12 * sv(0)) {
    out.translation_only = true;
    out.translation = my - mx;
    out.aligned = X.rowwise() + out.translation;
    return out;
  }
  Eigen::Matrix3d D = Eigen::Matrix3d::Identity();
  if ((svd.matrixV() * svd.matrixU().transpose()).determinant() < 0) D(2, 2) = -1;
  out.rotation = svd.matrixV() * D * svd.matrixU().transpose();
  out.scale = (sv.asDiagonal() * D).trace() / var_x;
  out.translation = my - out.scale * (out.rotation * mx.transpose()).transpose();
  out.aligned = (out.scale * (xc * out.rotation.transpose())).rowwise() + my;
  return out;
}

double mean_point_error(const Eigen::MatrixX3d& a, const Eigen::MatrixX3d& b) {
  if (a.rows() != b.rows() || a.rows() == 0) throw std::invalid_argument("mean_point_error: shape mismatch");
  return (a - b).rowwise().norm().mean();
}

Metrics compute_metrics(const Eigen::MatrixX3d& pred_joints, const Eigen::MatrixX3d& pred_verts,
                        const Eigen::MatrixX3d& gt_joints, const Eigen::MatrixX3d& gt_verts) {
  if (pred_joints.rows() != gt_joints.rows() || pred_verts.rows() != gt_verts.rows()) {
    throw std::invalid_argument("compute_metrics: prediction and ground truth shapes differ");
  }
  const Eigen::RowVector3d pr = pred_joints.row(0), gr = gt_joints.row(0);
  Metrics m;
  m.mpjpe = mean_point_error(pred_joints.rowwise() - pr, gt_joints.rowwise() - gr);
  m.mpve = mean_point_error(pred_verts.rowwise() - pr, gt_verts.rowwise() - gr);
  m.pampjpe = mean_point_error(procrustes_align(pred_joints, gt_joints).aligned, gt_joints);
  return m;
}

}  // namespace tore::mesh
