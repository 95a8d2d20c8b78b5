#include "tore/losses/losses.hpp"

#include <stdexcept>

namespace tore::losses {

template <typename T>
BasicTensor<T> weak_perspective_project(const BasicTensor<T>& points, const BasicTensor<T>& camera) {
  if (points.rank() != 2 || points.dim(1) != 3) throw ShapeError("project: points " + to_string(points.shape()));
  if (camera.numel() != 3) throw ShapeError("project: camera " + to_string(camera.shape()));
  const auto cam = reshape(camera, {1, 3});
  return add_row(mul_scalar(slice_cols(points, 0, 2), slice_cols(cam, 0, 1)), slice_cols(cam, 1, 3));
}

Eigen::MatrixX2d project_points(const Eigen::MatrixX3d& points, double s, double tx, double ty) {
  Eigen::MatrixX2d out = s * points.leftCols<2>();
  out.col(0).array() += tx;
  out.col(1).array() += ty;
  return out;
}

template <typename T>
BasicTensor<T> vertex_loss(const MeshLevels<T>& pred, const MeshLevels<T>& gt) {
  return add(add(l1_mean(pred.low, gt.low), l1_mean(pred.mid, gt.mid)), l1_mean(pred.high, gt.high));
}

template <typename T>
JointLosses<T> joint_losses(const BasicTensor<T>& pred_joints, const BasicTensor<T>& regressed_joints,
                            const BasicTensor<T>& gt_joints3d, const BasicTensor<T>& gt_joints2d,
                            const BasicTensor<T>& camera) {
  return {l1_mean(pred_joints, gt_joints3d), l1_mean(regressed_joints, gt_joints3d),
          l1_mean(weak_perspective_project(regressed_joints, camera), gt_joints2d)};
}

itp::IndicatorGrid body_indicator(const Eigen::MatrixX3d& gt_verts_high, double s, double tx, double ty,
                                  std::size_t height, std::size_t width, double image_size) {
  return itp::indicator_grid(project_points(gt_verts_high, s, tx, ty), height, width, image_size);
}

template <typename T>
LossTerms<T> total_loss(const Prediction<T>& pred, const Target<T>& gt, const LossWeights& w,
                        const itp::IndicatorGrid* body) {
  if (w.pruning < 0 || w.joints2d < 0 || w.verts3d < 0 || w.joints3d < 0 || w.alpha < 0 || w.beta < 0) {
    throw std::invalid_argument("total_loss: weights must be non-negative");
  }
  const auto j = joint_losses(pred.joints3d, pred.regressed_joints3d, gt.joints3d, gt.joints2d, pred.camera);
  const auto v = vertex_loss(pred.verts, gt.verts);
  auto three_d = add(scale(add(j.regressed_joints3d, j.joints3d), w.joints3d), scale(v, w.verts3d));
  LossTerms<T> terms;
  if (pred.mapping.defined() && body) {
    const auto lp = itp::pruning_loss(*body, pred.mapping);
    three_d = add(three_d, scale(lp, w.pruning));
    terms.pruning = static_cast<double>(lp.item());
  }
  terms.total = add(scale(three_d, w.alpha), scale(j.regressed_joints2d, w.joints2d * w.beta));
  terms.joints3d = static_cast<double>(j.joints3d.item());
  terms.regressed_joints3d = static_cast<double>(j.regressed_joints3d.item());
  terms.regressed_joints2d = static_cast<double>(j.regressed_joints2d.item());
  terms.verts3d = static_cast<double>(v.item());
  return terms;
}

#define TORE_INSTANTIATE_LOSSES(T)                                                                              \
  template BasicTensor<T> weak_perspective_project(const BasicTensor<T>&, const BasicTensor<T>&);              \
  template BasicTensor<T> vertex_loss(const MeshLevels<T>&, const MeshLevels<T>&);                             \
  template JointLosses<T> joint_losses(const BasicTensor<T>&, const BasicTensor<T>&, const BasicTensor<T>&,    \
                                       const BasicTensor<T>&, const BasicTensor<T>&);                          \
  template LossTerms<T> total_loss(const Prediction<T>&, const Target<T>&, const LossWeights&,                 \
                                   const itp::IndicatorGrid*);

TORE_INSTANTIATE_LOSSES(float)
TORE_INSTANTIATE_LOSSES(double)

}  // namespace tore::losses
