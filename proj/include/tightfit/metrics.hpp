#pragma once

#include "tightfit/kdtree.hpp"

namespace tightfit {

/// Errors in centimetres for 1 model unit = 1 m.
inline constexpr double kCentimetres = 100.0;

/// Mean distance between corresponding vertices, in cm.
inline double v2v(const Points& pred, const Points& gt) {
  if (pred.rows() != gt.rows()) throw ValidationError("v2v needs equal vertex counts");
  TIGHTFIT_CHECK(pred.rows() > 0, "v2v needs at least one vertex");
  return (pred - gt).rowwise().norm().mean() * kCentimetres;
}

/// Mean per-joint position error, in cm, without alignment.
inline double mpjpe(const Points& pred, const Points& gt) {
  if (pred.rows() != gt.rows()) throw ValidationError("mpjpe needs equal joint counts");
  TIGHTFIT_CHECK(pred.rows() > 0, "mpjpe needs at least one joint");
  return (pred - gt).rowwise().norm().mean() * kCentimetres;
}

/// One-sided mean nearest-neighbour distance from `from` to `to` (model units).
inline double mean_nearest(const Points& from, const KdTree& to) {
  double sum = 0;
  for (Eigen::Index i = 0; i < from.rows(); ++i) sum += to.nearest(from.row(i).transpose()).second;
  return sum / static_cast<double>(from.rows());
}

/// Half the sum of both mean nearest-neighbour distances, in cm.
inline double chamfer_bidirectional(const Points& a, const Points& b) {
  TIGHTFIT_CHECK(a.rows() > 0 && b.rows() > 0, "chamfer distance needs two nonempty point sets");
  return 0.5 * (mean_nearest(a, KdTree(b)) + mean_nearest(b, KdTree(a))) * kCentimetres;
}

struct AngularError {
  double mean = 0;
  double median = 0;  // lower middle value for even counts
};

/// Per-point 1 - cos between direction sets.
inline AngularError angular_error(const std::vector<Vec3>& pred, const std::vector<Vec3>& gt) {
  TIGHTFIT_CHECK(pred.size() == gt.size(), "angular error needs aligned direction sets");
  TIGHTFIT_CHECK(!pred.empty(), "angular error needs at least one direction");
  std::vector<double> err(pred.size());
  for (size_t i = 0; i < pred.size(); ++i) {
    const double np = pred[i].norm(), ng = gt[i].norm();
    if (!(np > 0) || !(ng > 0)) throw ValidationError("angular error on a zero-length direction");
    err[i] = 1.0 - std::clamp(pred[i].dot(gt[i]) / (np * ng), -1.0, 1.0);
  }
  AngularError out;
  for (double e : err) out.mean += e;
  out.mean /= static_cast<double>(err.size());
  const size_t mid = (err.size() - 1) / 2;
  std::nth_element(err.begin(), err.begin() + static_cast<std::ptrdiff_t>(mid), err.end());
  out.median = err[mid];
  return out;
}

/// Per-coefficient mean absolute error over a batch of shape vectors.
inline std::vector<double> shape_mae(const std::vector<Eigen::VectorXd>& pred, const std::vector<Eigen::VectorXd>& gt,
                                     int n_coeffs = 3) {
  TIGHTFIT_CHECK(pred.size() == gt.size() && !pred.empty(), "shape MAE needs equally sized nonempty batches");
  TIGHTFIT_CHECK(n_coeffs >= 1, "shape MAE needs at least one coefficient");
  std::vector<double> out(static_cast<size_t>(n_coeffs), 0.0);
  for (size_t i = 0; i < pred.size(); ++i) {
    if (pred[i].size() < n_coeffs || gt[i].size() < n_coeffs) throw ValidationError("shape vector shorter than n_coeffs");
    for (int c = 0; c < n_coeffs; ++c) out[static_cast<size_t>(c)] += std::abs(pred[i][c] - gt[i][c]);
  }
  for (double& v : out) v /= static_cast<double>(pred.size());
  return out;
}

inline std::vector<double> shape_mae(const Eigen::VectorXd& pred, const Eigen::VectorXd& gt, int n_coeffs = 3) {
  return shape_mae(std::vector<Eigen::VectorXd>{pred}, std::vector<Eigen::VectorXd>{gt}, n_coeffs);
}

struct MetricReport {
  double v2v_cm = 0;
  double mpjpe_cm = 0;
  double chamfer_cm = 0;
  double angular_mean = 0;
  double angular_median = 0;
  std::vector<double> shape_mae;
};

}  // namespace tightfit
