#pragma once

#include "tightfit/kdtree.hpp"

#include <Eigen/SVD>

#include <random>
#include <span>

namespace tightfit {

/// The 60 rotational symmetries of the icosahedron.
///
/// Ordering: identity first, then by rotation angle, then by rotation axis
/// lexicographically (for half turns the axis sign is fixed so that its first
/// nonzero component is positive).
struct RotationGroup {
  std::vector<Mat3> elements;
  std::vector<std::vector<int>> cayley;  // cayley[a][b] = index of R_a * R_b
  std::vector<int> inverse;

  int size() const { return static_cast<int>(elements.size()); }

  /// Index of the element closest to `r` in Frobenius norm.
  int snap(const Mat3& r, double* error = nullptr) const {
    int best = 0;
    double best_d = kInf;
    for (int i = 0; i < size(); ++i) {
      const double d = (elements[static_cast<size_t>(i)] - r).norm();
      if (d < best_d) {
        best_d = d;
        best = i;
      }
    }
    if (error) *error = best_d;
    return best;
  }
};

namespace detail {

inline double rotation_angle(const Mat3& r) { return std::acos(std::clamp((r.trace() - 1.0) / 2.0, -1.0, 1.0)); }

// Axis with angle in [0, pi]; half-turn axes are sign-normalized.
inline Vec3 canonical_axis(const Mat3& r) {
  const double angle = rotation_angle(r);
  if (angle < 1e-9) return Vec3::Zero();
  Vec3 axis;
  if (kPi - angle < 1e-6) {
    // R = 2 a a^T - I for a half turn
    const Mat3 aat = (r + Mat3::Identity()) / 2.0;
    int col = 0;
    aat.diagonal().maxCoeff(&col);
    axis = aat.col(col).normalized();
  } else {
    axis = Vec3(r(2, 1) - r(1, 2), r(0, 2) - r(2, 0), r(1, 0) - r(0, 1)).normalized();
  }
  if (kPi - angle < 1e-6) {
    for (int c = 0; c < 3; ++c) {
      if (std::abs(axis[c]) > 1e-9) {
        if (axis[c] < 0) axis = -axis;
        break;
      }
    }
  }
  return axis;
}

inline double quantize(double x) { return std::round(x * 1e9) / 1e9; }

}  // namespace detail

inline RotationGroup icosahedral_group() {
  const double phi = (1.0 + std::sqrt(5.0)) / 2.0;
  const Mat3 five = rodrigues(Vec3(0, 1, phi).normalized() * (2 * kPi / 5));
  const Mat3 three = rodrigues(Vec3(1, 1, 1).normalized() * (2 * kPi / 3));
  std::vector<Mat3> found{Mat3::Identity()};
  for (size_t i = 0; i < found.size(); ++i) {
    for (const Mat3& gen : {five, three}) {
      const Mat3 next = gen * found[i];
      bool known = false;
      for (const Mat3& f : found)
        if ((f - next).norm() < 1e-6) known = true;
      if (!known) found.push_back(next);
    }
  }
  if (found.size() != 60) throw NumericalError("icosahedral closure produced " + std::to_string(found.size()) + " elements");

  // Re-orthonormalize, then sort canonically.
  for (Mat3& r : found) {
    Eigen::JacobiSVD<Mat3> svd(r, Eigen::ComputeFullU | Eigen::ComputeFullV);
    r = svd.matrixU() * svd.matrixV().transpose();
  }
  struct Key {
    double angle;
    Vec3 axis;
    Mat3 r;
  };
  std::vector<Key> keys;
  for (const Mat3& r : found)
    keys.push_back({detail::quantize(detail::rotation_angle(r)), detail::canonical_axis(r).unaryExpr(&detail::quantize), r});
  std::sort(keys.begin(), keys.end(), [](const Key& a, const Key& b) {
    if (a.angle != b.angle) return a.angle < b.angle;
    return std::lexicographical_compare(a.axis.data(), a.axis.data() + 3, b.axis.data(), b.axis.data() + 3);
  });

  RotationGroup g;
  for (const Key& k : keys) g.elements.push_back(k.r);
  const int n = g.size();
  g.cayley.assign(static_cast<size_t>(n), std::vector<int>(static_cast<size_t>(n)));
  g.inverse.resize(static_cast<size_t>(n));
  for (int a = 0; a < n; ++a) {
    for (int b = 0; b < n; ++b)
      g.cayley[static_cast<size_t>(a)][static_cast<size_t>(b)] =
          g.snap(g.elements[static_cast<size_t>(a)] * g.elements[static_cast<size_t>(b)]);
    g.inverse[static_cast<size_t>(a)] = g.snap(g.elements[static_cast<size_t>(a)].transpose());
  }
  return g;
}

/// pi_g(j) = index of g^-1 * g_j. Rotating the input by g maps feature slot j to slot pi_g(j).
inline std::vector<int> group_permutation(const RotationGroup& group, int g) {
  TIGHTFIT_CHECK(g >= 0 && g < group.size(), "group element index out of range");
  const auto& row = group.cayley[static_cast<size_t>(group.inverse[static_cast<size_t>(g)])];
  return {row.begin(), row.end()};
}

/// Dense N x O x C tensor (points x group elements x channels).
struct EquivFeature {
  int num_points = 0;
  int group_size = 0;
  int channels = 0;
  std::vector<double> values;

  EquivFeature() = default;
  EquivFeature(int n, int o, int c)
      : num_points(n), group_size(o), channels(c), values(static_cast<size_t>(n) * o * c, 0.0) {}

  double& at(int i, int j, int c) { return values[(static_cast<size_t>(i) * group_size + j) * channels + c]; }
  double at(int i, int j, int c) const { return values[(static_cast<size_t>(i) * group_size + j) * channels + c]; }
  std::span<const double> slot(int i, int j) const {
    return {values.data() + (static_cast<size_t>(i) * group_size + j) * channels, static_cast<size_t>(channels)};
  }
};

/// N x C invariant feature.
using InvFeature = Eigen::MatrixXd;

struct DescriptorGrid {
  int radial = 4;
  int azimuthal = 8;
  int channels() const { return radial * azimuthal; }
};

/// Training-free group-equivariant point descriptor.
///
/// For point i and element g_j, neighbour offsets within `radius` are rotated by
/// g_j^-1 and splatted into a radial x azimuthal histogram with linear
/// interpolation between bin centres (circular in azimuth). Each neighbour
/// contributes total mass 1, so every (i, j) slice sums to the neighbour count.
inline EquivFeature equiv_descriptor(const Points& points, double radius, const DescriptorGrid& grid,
                                     const RotationGroup& group) {
  TIGHTFIT_CHECK(radius > 0, "descriptor radius must be positive");
  TIGHTFIT_CHECK(grid.radial >= 1 && grid.azimuthal >= 1, "descriptor grid must be nonempty");
  const int n = static_cast<int>(points.rows());
  const int o = group.size();
  EquivFeature out(n, o, grid.channels());
  const KdTree tree(points);
  for (int i = 0; i < n; ++i) {
    const Vec3 centre = points.row(i).transpose();
    for (int k : tree.radius(centre, radius)) {
      if (k == i) continue;
      const Vec3 offset = points.row(k).transpose() - centre;
      for (int j = 0; j < o; ++j) {
        const Vec3 local = group.elements[static_cast<size_t>(j)].transpose() * offset;
        const double rc = std::clamp(local.norm() / radius * grid.radial - 0.5, 0.0, grid.radial - 1.0);
        const int r0 = std::min(static_cast<int>(std::floor(rc)), grid.radial - 1);
        const int r1 = std::min(r0 + 1, grid.radial - 1);
        const double rw = rc - r0;
        double ac = (std::atan2(local.y(), local.x()) + kPi) / (2 * kPi) * grid.azimuthal - 0.5;
        if (ac < 0) ac += grid.azimuthal;
        const int a0 = static_cast<int>(std::floor(ac)) % grid.azimuthal;
        const int a1 = (a0 + 1) % grid.azimuthal;
        const double aw = ac - std::floor(ac);
        out.at(i, j, r0 * grid.azimuthal + a0) += (1 - rw) * (1 - aw);
        out.at(i, j, r0 * grid.azimuthal + a1) += (1 - rw) * aw;
        out.at(i, j, r1 * grid.azimuthal + a0) += rw * (1 - aw);
        out.at(i, j, r1 * grid.azimuthal + a1) += rw * aw;
      }
    }
  }
  return out;
}

/// Mean over the group axis.
inline InvFeature invariant_pool(const EquivFeature& f) {
  InvFeature out = InvFeature::Zero(f.num_points, f.channels);
  for (int i = 0; i < f.num_points; ++i)
    for (int j = 0; j < f.group_size; ++j)
      for (int c = 0; c < f.channels; ++c) out(i, c) += f.at(i, j, c);
  if (f.group_size > 0) out /= f.group_size;
  return out;
}

/// Weighted rotation average projected onto SO(3): U diag(1, 1, det(U V^T)) V^T.
inline Mat3 average_rotation(std::span<const double> weights, const RotationGroup& group) {
  TIGHTFIT_CHECK(static_cast<int>(weights.size()) == group.size(), "need one weight per group element");
  Mat3 a = Mat3::Zero();
  int nonzero = 0, last = -1;
  for (int j = 0; j < group.size(); ++j) {
    const double w = weights[static_cast<size_t>(j)];
    TIGHTFIT_CHECK(std::isfinite(w), "rotation weights must be finite");
    if (w != 0.0) {
      ++nonzero;
      last = j;
    }
    a += w * group.elements[static_cast<size_t>(j)];
  }
  TIGHTFIT_CHECK(nonzero > 0, "rotation weights are all zero");
  // A positive multiple of one element projects onto that element; skip the SVD rounding.
  if (nonzero == 1 && weights[static_cast<size_t>(last)] > 0) return group.elements[static_cast<size_t>(last)];
  Eigen::JacobiSVD<Mat3> svd(a, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Eigen::Vector3d sv = svd.singularValues();
  if (sv[1] < 1e-9) throw NumericalError("degenerate rotation average: rank below 2");
  const Mat3 u = svd.matrixU(), v = svd.matrixV();
  Mat3 d = Mat3::Identity();
  d(2, 2) = (u * v.transpose()).determinant() < 0 ? -1.0 : 1.0;
  return u * d * v.transpose();
}

inline Vec3 default_direction_seed() { return Vec3::UnitZ(); }

/// d = R * v_s for a unit seed vector v_s.
inline Vec3 decode_direction(const Mat3& rotation, const Vec3& seed = default_direction_seed()) {
  TIGHTFIT_CHECK(std::abs(seed.norm() - 1.0) <= 1e-9, "direction seed vector must be unit length");
  return rotation * seed;
}

/// Fixed per-element scoring: softmax over the group axis of <f_ij, a> / temperature.
/// Any per-slot function of the feature keeps the weights permutation-equivariant.
struct GroupScoring {
  Eigen::VectorXd projection;
  double temperature = 1.0;

  static GroupScoring random(int channels, std::uint64_t seed, double temperature = 1.0) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    GroupScoring s;
    s.projection.resize(channels);
    for (int c = 0; c < channels; ++c) s.projection[c] = normal(rng);
    s.temperature = temperature;
    return s;
  }

  std::vector<double> weights(const EquivFeature& f, int point) const {
    std::vector<double> logits(static_cast<size_t>(f.group_size));
    for (int j = 0; j < f.group_size; ++j) {
      const auto slot = f.slot(point, j);
      logits[static_cast<size_t>(j)] =
          Eigen::Map<const Eigen::VectorXd>(slot.data(), static_cast<Eigen::Index>(slot.size())).dot(projection) /
          temperature;
    }
    const double mx = *std::max_element(logits.begin(), logits.end());
    double sum = 0;
    for (double& l : logits) sum += (l = std::exp(l - mx));
    for (double& l : logits) l /= sum;
    return logits;
  }
};

}  // namespace tightfit
