#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <Eigen/Sparse>

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

namespace tightfit {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Points = Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor>;
using Faces = Eigen::Matrix<int, Eigen::Dynamic, 3, Eigen::RowMajor>;
using SparseRows = Eigen::SparseMatrix<double, Eigen::RowMajor>;

/// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed input: wrong dimensions, broken invariants, bad config values.
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// A numerical procedure could not produce a usable answer.
class NumericalError : public Error {
 public:
  using Error::Error;
};

#define TIGHTFIT_CHECK(cond, msg)                        \
  do {                                                   \
    if (!(cond)) throw ::tightfit::ValidationError(msg); \
  } while (0)

inline constexpr double kPi = 3.14159265358979323846;
inline constexpr double kInf = std::numeric_limits<double>::infinity();

inline Mat3 skew(const Vec3& v) {
  Mat3 m;
  m << 0, -v.z(), v.y(), v.z(), 0, -v.x(), -v.y(), v.x(), 0;
  return m;
}

/// Axis-angle to rotation matrix. Below 1e-8 rad the second-order series is used.
inline Mat3 rodrigues(const Vec3& aa) {
  const double angle = aa.norm();
  const Mat3 k = skew(aa);
  if (angle < 1e-8) return Mat3::Identity() + k + 0.5 * k * k;
  const double s = std::sin(angle) / angle;
  const double c = (1.0 - std::cos(angle)) / (angle * angle);
  return Mat3::Identity() + s * k + c * k * k;
}

/// dR/d(aa_c) for c = 0,1,2.
inline std::array<Mat3, 3> rodrigues_derivatives(const Vec3& aa) {
  std::array<Mat3, 3> out;
  const double angle2 = aa.squaredNorm();
  if (angle2 < 1e-16) {
    // first-order expansion around zero
    for (int c = 0; c < 3; ++c) {
      const Mat3 e = skew(Vec3::Unit(c));
      out[c] = e + 0.5 * (e * skew(aa) + skew(aa) * e);
    }
    return out;
  }
  const Mat3 r = rodrigues(aa);
  const Mat3 i_minus_r = Mat3::Identity() - r;
  for (int c = 0; c < 3; ++c) {
    const Vec3 col = aa.cross(i_minus_r.col(c));
    out[c] = (aa[c] * skew(aa) + skew(col)) / angle2 * r;
  }
  return out;
}

/// Rotation matrix to axis-angle with angle in [0, pi].
inline Vec3 rotation_log(const Mat3& r) {
  Eigen::AngleAxisd aa(r);
  return aa.axis() * aa.angle();
}

/// Reduce an axis-angle vector so that its magnitude is below 2*pi.
inline Vec3 wrap_axis_angle(const Vec3& aa) {
  const double angle = aa.norm();
  if (angle < 2.0 * kPi) return aa;
  const double wrapped = std::fmod(angle, 2.0 * kPi);
  return aa * (wrapped / angle);
}

inline bool all_finite(const Eigen::Ref<const Eigen::MatrixXd>& m) { return m.allFinite(); }

/// Independent RNG stream seed for (seed, stream), via one splitmix64 round.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace tightfit
