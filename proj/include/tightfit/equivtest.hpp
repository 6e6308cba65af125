#pragma once

#include "tightfit/group.hpp"

#include <optional>

namespace tightfit {

struct EquivElementReport {
  int element = 0;
  double descriptor = 0;  // max |F(gX)[i, j] - F(X)[i, pi_g(j)]|
  double pool = 0;        // max |pool(F(gX)) - pool(F(X))|
  double direction = 0;   // max |d(gX)_i - g d(X)_i|
};

struct EquivReport {
  std::vector<EquivElementReport> elements;
  double tolerance = 1e-9;
  double max_descriptor = 0, max_pool = 0, max_direction = 0;
  int skipped_points = 0;  // points whose weighted average is rank deficient (no neighbours)
  bool pass = false;
};

/// Uniform random cloud in the cube [-0.5, 0.5]^3.
inline Points random_cloud(int n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(-0.5, 0.5);
  Points p(n, 3);
  for (int i = 0; i < n; ++i)
    for (int c = 0; c < 3; ++c) p(i, c) = unit(rng);
  return p;
}

/// Per-point direction: scoring weights -> rotation average -> decoded direction.
/// An isolated point has a zero descriptor, uniform weights and a zero group
/// average; such points decode to nullopt.
inline std::vector<std::optional<Vec3>> decode_directions(const EquivFeature& f, const GroupScoring& scoring,
                                                          const RotationGroup& group) {
  std::vector<std::optional<Vec3>> out;
  out.reserve(static_cast<size_t>(f.num_points));
  for (int i = 0; i < f.num_points; ++i) {
    try {
      out.emplace_back(decode_direction(average_rotation(scoring.weights(f, i), group)));
    } catch (const NumericalError&) {
      out.emplace_back(std::nullopt);
    }
  }
  return out;
}

/// Checks the permutation law of the descriptor, the invariance of the pooled
/// feature and the equivariance of decoded directions for every group element.
inline EquivReport run_equivariance_suite(const RotationGroup& group, int n_points, std::uint64_t seed,
                                          double radius = 0.4, const DescriptorGrid& grid = {}) {
  TIGHTFIT_CHECK(n_points >= 1, "equivariance suite needs at least one point");
  const Points cloud = random_cloud(n_points, seed);
  const EquivFeature base = equiv_descriptor(cloud, radius, grid, group);
  const InvFeature base_pool = invariant_pool(base);
  const GroupScoring scoring = GroupScoring::random(grid.channels(), derive_seed(seed, 1), 4.0);
  const auto base_dirs = decode_directions(base, scoring, group);

  EquivReport report;
  report.skipped_points = static_cast<int>(std::count(base_dirs.begin(), base_dirs.end(), std::nullopt));
  bool consistent = report.skipped_points < n_points;
  for (int g = 0; g < group.size(); ++g) {
    const Mat3& rg = group.elements[static_cast<size_t>(g)];
    const Points moved = cloud * rg.transpose();
    const EquivFeature f = equiv_descriptor(moved, radius, grid, group);
    const auto perm = group_permutation(group, g);
    EquivElementReport e;
    e.element = g;
    for (int i = 0; i < n_points; ++i)
      for (int j = 0; j < group.size(); ++j)
        for (int c = 0; c < grid.channels(); ++c)
          e.descriptor = std::max(e.descriptor, std::abs(f.at(i, j, c) - base.at(i, perm[static_cast<size_t>(j)], c)));
    e.pool = (invariant_pool(f) - base_pool).cwiseAbs().maxCoeff();
    const auto dirs = decode_directions(f, scoring, group);
    for (size_t i = 0; i < dirs.size(); ++i) {
      if (dirs[i].has_value() != base_dirs[i].has_value()) consistent = false;
      if (dirs[i] && base_dirs[i]) e.direction = std::max(e.direction, (*dirs[i] - rg * *base_dirs[i]).cwiseAbs().maxCoeff());
    }
    report.max_descriptor = std::max(report.max_descriptor, e.descriptor);
    report.max_pool = std::max(report.max_pool, e.pool);
    report.max_direction = std::max(report.max_direction, e.direction);
    report.elements.push_back(e);
  }
  report.pass = consistent && report.max_descriptor <= report.tolerance && report.max_pool <= report.tolerance &&
                report.max_direction <= report.tolerance;
  return report;
}

/// Negative control: a Cayley table with two columns swapped in every row.
inline RotationGroup corrupt_group(RotationGroup g) {
  for (auto& row : g.cayley) std::swap(row[1], row[2]);
  return g;
}

}  // namespace tightfit
