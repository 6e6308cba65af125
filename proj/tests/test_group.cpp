#include "test_support.hpp"

#include <gtest/gtest.h>

#include <set>

using namespace tightfit;
using namespace tightfit::fixtures;

namespace {

const RotationGroup& ico() {
  static const RotationGroup g = icosahedral_group();
  return g;
}

std::vector<double> random_weights(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> w(60);
  for (double& x : w) x = u(rng);
  return w;
}

Mat3 weighted_sum(const std::vector<double>& w, const RotationGroup& g) {
  Mat3 a = Mat3::Zero();
  for (int j = 0; j < g.size(); ++j) a += w[static_cast<size_t>(j)] * g.elements[static_cast<size_t>(j)];
  return a;
}

}  // namespace

TEST(IcosahedralGroup, SixtyProperRotations) {
  const RotationGroup& g = ico();
  ASSERT_EQ(g.size(), 60);
  EXPECT_LE((g.elements[0] - Mat3::Identity()).cwiseAbs().maxCoeff(), 1e-15);
  for (const Mat3& r : g.elements) {
    EXPECT_LE((r.transpose() * r - Mat3::Identity()).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_NEAR(r.determinant(), 1.0, 1e-12);
  }
}

TEST(IcosahedralGroup, CayleyTableMatchesMatrixProducts) {
  const RotationGroup& g = ico();
  for (int a = 0; a < 60; ++a)
    for (int b = 0; b < 60; ++b) {
      double err = 0;
      const int c = g.snap(g.elements[static_cast<size_t>(a)] * g.elements[static_cast<size_t>(b)], &err);
      EXPECT_EQ(c, g.cayley[static_cast<size_t>(a)][static_cast<size_t>(b)]);
      EXPECT_LT(err, 1e-9);
    }
  for (int a = 0; a < 60; ++a) {
    EXPECT_EQ(g.cayley[static_cast<size_t>(a)][static_cast<size_t>(g.inverse[static_cast<size_t>(a)])], 0);
    EXPECT_EQ(g.cayley[static_cast<size_t>(g.inverse[static_cast<size_t>(a)])][static_cast<size_t>(a)], 0);
  }
}

TEST(IcosahedralGroup, CanonicalOrderIsSortedByAngle) {
  const RotationGroup& g = ico();
  for (int j = 2; j < 60; ++j)
    EXPECT_LE(detail::quantize(detail::rotation_angle(g.elements[static_cast<size_t>(j - 1)])),
              detail::quantize(detail::rotation_angle(g.elements[static_cast<size_t>(j)])));
  const RotationGroup again = icosahedral_group();
  for (int j = 0; j < 60; ++j) EXPECT_TRUE(again.elements[static_cast<size_t>(j)] == g.elements[static_cast<size_t>(j)]);
}

TEST(IcosahedralGroup, ConjugacyClassSizes) {
  const RotationGroup& g = ico();
  std::vector<int> cls(60, -1);
  std::multiset<int> sizes;
  for (int x = 0; x < 60; ++x) {
    if (cls[static_cast<size_t>(x)] >= 0) continue;
    std::set<int> members;
    for (const Mat3& h : g.elements) members.insert(g.snap(h * g.elements[static_cast<size_t>(x)] * h.transpose()));
    for (int m : members) cls[static_cast<size_t>(m)] = x;
    sizes.insert(static_cast<int>(members.size()));
  }
  EXPECT_EQ(sizes, (std::multiset<int>{1, 12, 12, 15, 20}));
}

TEST(GroupPermutation, IdentityBijectionAndComposition) {
  const RotationGroup& g = ico();
  const auto id = group_permutation(g, 0);
  for (int j = 0; j < 60; ++j) EXPECT_EQ(id[static_cast<size_t>(j)], j);
  for (int a = 0; a < 60; ++a) {
    auto p = group_permutation(g, a);
    std::sort(p.begin(), p.end());
    for (int j = 0; j < 60; ++j) EXPECT_EQ(p[static_cast<size_t>(j)], j);
  }
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<int> pick(0, 59);
  for (int trial = 0; trial < 20; ++trial) {
    const int a = pick(rng), b = pick(rng);
    const int ab = g.snap(g.elements[static_cast<size_t>(a)] * g.elements[static_cast<size_t>(b)]);
    const auto pa = group_permutation(g, a), pb = group_permutation(g, b), pab = group_permutation(g, ab);
    for (int j = 0; j < 60; ++j) EXPECT_EQ(pab[static_cast<size_t>(j)], pb[static_cast<size_t>(pa[static_cast<size_t>(j)])]);
    // Independent route: pi_g(j) is the element matching g^T g_j.
    for (int j = 0; j < 60; ++j)
      EXPECT_EQ(pa[static_cast<size_t>(j)],
                g.snap(g.elements[static_cast<size_t>(a)].transpose() * g.elements[static_cast<size_t>(j)]));
  }
}

TEST(EquivDescriptor, IsolatedPointAndMassConservation) {
  const RotationGroup& g = ico();
  Points lone(1, 3);
  lone << 0.1, 0.2, 0.3;
  const EquivFeature f0 = equiv_descriptor(lone, 0.4, {}, g);
  EXPECT_EQ(f0.channels, 32);
  for (double v : f0.values) EXPECT_EQ(v, 0.0);

  const Points cloud = random_cloud(80, 4);
  const EquivFeature f = equiv_descriptor(cloud, 0.4, {}, g);
  const KdTree tree(cloud);
  for (int i = 0; i < 80; ++i) {
    const int neighbours = static_cast<int>(tree.radius(cloud.row(i).transpose(), 0.4).size()) - 1;
    for (int j = 0; j < 60; ++j) {
      double mass = 0;
      for (double v : f.slot(i, j)) mass += v;
      EXPECT_NEAR(mass, neighbours, 1e-9);
    }
  }
}

TEST(EquivDescriptor, PermutationLawAndPoolInvariance) {
  const RotationGroup& g = ico();
  const Points cloud = random_cloud(256, 9);
  const EquivFeature base = equiv_descriptor(cloud, 0.4, {}, g);
  const InvFeature pooled = invariant_pool(base);
  double worst = 0, worst_pool = 0;
  for (int a = 0; a < 60; ++a) {
    const EquivFeature f = equiv_descriptor(cloud * g.elements[static_cast<size_t>(a)].transpose(), 0.4, {}, g);
    const auto perm = group_permutation(g, a);
    for (int i = 0; i < 256; ++i)
      for (int j = 0; j < 60; ++j)
        for (int c = 0; c < 32; ++c)
          worst = std::max(worst, std::abs(f.at(i, j, c) - base.at(i, perm[static_cast<size_t>(j)], c)));
    worst_pool = std::max(worst_pool, (invariant_pool(f) - pooled).cwiseAbs().maxCoeff());
  }
  EXPECT_LE(worst, 1e-9);
  EXPECT_LE(worst_pool, 1e-9);
}

TEST(InvariantPool, ConstantAndZeroFeatures) {
  EquivFeature f;
  f.num_points = 2;
  f.group_size = 60;
  f.channels = 3;
  f.values.assign(2 * 60 * 3, 0.0);
  EXPECT_EQ(invariant_pool(f).cwiseAbs().maxCoeff(), 0.0);
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 60; ++j)
      for (int c = 0; c < 3; ++c) f.at(i, j, c) = 1.5 * i + c;
  const InvFeature p = invariant_pool(f);
  for (int i = 0; i < 2; ++i)
    for (int c = 0; c < 3; ++c) EXPECT_NEAR(p(i, c), 1.5 * i + c, 1e-15);
}

TEST(AverageRotation, OneHotReturnsElementExactly) {
  const RotationGroup& g = ico();
  for (int j = 0; j < 60; ++j) {
    std::vector<double> w(60, 0.0);
    w[static_cast<size_t>(j)] = 1.0;
    EXPECT_TRUE(average_rotation(w, g) == g.elements[static_cast<size_t>(j)]);
    w[static_cast<size_t>(j)] = 1e-3;
    EXPECT_LE((average_rotation(w, g) - g.elements[static_cast<size_t>(j)]).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(AverageRotation, LeftEquivariantUnderPermutedWeights) {
  const RotationGroup& g = ico();
  std::mt19937_64 rng(14);
  const auto w = random_weights(rng);
  const Mat3 r = average_rotation(w, g);
  for (int a = 0; a < 60; ++a) {
    const auto perm = group_permutation(g, a);
    std::vector<double> wp(60);
    for (int j = 0; j < 60; ++j) wp[static_cast<size_t>(j)] = w[static_cast<size_t>(perm[static_cast<size_t>(j)])];
    const Mat3& ga = g.elements[static_cast<size_t>(a)];
    EXPECT_LE((average_rotation(wp, g) - ga * r).cwiseAbs().maxCoeff(), 1e-9);
    EXPECT_LE((decode_direction(average_rotation(wp, g)) - ga * decode_direction(r)).cwiseAbs().maxCoeff(), 1e-9);
  }
}

TEST(AverageRotation, NearestRotationBeatsRandomSearch) {
  const RotationGroup& g = ico();
  std::mt19937_64 rng(15);
  for (int trial = 0; trial < 3; ++trial) {
    const auto w = random_weights(rng);
    const Mat3 a = weighted_sum(w, g);
    const Mat3 r = average_rotation(w, g);
    EXPECT_LE((r.transpose() * r - Mat3::Identity()).cwiseAbs().maxCoeff(), 1e-9);
    EXPECT_NEAR(r.determinant(), 1.0, 1e-9);
    const double ours = (r - a).norm();
    double best = kInf;
    for (int s = 0; s < 100000; ++s) best = std::min(best, (random_rotation(rng) - a).norm());
    EXPECT_GE(best - ours, -1e-3);
  }
}

TEST(AverageRotation, RejectsDegenerateInput) {
  const RotationGroup& g = ico();
  EXPECT_THROW(average_rotation(std::vector<double>(60, 0.0), g), ValidationError);
  EXPECT_THROW(average_rotation(std::vector<double>(60, 1.0), g), NumericalError);  // the group sums to zero
  std::vector<double> bad(60, 0.1);
  bad[3] = std::numeric_limits<double>::infinity();
  EXPECT_THROW(average_rotation(bad, g), ValidationError);
  EXPECT_THROW(average_rotation(std::vector<double>(59, 1.0), g), ValidationError);
}

TEST(DecodeDirection, IdentityFlipAndSeedCheck) {
  EXPECT_TRUE(decode_direction(Mat3::Identity()) == Vec3(0, 0, 1));
  const Mat3 flip = Eigen::AngleAxisd(kPi, Vec3::UnitX()).toRotationMatrix();
  EXPECT_LE((decode_direction(flip) - Vec3(0, 0, -1)).norm(), 1e-12);
  EXPECT_THROW(decode_direction(Mat3::Identity(), Vec3(0, 0, 2)), ValidationError);
  std::mt19937_64 rng(1);
  EXPECT_NEAR(decode_direction(random_rotation(rng)).norm(), 1.0, 1e-12);
}

TEST(EquivarianceSuite, PassesAndCatchesCorruptedTable) {
  const EquivReport ok = run_equivariance_suite(ico(), 64, 3);
  EXPECT_TRUE(ok.pass);
  EXPECT_EQ(ok.elements.size(), 60u);
  EXPECT_FALSE(run_equivariance_suite(corrupt_group(ico()), 64, 3).pass);
}
