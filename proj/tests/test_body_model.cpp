#include "test_support.hpp"

#include <gtest/gtest.h>

using namespace tightfit;
using tightfit::fixtures::stick_body;

namespace {

BodyParams random_params(const BodyTemplate& m, std::mt19937_64& rng, double theta_max = 0.3) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  BodyParams p = BodyParams::zeros(m);
  for (int k = 0; k < m.shape_dim(); ++k) p.beta[k] = u(rng);
  for (int j = 0; j < m.num_joints(); ++j) {
    const Vec3 axis = fixtures::random_vec(rng).normalized();
    p.theta.segment<3>(3 * j) = axis * theta_max * std::abs(u(rng));
  }
  p.t = fixtures::random_vec(rng, 0.5);
  return p;
}

MarkerSet random_markers(const BodyTemplate& m, int k, std::uint64_t seed) {
  return MarkerSet{sample_surface(m.rest_trimesh(), k, seed)};
}

Eigen::MatrixXd dense(const SparseRows& s) { return Eigen::MatrixXd(s); }

}  // namespace

TEST(StickModel, DefaultPassesTemplateInvariants) {
  const BodyTemplate& m = stick_body();
  EXPECT_NO_THROW(validate_template(m));
  EXPECT_EQ(m.num_joints(), 24);
  EXPECT_EQ(m.shape_dim(), 10);
  EXPECT_TRUE(is_closed_manifold(m.rest_trimesh()));
  const Eigen::VectorXd rows = dense(m.skinning_weights).rowwise().sum();
  EXPECT_LE((rows.array() - 1.0).abs().maxCoeff(), 1e-9);
  EXPECT_GE(dense(m.skinning_weights).minCoeff(), 0.0);
}

TEST(StickModel, DeterministicAndRefinable) {
  EXPECT_TRUE(make_stick_model() == stick_body());
  StickConfig finer;
  finer.subdivision = 1;
  EXPECT_GT(make_stick_model(finer).num_vertices(), stick_body().num_vertices());
}

TEST(StickModel, ZeroRadiusIsRejected) {
  StickConfig bad;
  bad.radius_scale = 0.0;
  EXPECT_THROW(make_stick_model(bad), ValidationError);
}

TEST(RestMesh, IdentityAndLinearity) {
  const BodyTemplate& m = stick_body();
  const Eigen::VectorXd zero_beta = Eigen::VectorXd::Zero(m.shape_dim());
  const Eigen::VectorXd zero_theta = Eigen::VectorXd::Zero(3 * m.num_joints());
  EXPECT_TRUE(rest_mesh(m, zero_beta, zero_theta) == m.template_vertices);

  Eigen::VectorXd e1 = zero_beta;
  e1[0] = 1.0;
  const Points slab = unflatten(m.shape_basis.col(0));
  EXPECT_LE((rest_mesh(m, e1, zero_theta) - (m.template_vertices + slab)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(RestMesh, TwoCoefficientsMatchDenseSum) {
  const BodyTemplate& m = stick_body();
  Eigen::VectorXd beta = Eigen::VectorXd::Zero(m.shape_dim());
  beta[2] = 0.7;
  beta[5] = -1.3;
  Points oracle = m.template_vertices;
  for (int v = 0; v < m.num_vertices(); ++v)
    for (int c = 0; c < 3; ++c) oracle(v, c) += 0.7 * m.shape_basis(3 * v + c, 2) - 1.3 * m.shape_basis(3 * v + c, 5);
  EXPECT_LE((rest_mesh(m, beta, Eigen::VectorXd::Zero(3 * m.num_joints())) - oracle).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(RestMesh, WrongLengthsAreRejected) {
  const BodyTemplate& m = stick_body();
  EXPECT_THROW(rest_mesh(m, Eigen::VectorXd::Zero(3), Eigen::VectorXd::Zero(3 * m.num_joints())), ValidationError);
  EXPECT_THROW(rest_mesh(m, Eigen::VectorXd::Zero(m.shape_dim()), Eigen::VectorXd::Zero(5)), ValidationError);
}

TEST(RegressJoints, OneHotUniformAndDense) {
  BodyTemplate m = stick_body();
  const int nv = m.num_vertices();
  Eigen::MatrixXd reg = Eigen::MatrixXd::Zero(m.num_joints(), nv);
  reg(0, 17) = 1.0;
  reg.row(1).setConstant(1.0 / nv);
  std::mt19937_64 rng(4);
  std::uniform_int_distribution<int> pick(0, nv - 1);
  std::uniform_real_distribution<double> w(0.0, 1.0);
  for (int j = 2; j < m.num_joints(); ++j)
    for (int k = 0; k < 5; ++k) reg(j, pick(rng)) += w(rng);
  m.joint_regressor = reg.sparseView();
  const Points joints = regress_joints(m, m.template_vertices);
  EXPECT_LE((joints.row(0) - m.template_vertices.row(17)).norm(), 1e-12);
  EXPECT_LE((joints.row(1) - m.template_vertices.colwise().mean()).norm(), 1e-12);
  const Eigen::MatrixXd oracle = reg * Eigen::MatrixXd(m.template_vertices);
  EXPECT_LE((Eigen::MatrixXd(joints) - oracle).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(PoseMesh, IdentityPoseAndTranslation) {
  const BodyTemplate& m = stick_body();
  BodyParams p = BodyParams::zeros(m);
  EXPECT_LE((pose_mesh(m, p) - m.template_vertices).cwiseAbs().maxCoeff(), 1e-12);
  p.t = Vec3(1, 2, 3);
  const Points moved = m.template_vertices.rowwise() + p.t.transpose();
  EXPECT_LE((pose_mesh(m, p) - moved).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(PoseMesh, ZeroThetaEqualsRestPlusTranslation) {
  const BodyTemplate& m = stick_body();
  std::mt19937_64 rng(2);
  BodyParams p = random_params(m, rng);
  p.theta.setZero();
  const Points expected = rest_mesh(m, p.beta, p.theta).rowwise() + p.t.transpose();
  EXPECT_TRUE(pose_mesh(m, p) == expected);
}

TEST(PoseMesh, RootRotationIsRigidAboutRootJoint) {
  const BodyTemplate& m = stick_body();
  std::mt19937_64 rng(3);
  BodyParams p = BodyParams::zeros(m);
  p.beta = random_params(m, rng).beta;
  p.theta.segment<3>(0) = Vec3(0.3, -1.1, 0.4);
  p.t = Vec3(0.1, 0.2, -0.3);
  const Points rest = rest_mesh(m, p.beta, p.theta);
  const Vec3 root = regress_joints(m, rest).row(0).transpose();
  const Mat3 r = Eigen::AngleAxisd(p.theta.segment<3>(0).norm(), p.theta.segment<3>(0).normalized()).toRotationMatrix();
  Points oracle(rest.rows(), 3);
  for (Eigen::Index v = 0; v < rest.rows(); ++v)
    oracle.row(v) = (r * (rest.row(v).transpose() - root) + root + p.t).transpose();
  EXPECT_LE((pose_mesh(m, p) - oracle).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(PoseMesh, CommutesWithGlobalRigidMotion) {
  const BodyTemplate& m = stick_body();
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 5; ++trial) {
    const BodyParams p = random_params(m, rng);
    const Mat3 r0 = fixtures::random_rotation(rng);
    const Vec3 t0 = fixtures::random_vec(rng);
    const Points moved = (pose_mesh(m, p) * r0.transpose()).rowwise() + t0.transpose();

    const Vec3 root = regress_joints(m, rest_mesh(m, p.beta, p.theta)).row(0).transpose();
    BodyParams q = p;
    q.theta.segment<3>(0) = rotation_log(r0 * rodrigues(p.theta.segment<3>(0)));
    q.t = r0 * (root + p.t) + t0 - root;
    EXPECT_LE((pose_mesh(m, q) - moved).cwiseAbs().maxCoeff(), 1e-9);
  }
}

TEST(PoseMesh, InvariantToJointRelabelling) {
  const BodyTemplate& m = stick_body();
  const int nj = m.num_joints();
  // Reverse the non-root joint indices; the kinematic tree stays the same.
  std::vector<int> perm(static_cast<size_t>(nj));
  perm[0] = 0;
  for (int j = 1; j < nj; ++j) perm[static_cast<size_t>(j)] = nj - j;
  BodyTemplate q = m;
  Eigen::MatrixXd reg(nj, m.num_vertices()), skin(m.num_vertices(), nj);
  const Eigen::MatrixXd reg0 = dense(m.joint_regressor), skin0 = dense(m.skinning_weights);
  for (int j = 0; j < nj; ++j) {
    const int pj = perm[static_cast<size_t>(j)];
    reg.row(pj) = reg0.row(j);
    skin.col(pj) = skin0.col(j);
    const int parent = m.parents[static_cast<size_t>(j)];
    q.parents[static_cast<size_t>(pj)] = parent < 0 ? -1 : perm[static_cast<size_t>(parent)];
  }
  q.joint_regressor = reg.sparseView();
  q.skinning_weights = skin.sparseView();

  std::mt19937_64 rng(6);
  const BodyParams p = random_params(m, rng);
  BodyParams pp = p;
  for (int j = 0; j < nj; ++j) pp.theta.segment<3>(3 * perm[static_cast<size_t>(j)]) = p.theta.segment<3>(3 * j);
  EXPECT_LE((pose_mesh(m, p) - pose_mesh(q, pp)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(PoseMesh, NonFiniteParamsAreRejected) {
  BodyParams p = BodyParams::zeros(stick_body());
  p.theta[4] = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(pose_mesh(stick_body(), p), ValidationError);
}

TEST(Rodrigues, SmallAngleSeriesIsContinuous) {
  const Vec3 axis = Vec3(1, 2, 3).normalized();
  for (double a : {1e-12, 1e-9, 1e-7, 1e-4}) {
    const Mat3 exact = Eigen::AngleAxisd(a, axis).toRotationMatrix();
    EXPECT_LE((rodrigues(a * axis) - exact).cwiseAbs().maxCoeff(), 1e-14);
  }
}

TEST(MarkerPositions, CornerCentroidAndInterpolationOracle) {
  const BodyTemplate& m = stick_body();
  const TriMesh rest = m.rest_trimesh();
  MarkerSet markers;
  markers.sites.push_back(make_sample(rest, 10, Vec3(1, 0, 0)));
  markers.sites.push_back(make_sample(rest, 20, Vec3(1, 1, 1) / 3.0));
  for (const auto& s : sample_surface(rest, 8, 1)) markers.sites.push_back(s);

  const BodyParams zero = BodyParams::zeros(m);
  const Points at_rest = marker_positions(m, zero, markers);
  EXPECT_LE((at_rest.row(0) - m.template_vertices.row(m.faces(10, 0))).norm(), 1e-12);
  const Vec3 centroid = (rest.corner(20, 0) + rest.corner(20, 1) + rest.corner(20, 2)) / 3.0;
  EXPECT_LE((at_rest.row(1).transpose() - centroid).norm(), 1e-12);

  std::mt19937_64 rng(7);
  const BodyParams p = random_params(m, rng);
  const Points posed = pose_mesh(m, p);
  const Points got = marker_positions(m, p, markers);
  for (int k = 0; k < markers.size(); ++k) {
    const auto& s = markers.sites[static_cast<size_t>(k)];
    Vec3 manual = Vec3::Zero();
    for (int c = 0; c < 3; ++c) manual += s.bary[c] * posed.row(m.faces(s.face, c)).transpose();
    EXPECT_LE((got.row(k).transpose() - manual).norm(), 1e-12);
  }
}

TEST(MarkerPositions, FaceOutOfRangeIsRejected) {
  MarkerSet bad;
  SurfaceSample s;
  s.face = stick_body().faces.rows() + 3;
  s.bary = Vec3(1, 0, 0);
  bad.sites.push_back(s);
  EXPECT_THROW(marker_positions(stick_body(), BodyParams::zeros(stick_body()), bad), ValidationError);
}

TEST(MarkerJacobian, TranslationAndShapeBlocks) {
  const BodyTemplate& m = stick_body();
  const MarkerSet markers = random_markers(m, 12, 3);
  std::mt19937_64 rng(8);
  const Eigen::MatrixXd jac = marker_jacobian(m, random_params(m, rng), markers);
  const int t0 = m.shape_dim() + 3 * m.num_joints();
  for (int k = 0; k < markers.size(); ++k)
    EXPECT_LE((jac.block(3 * k, t0, 3, 3) - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff(), 1e-15);

  const Eigen::MatrixXd rest_jac = marker_jacobian(m, BodyParams::zeros(m), markers);
  for (int k = 0; k < markers.size(); ++k) {
    const auto& s = markers.sites[static_cast<size_t>(k)];
    for (int b = 0; b < m.shape_dim(); ++b) {
      Vec3 oracle = Vec3::Zero();
      for (int c = 0; c < 3; ++c) oracle += s.bary[c] * m.shape_basis.block<3, 1>(3 * m.faces(s.face, c), b);
      EXPECT_LE((rest_jac.block(3 * k, b, 3, 1) - oracle).norm(), 1e-12);
    }
  }
}

TEST(MarkerJacobian, MatchesCentralDifferencesOver100Draws) {
  const BodyTemplate& m = stick_body();
  std::mt19937_64 rng(11);
  double worst = 0;
  for (int draw = 0; draw < 100; ++draw) {
    const BodyParams p = random_params(m, rng, 1.0);
    const MarkerSet markers = random_markers(m, 6, 100 + draw);
    const Eigen::MatrixXd jac = marker_jacobian(m, p, markers);
    auto f = [&](const Eigen::VectorXd& x) {
      return flatten(marker_positions(m, BodyParams::unpack(x, m.shape_dim(), m.num_joints()), markers));
    };
    worst = std::max(worst, fixtures::relative_max_error(jac, fixtures::numeric_jacobian(f, p.pack(), 1e-5)));
  }
  EXPECT_LE(worst, 1e-4);
}
