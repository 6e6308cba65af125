#pragma once

#include "tightfit/mesh.hpp"

#include <optional>

namespace tightfit {

/// Statistical articulated body: rest mesh, linear shape and pose-corrective
/// bases, joint regressor, skinning weights and kinematic tree.
///
/// Basis layout: row 3*v + c holds coordinate c of vertex v; column s is one slab.
/// Pose-corrective features are the row-major entries of (R_j - I) for every
/// non-root joint j, in joint index order (9 columns per joint).
struct BodyTemplate {
  Points template_vertices;
  Faces faces;
  Eigen::MatrixXd shape_basis;
  Eigen::MatrixXd pose_corrective_basis;
  SparseRows joint_regressor;   // J x V
  SparseRows skinning_weights;  // V x J
  std::vector<int> parents;     // -1 marks the root

  int num_vertices() const { return static_cast<int>(template_vertices.rows()); }
  int num_joints() const { return static_cast<int>(parents.size()); }
  int shape_dim() const { return static_cast<int>(shape_basis.cols()); }
  int num_params() const { return shape_dim() + 3 * num_joints() + 3; }
  bool has_pose_correctives() const { return pose_corrective_basis.size() > 0; }

  TriMesh rest_trimesh() const { return TriMesh{template_vertices, faces}; }

  bool operator==(const BodyTemplate& o) const {
    auto same = [](const auto& a, const auto& b) {
      return a.rows() == b.rows() && a.cols() == b.cols() && (a.size() == 0 || a == b);
    };
    auto same_sparse = [&](const SparseRows& a, const SparseRows& b) {
      return a.rows() == b.rows() && a.cols() == b.cols() && same(Eigen::MatrixXd(a), Eigen::MatrixXd(b));
    };
    return same(template_vertices, o.template_vertices) && same(faces, o.faces) && same(shape_basis, o.shape_basis) &&
           same(pose_corrective_basis, o.pose_corrective_basis) && same_sparse(joint_regressor, o.joint_regressor) &&
           same_sparse(skinning_weights, o.skinning_weights) && parents == o.parents;
  }
};

struct BodyParams {
  Eigen::VectorXd beta;
  Eigen::VectorXd theta;  // 3 per joint, axis-angle, radians
  Vec3 t = Vec3::Zero();

  static BodyParams zeros(const BodyTemplate& model) {
    return {Eigen::VectorXd::Zero(model.shape_dim()), Eigen::VectorXd::Zero(3 * model.num_joints()), Vec3::Zero()};
  }

  Vec3 joint_rotation(int j) const { return theta.segment<3>(3 * j); }

  /// Packs as [beta | theta | t].
  Eigen::VectorXd pack() const {
    Eigen::VectorXd x(beta.size() + theta.size() + 3);
    x << beta, theta, t;
    return x;
  }

  static BodyParams unpack(const Eigen::VectorXd& x, int shape_dim, int num_joints) {
    BodyParams p;
    p.beta = x.head(shape_dim);
    p.theta = x.segment(shape_dim, 3 * num_joints);
    p.t = x.tail<3>();
    return p;
  }

  bool operator==(const BodyParams& o) const { return beta == o.beta && theta == o.theta && t == o.t; }
};

/// Surface sites on the body template (face + barycentric). Positions and
/// normals stored on the samples refer to the mesh they were created on.
struct MarkerSet {
  std::vector<SurfaceSample> sites;
  int size() const { return static_cast<int>(sites.size()); }
};

/// Joint indices in an order where each parent precedes its children.
inline std::vector<int> topological_order(const std::vector<int>& parents) {
  const int n = static_cast<int>(parents.size());
  std::vector<std::vector<int>> children(static_cast<size_t>(n));
  int root = -1;
  for (int j = 0; j < n; ++j) {
    if (parents[static_cast<size_t>(j)] < 0) {
      if (root >= 0) throw ValidationError("kinematic tree has more than one root");
      root = j;
    } else {
      TIGHTFIT_CHECK(parents[static_cast<size_t>(j)] < n, "parent index out of range");
      children[static_cast<size_t>(parents[static_cast<size_t>(j)])].push_back(j);
    }
  }
  TIGHTFIT_CHECK(root >= 0, "kinematic tree has no root");
  std::vector<int> order{root};
  for (size_t i = 0; i < order.size(); ++i)
    for (int c : children[static_cast<size_t>(order[i])]) order.push_back(c);
  TIGHTFIT_CHECK(static_cast<int>(order.size()) == n, "kinematic tree has a cycle or unreachable joints");
  return order;
}

inline void validate_template(const BodyTemplate& m) {
  const int nv = m.num_vertices();
  const int nj = m.num_joints();
  TIGHTFIT_CHECK(nv > 0 && nj > 0, "template has no vertices or joints");
  TIGHTFIT_CHECK(m.template_vertices.allFinite(), "template vertices must be finite");
  validate_mesh(TriMesh{m.template_vertices, m.faces});
  TIGHTFIT_CHECK(m.shape_basis.rows() == 3 * nv, "shape basis row count must be 3 * vertex count");
  TIGHTFIT_CHECK(m.shape_basis.allFinite(), "shape basis must be finite");
  if (m.has_pose_correctives()) {
    TIGHTFIT_CHECK(m.pose_corrective_basis.rows() == 3 * nv && m.pose_corrective_basis.cols() == 9 * (nj - 1),
                   "pose corrective basis must be (3V) x 9(J-1)");
  }
  TIGHTFIT_CHECK(m.joint_regressor.rows() == nj && m.joint_regressor.cols() == nv, "joint regressor must be J x V");
  TIGHTFIT_CHECK(m.skinning_weights.rows() == nv && m.skinning_weights.cols() == nj, "skinning weights must be V x J");
  for (int v = 0; v < nv; ++v) {
    double sum = 0;
    for (SparseRows::InnerIterator it(m.skinning_weights, v); it; ++it) {
      TIGHTFIT_CHECK(it.value() >= 0.0, "skinning weights must be nonnegative");
      sum += it.value();
    }
    TIGHTFIT_CHECK(std::abs(sum - 1.0) <= 1e-9, "skinning weight row does not sum to 1");
  }
  topological_order(m.parents);
}

namespace detail {

inline int pose_feature_slot(const std::vector<int>& parents, int joint) {
  int slot = 0;
  for (int j = 0; j < joint; ++j)
    if (parents[static_cast<size_t>(j)] >= 0) ++slot;
  return slot;
}

}  // namespace detail

inline void check_params(const BodyTemplate& m, const BodyParams& p) {
  if (p.beta.size() != m.shape_dim())
    throw ValidationError("beta has length " + std::to_string(p.beta.size()) + ", expected " +
                          std::to_string(m.shape_dim()));
  if (p.theta.size() != 3 * m.num_joints())
    throw ValidationError("theta has length " + std::to_string(p.theta.size()) + ", expected " +
                          std::to_string(3 * m.num_joints()));
  TIGHTFIT_CHECK(p.beta.allFinite() && p.theta.allFinite() && p.t.allFinite(), "body parameters must be finite");
}

/// Wraps every per-joint axis-angle below 2*pi.
inline BodyParams normalize_params(BodyParams p) {
  for (Eigen::Index j = 0; j + 2 < p.theta.size(); j += 3) p.theta.segment<3>(j) = wrap_axis_angle(p.theta.segment<3>(j));
  return p;
}

/// Pose-corrective feature vector: row-major (R_j - I) of each non-root joint.
inline Eigen::VectorXd pose_features(const BodyTemplate& m, const Eigen::VectorXd& theta) {
  Eigen::VectorXd f(9 * (m.num_joints() - 1));
  int slot = 0;
  for (int j = 0; j < m.num_joints(); ++j) {
    if (m.parents[static_cast<size_t>(j)] < 0) continue;
    const Mat3 r = rodrigues(theta.segment<3>(3 * j)) - Mat3::Identity();
    for (int a = 0; a < 3; ++a)
      for (int b = 0; b < 3; ++b) f[9 * slot + 3 * a + b] = r(a, b);
    ++slot;
  }
  return f;
}

inline Points unflatten(const Eigen::VectorXd& flat) {
  return Eigen::Map<const Points>(flat.data(), flat.size() / 3, 3);
}

inline Eigen::VectorXd flatten(const Points& p) { return Eigen::Map<const Eigen::VectorXd>(p.data(), p.size()); }

/// T(beta, theta) = template + B_S(beta) + B_P(theta).
inline Points rest_mesh(const BodyTemplate& m, const Eigen::VectorXd& beta, const Eigen::VectorXd& theta) {
  if (beta.size() != m.shape_dim()) throw ValidationError("beta length does not match the shape basis");
  if (theta.size() != 3 * m.num_joints()) throw ValidationError("theta length must be 3 * joint count");
  Eigen::VectorXd flat = flatten(m.template_vertices) + m.shape_basis * beta;
  if (m.has_pose_correctives()) flat += m.pose_corrective_basis * pose_features(m, theta);
  return unflatten(flat);
}

inline Points regress_joints(const BodyTemplate& m, const Points& rest_vertices) {
  TIGHTFIT_CHECK(rest_vertices.rows() == m.num_vertices(), "rest vertex count does not match the regressor");
  return Points(m.joint_regressor * rest_vertices);
}

/// Everything the skinning and its derivatives need for one parameter vector.
struct PoseState {
  Points rest;         // shaped (and pose-corrected) rest vertices
  Points joints;       // regressed rest joints, from the shaped mesh without correctives
  std::vector<Mat3> local;
  std::vector<Mat3> world;
  Points posed_joints;  // world joint positions before global translation
  std::vector<int> order;
};

inline PoseState compute_pose_state(const BodyTemplate& m, const BodyParams& params) {
  check_params(m, params);
  PoseState s;
  s.rest = rest_mesh(m, params.beta, params.theta);
  const Eigen::VectorXd shaped = flatten(m.template_vertices) + m.shape_basis * params.beta;
  s.joints = Points(m.joint_regressor * unflatten(shaped));
  const int nj = m.num_joints();
  s.order = topological_order(m.parents);
  s.local.resize(static_cast<size_t>(nj));
  s.world.resize(static_cast<size_t>(nj));
  s.posed_joints.resize(nj, 3);
  for (int j : s.order) {
    s.local[static_cast<size_t>(j)] = rodrigues(params.joint_rotation(j));
    const int p = m.parents[static_cast<size_t>(j)];
    if (p < 0) {
      s.world[static_cast<size_t>(j)] = s.local[static_cast<size_t>(j)];
      s.posed_joints.row(j) = s.joints.row(j);
    } else {
      s.world[static_cast<size_t>(j)] = s.world[static_cast<size_t>(p)] * s.local[static_cast<size_t>(j)];
      s.posed_joints.row(j) =
          s.posed_joints.row(p) + (s.world[static_cast<size_t>(p)] * (s.joints.row(j) - s.joints.row(p)).transpose()).transpose();
    }
  }
  return s;
}

inline Vec3 skin_vertex(const BodyTemplate& m, const PoseState& s, int v) {
  Vec3 out = Vec3::Zero();
  const Vec3 rest = s.rest.row(v).transpose();
  for (SparseRows::InnerIterator it(m.skinning_weights, v); it; ++it) {
    const int j = static_cast<int>(it.col());
    out += it.value() * (s.world[static_cast<size_t>(j)] * (rest - s.joints.row(j).transpose()) +
                         s.posed_joints.row(j).transpose());
  }
  return out;
}

/// Linear blend skinning followed by the global translation.
inline Points pose_mesh(const BodyTemplate& m, const BodyParams& params) {
  // All joint transforms are the identity and the skinning rows sum to one, so
  // the blend reduces to the rest mesh; skipping it keeps the result exact.
  if (params.theta.size() == 3 * m.num_joints() && params.theta.isZero(0.0)) {
    check_params(m, params);
    return rest_mesh(m, params.beta, params.theta).rowwise() + params.t.transpose();
  }
  const PoseState s = compute_pose_state(m, params);
  Points out(m.num_vertices(), 3);
  for (int v = 0; v < m.num_vertices(); ++v) out.row(v) = (skin_vertex(m, s, v) + params.t).transpose();
  return out;
}

/// World joint positions of the posed body (including translation).
inline Points posed_joints(const BodyTemplate& m, const BodyParams& params) {
  const PoseState s = compute_pose_state(m, params);
  return s.posed_joints.rowwise() + params.t.transpose();
}

inline TriMesh posed_trimesh(const BodyTemplate& m, const BodyParams& params) {
  return TriMesh{pose_mesh(m, params), m.faces};
}

inline void check_markers(const BodyTemplate& m, const MarkerSet& markers) {
  for (const auto& s : markers.sites)
    if (s.face < 0 || s.face >= static_cast<int>(m.faces.rows()))
      throw ValidationError("marker face index " + std::to_string(s.face) + " out of range");
}

/// Barycentric interpolation of the posed mesh at each marker site.
inline Points marker_positions(const BodyTemplate& m, const BodyParams& params, const MarkerSet& markers) {
  check_markers(m, markers);
  const PoseState s = compute_pose_state(m, params);
  Points out(markers.size(), 3);
  for (int k = 0; k < markers.size(); ++k) {
    const auto& site = markers.sites[static_cast<size_t>(k)];
    Vec3 p = params.t;
    for (int c = 0; c < 3; ++c) p += site.bary[c] * skin_vertex(m, s, m.faces(site.face, c));
    out.row(k) = p.transpose();
  }
  return out;
}

/// Analytic Jacobian d(marker coords)/d[beta | theta | t], shape 3K x (S + 3J + 3).
/// Row 3k + c is coordinate c of marker k.
inline Eigen::MatrixXd marker_jacobian(const BodyTemplate& m, const BodyParams& params, const MarkerSet& markers) {
  check_markers(m, markers);
  const PoseState s = compute_pose_state(m, params);
  const int nj = m.num_joints();
  const int ns = m.shape_dim();
  const int theta_col = ns;
  const int t_col = ns + 3 * nj;
  Eigen::MatrixXd jac = Eigen::MatrixXd::Zero(3 * markers.size(), m.num_params());

  // Joint derivatives w.r.t. beta: regressed basis and its propagation along the tree.
  const Eigen::MatrixXd reg_basis = [&] {
    Eigen::MatrixXd out(3 * nj, ns);
    for (int k = 0; k < ns; ++k) out.col(k) = flatten(Points(m.joint_regressor * unflatten(m.shape_basis.col(k))));
    return out;
  }();
  Eigen::MatrixXd dposed_joint(3 * nj, ns);
  for (int j : s.order) {
    const int p = m.parents[static_cast<size_t>(j)];
    if (p < 0) {
      dposed_joint.middleRows<3>(3 * j) = reg_basis.middleRows<3>(3 * j);
    } else {
      dposed_joint.middleRows<3>(3 * j) =
          dposed_joint.middleRows<3>(3 * p) +
          s.world[static_cast<size_t>(p)] * (reg_basis.middleRows<3>(3 * j) - reg_basis.middleRows<3>(3 * p));
    }
  }

  // Omega(q, c) = W_parent(q) * dR_q/dtheta_qc * R_q^T * W_parent(q)^T: world-frame
  // angular velocity generator of joint q's rotation.
  std::vector<std::array<Mat3, 3>> omega(static_cast<size_t>(nj));
  std::vector<std::array<Mat3, 3>> drot(static_cast<size_t>(nj));
  for (int q = 0; q < nj; ++q) {
    drot[static_cast<size_t>(q)] = rodrigues_derivatives(params.joint_rotation(q));
    const int p = m.parents[static_cast<size_t>(q)];
    const Mat3 wp = p < 0 ? Mat3::Identity() : s.world[static_cast<size_t>(p)];
    for (int c = 0; c < 3; ++c)
      omega[static_cast<size_t>(q)][static_cast<size_t>(c)] =
          wp * drot[static_cast<size_t>(q)][static_cast<size_t>(c)] * s.local[static_cast<size_t>(q)].transpose() *
          wp.transpose();
  }

  std::vector<Vec3> subtree_sum(static_cast<size_t>(nj));
  std::vector<double> subtree_weight(static_cast<size_t>(nj));
  for (int k = 0; k < markers.size(); ++k) {
    const auto& site = markers.sites[static_cast<size_t>(k)];
    auto block = jac.middleRows<3>(3 * k);
    block.middleCols<3>(t_col).setIdentity();
    std::fill(subtree_sum.begin(), subtree_sum.end(), Vec3::Zero());
    std::fill(subtree_weight.begin(), subtree_weight.end(), 0.0);
    for (int corner = 0; corner < 3; ++corner) {
      const double b = site.bary[corner];
      if (b == 0.0) continue;
      const int v = m.faces(site.face, corner);
      const Vec3 rest = s.rest.row(v).transpose();
      for (SparseRows::InnerIterator it(m.skinning_weights, v); it; ++it) {
        const int j = static_cast<int>(it.col());
        const double w = b * it.value();
        const Mat3& rw = s.world[static_cast<size_t>(j)];
        const Vec3 term = w * (rw * (rest - s.joints.row(j).transpose()) + s.posed_joints.row(j).transpose());
        for (int q = j; q >= 0; q = m.parents[static_cast<size_t>(q)]) {
          subtree_sum[static_cast<size_t>(q)] += term;
          subtree_weight[static_cast<size_t>(q)] += w;
        }
        // shape
        for (int sb = 0; sb < ns; ++sb) {
          const Vec3 dv = m.shape_basis.block<3, 1>(3 * v, sb);
          block.col(sb) += w * (rw * (dv - reg_basis.block<3, 1>(3 * j, sb)) + dposed_joint.block<3, 1>(3 * j, sb));
        }
        // pose correctives move the rest vertex itself
        if (m.has_pose_correctives()) {
          for (int q = 0; q < nj; ++q) {
            if (m.parents[static_cast<size_t>(q)] < 0) continue;
            const int slot = detail::pose_feature_slot(m.parents, q);
            const auto pb = m.pose_corrective_basis.block(3 * v, 9 * slot, 3, 9);
            for (int c = 0; c < 3; ++c) {
              const Mat3& d = drot[static_cast<size_t>(q)][static_cast<size_t>(c)];
              Eigen::Matrix<double, 9, 1> df;
              for (int a = 0; a < 3; ++a)
                for (int bb = 0; bb < 3; ++bb) df[3 * a + bb] = d(a, bb);
              block.col(theta_col + 3 * q + c) += w * (rw * (pb * df));
            }
          }
        }
      }
    }
    for (int q = 0; q < nj; ++q) {
      if (subtree_weight[static_cast<size_t>(q)] == 0.0) continue;
      const Vec3 lever =
          subtree_sum[static_cast<size_t>(q)] - subtree_weight[static_cast<size_t>(q)] * s.posed_joints.row(q).transpose();
      for (int c = 0; c < 3; ++c)
        block.col(theta_col + 3 * q + c) += omega[static_cast<size_t>(q)][static_cast<size_t>(c)] * lever;
    }
  }
  return jac;
}

}  // namespace tightfit
