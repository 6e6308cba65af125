#pragma once

#include "tightfit/body_model.hpp"

#include <random>

namespace tightfit {

/// Smooth "clothing" offset field over the body surface, in meters.
///
/// offset(v) = base + torso_amplitude * torso(v) + limb_amplitude * (1 - torso(v))
///           + noise_sigma * bumps(v), clamped at 0,
/// where torso(v) is the skinning mass on trunk joints and bumps(v) is a sum of
/// seeded Gaussian blobs of width `smoothness` on the rest surface.
struct ClothingProfile {
  double base_offset = 0.03;
  double torso_amplitude = 0.0;
  double limb_amplitude = 0.0;
  double smoothness = 0.15;
  double noise_sigma = 0.0;
  int bumps = 12;
  int normal_smoothing = 3;  // Laplacian passes over the posed vertex normals
};

inline void validate_profile(const ClothingProfile& c) {
  TIGHTFIT_CHECK(std::isfinite(c.base_offset) && c.base_offset >= 0, "clothing base offset must be >= 0");
  TIGHTFIT_CHECK(std::isfinite(c.torso_amplitude) && std::isfinite(c.limb_amplitude), "clothing amplitudes must be finite");
  TIGHTFIT_CHECK(c.smoothness > 0, "clothing smoothness scale must be positive");
  TIGHTFIT_CHECK(c.noise_sigma >= 0 && c.bumps >= 0 && c.normal_smoothing >= 0, "clothing noise settings must be >= 0");
}

struct PoseSampling {
  double theta_max = 0.3;   // per-joint rotation bound, radians
  double root_yaw = 0.6;    // root rotation about the vertical axis, radians
  double t_range = 0.5;     // translation box half-width, meters
  double beta_range = 1.5;  // shape coefficients drawn from [-beta_range, beta_range]
};

/// Random body parameters: uniform shape, per-joint rotations with a random axis and
/// angle at most theta_max, a root yaw plus a small root tilt, and a box translation.
inline BodyParams random_body_params(const BodyTemplate& model, std::uint64_t seed, const PoseSampling& s = {}) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  BodyParams p = BodyParams::zeros(model);
  for (int k = 0; k < model.shape_dim(); ++k) p.beta[k] = s.beta_range * unit(rng);
  for (int j = 0; j < model.num_joints(); ++j) {
    const Vec3 axis = Vec3(normal(rng), normal(rng), normal(rng)).normalized();
    const double angle = s.theta_max * 0.5 * (unit(rng) + 1.0);
    p.theta.segment<3>(3 * j) = axis * angle;
  }
  const int root = topological_order(model.parents).front();
  const Mat3 root_rot = rodrigues(Vec3::UnitY() * s.root_yaw * unit(rng)) * rodrigues(p.joint_rotation(root) * 0.3);
  p.theta.segment<3>(3 * root) = rotation_log(root_rot);
  for (int c = 0; c < 3; ++c) p.t[c] = s.t_range * unit(rng);
  return p;
}

/// Per-vertex clothing offset on the template (pose independent).
inline Eigen::VectorXd clothing_offsets(const BodyTemplate& model, const ClothingProfile& profile, std::uint64_t seed) {
  validate_profile(profile);
  const int nv = model.num_vertices();
  std::vector<bool> trunk(static_cast<size_t>(model.num_joints()), false);
  trunk[static_cast<size_t>(topological_order(model.parents).front())] = true;
  // Trunk joints of the SMPL tree: pelvis, spine1-3, neck, collars.
  for (int j : {0, 3, 6, 9, 12, 13, 14})
    if (j < model.num_joints()) trunk[static_cast<size_t>(j)] = true;

  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> pick(0, nv - 1);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<std::pair<Vec3, double>> blobs;
  for (int b = 0; b < profile.bumps; ++b) {
    const Vec3 c = model.template_vertices.row(pick(rng)).transpose();
    blobs.emplace_back(c, normal(rng));
  }
  Eigen::VectorXd out(nv);
  for (int v = 0; v < nv; ++v) {
    double torso = 0;
    for (SparseRows::InnerIterator it(model.skinning_weights, v); it; ++it)
      if (trunk[static_cast<size_t>(it.col())]) torso += it.value();
    double noise = 0;
    const Vec3 p = model.template_vertices.row(v).transpose();
    for (auto& [c, a] : blobs)
      noise += a * std::exp(-(p - c).squaredNorm() / (2 * profile.smoothness * profile.smoothness));
    out[v] = std::max(0.0, profile.base_offset + profile.torso_amplitude * torso +
                               profile.limb_amplitude * (1.0 - torso) + profile.noise_sigma * noise);
  }
  return out;
}

/// Vertex normals averaged with their one-ring `passes` times, then renormalized.
inline Points smoothed_normals(const TriMesh& mesh, int passes) {
  Points n = vertex_normals(mesh);
  if (passes == 0) return n;
  std::vector<std::vector<int>> ring(static_cast<size_t>(mesh.num_vertices()));
  for (int f = 0; f < mesh.num_faces(); ++f)
    for (int k = 0; k < 3; ++k) ring[static_cast<size_t>(mesh.faces(f, k))].push_back(mesh.faces(f, (k + 1) % 3));
  for (int it = 0; it < passes; ++it) {
    Points next = n;
    for (int v = 0; v < mesh.num_vertices(); ++v) {
      for (int u : ring[static_cast<size_t>(v)]) next.row(v) += n.row(u);
      const double len = next.row(v).norm();
      if (len > 0) next.row(v) /= len;
    }
    n = next;
  }
  return n;
}

/// Fraction of faces whose orientation flips between `a` and `b` (same topology).
inline double flipped_fraction(const TriMesh& a, const TriMesh& b) {
  int flipped = 0;
  for (int f = 0; f < a.num_faces(); ++f)
    if (a.face_cross(f).dot(b.face_cross(f)) <= 0) ++flipped;
  return static_cast<double>(flipped) / a.num_faces();
}

struct SyntheticScan {
  BodyParams params;
  TriMesh body;   // posed body
  TriMesh outer;  // clothed surface
  double offset_scale = 1.0;  // factor applied to the profile after flip retries
};

/// Poses the body and displaces it along smoothed normals by the clothing offsets.
/// If more than 1% of faces flip, the offsets are scaled by 0.7 and retried; after
/// 5 retries a NumericalError is raised.
inline SyntheticScan make_synthetic_scan(const BodyTemplate& model, const BodyParams& params,
                                         const ClothingProfile& profile, std::uint64_t seed) {
  SyntheticScan out;
  out.params = params;
  out.body = posed_trimesh(model, params);
  const Eigen::VectorXd offsets = clothing_offsets(model, profile, seed);
  const Points normals = smoothed_normals(out.body, profile.normal_smoothing);
  double scale = 1.0;
  for (int attempt = 0; attempt <= 5; ++attempt) {
    TriMesh outer{out.body.vertices, out.body.faces};
    for (int v = 0; v < model.num_vertices(); ++v) outer.vertices.row(v) += scale * offsets[v] * normals.row(v);
    if (flipped_fraction(out.body, outer) <= 0.01) {
      out.outer = std::move(outer);
      out.offset_scale = scale;
      return out;
    }
    scale *= 0.7;
  }
  throw NumericalError("clothed surface keeps folding over after 5 offset reductions");
}

}  // namespace tightfit
