#pragma once

#include "tightfit/body_model.hpp"

#include <map>
#include <random>

namespace tightfit {

/// Parameters of the procedural 24-joint body used as the default fixture.
struct StickConfig {
  double height_scale = 1.0;  // multiplies every joint position
  double radius_scale = 1.0;  // multiplies every limb radius
  int subdivision = 0;        // each level shrinks the meshing grid by 0.7x
  int shape_dim = 10;
  double blend = 0.03;  // smooth-union width between limbs, meters
  std::uint64_t seed = 0;
};

namespace stick {

inline constexpr int kJoints = 24;

// SMPL joint order: pelvis, hips, spine1, knees, spine2, ankles, spine3, feet,
// neck, collars, head, shoulders, elbows, wrists, hands.
inline const std::vector<int>& parents() {
  static const std::vector<int> p{-1, 0, 0, 0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 9, 9, 12, 13, 14, 16, 17, 18, 19, 20, 21};
  return p;
}

// Rest (T-pose) joint positions in meters; y up, facing +z, left is +x.
inline std::vector<Vec3> joint_positions() {
  std::vector<Vec3> j(kJoints);
  j[0] = {0, 0.95, 0};
  j[3] = {0, 1.05, 0};
  j[6] = {0, 1.18, 0};
  j[9] = {0, 1.30, 0};
  j[12] = {0, 1.50, 0};
  j[15] = {0, 1.62, 0};
  for (int side = 0; side < 2; ++side) {
    const double s = side == 0 ? 1.0 : -1.0;
    const int o = side;
    j[1 + o] = {s * 0.10, 0.88, 0};
    j[4 + o] = {s * 0.10, 0.50, 0};
    j[7 + o] = {s * 0.10, 0.09, 0};
    j[10 + o] = {s * 0.10, 0.04, 0.10};
    j[13 + o] = {s * 0.07, 1.42, 0};
    j[16 + o] = {s * 0.18, 1.44, 0};
    j[18 + o] = {s * 0.45, 1.44, 0};
    j[20 + o] = {s * 0.70, 1.44, 0};
    j[22 + o] = {s * 0.78, 1.44, 0};
  }
  return j;
}

struct Segment {
  int owner;  // joint whose rotation moves this segment
  Vec3 a, b;
  double ra, rb;
};

inline std::vector<Segment> segments(const StickConfig& c) {
  const auto j = joint_positions();
  const double h = c.height_scale, r = c.radius_scale;
  std::vector<Segment> s;
  auto add = [&](int owner, const Vec3& a, const Vec3& b, double ra, double rb) {
    s.push_back({owner, h * a, h * b, r * ra, r * rb});
  };
  add(0, j[0], j[3], 0.13, 0.125);
  add(3, j[3], j[6], 0.125, 0.13);
  add(6, j[6], j[9], 0.13, 0.14);
  add(9, j[9], j[12], 0.13, 0.06);
  add(12, j[12], j[15], 0.05, 0.05);
  add(15, Vec3(0, 1.70, 0), Vec3(0, 1.76, 0), 0.095, 0.095);
  for (int side = 0; side < 2; ++side) {
    const double sx = side == 0 ? 1.0 : -1.0;
    const int o = side;
    add(0, j[0], j[1 + o], 0.11, 0.09);
    add(1 + o, j[1 + o], j[4 + o], 0.08, 0.055);
    add(4 + o, j[4 + o], j[7 + o], 0.055, 0.04);
    add(7 + o, j[7 + o], j[10 + o], 0.045, 0.04);
    add(10 + o, j[10 + o], Vec3(sx * 0.10, 0.04, 0.17), 0.04, 0.035);
    add(9, j[9], j[13 + o], 0.08, 0.06);
    add(13 + o, j[13 + o], j[16 + o], 0.06, 0.055);
    add(16 + o, j[16 + o], j[18 + o], 0.055, 0.042);
    add(18 + o, j[18 + o], j[20 + o], 0.042, 0.032);
    add(20 + o, j[20 + o], j[22 + o], 0.035, 0.038);
    add(22 + o, j[22 + o], Vec3(sx * 0.86, 1.44, 0), 0.038, 0.03);
  }
  return s;
}

// Distance from p to the tapered capsule's surface (negative inside), the
// parameter of the closest axis point, and that point.
inline double capsule_distance(const Segment& s, const Vec3& p, double* t_out = nullptr, Vec3* axis = nullptr) {
  const Vec3 ab = s.b - s.a;
  const double t = std::clamp((p - s.a).dot(ab) / ab.squaredNorm(), 0.0, 1.0);
  const Vec3 q = s.a + t * ab;
  if (t_out) *t_out = t;
  if (axis) *axis = q;
  return (p - q).norm() - (s.ra + t * (s.rb - s.ra));
}

inline double smooth_min(double a, double b, double k) {
  const double h = std::max(k - std::abs(a - b), 0.0) / k;
  return std::min(a, b) - h * h * k * 0.25;
}

inline double body_sdf(const std::vector<Segment>& segs, double blend, const Vec3& p) {
  double d = capsule_distance(segs[0], p);
  for (size_t i = 1; i < segs.size(); ++i) d = smooth_min(d, capsule_distance(segs[i], p), blend);
  return d;
}

/// Naive surface nets over a regular grid; returns a closed mesh with outward faces.
template <typename Field>
TriMesh surface_nets(const Field& field, const Vec3& lo, const Vec3& hi, double h) {
  const int nx = static_cast<int>(std::ceil((hi.x() - lo.x()) / h)) + 1;
  const int ny = static_cast<int>(std::ceil((hi.y() - lo.y()) / h)) + 1;
  const int nz = static_cast<int>(std::ceil((hi.z() - lo.z()) / h)) + 1;
  auto gid = [&](int i, int j, int k) { return (static_cast<size_t>(k) * ny + j) * nx + i; };
  auto gpos = [&](int i, int j, int k) { return Vec3(lo.x() + i * h, lo.y() + j * h, lo.z() + k * h); };
  std::vector<double> values(static_cast<size_t>(nx) * ny * nz);
  for (int k = 0; k < nz; ++k)
    for (int j = 0; j < ny; ++j)
      for (int i = 0; i < nx; ++i) values[gid(i, j, k)] = field(gpos(i, j, k));

  // cell (i,j,k) spans grid points [i,i+1]x[j,j+1]x[k,k+1]
  std::vector<int> cell_vertex(static_cast<size_t>(nx) * ny * nz, -1);
  std::vector<Vec3> verts;
  std::vector<Vec3> raw;  // unprojected crossing averages
  static const int corner[8][3] = {{0, 0, 0}, {1, 0, 0}, {0, 1, 0}, {1, 1, 0}, {0, 0, 1}, {1, 0, 1}, {0, 1, 1}, {1, 1, 1}};
  static const int edges[12][2] = {{0, 1}, {2, 3}, {4, 5}, {6, 7}, {0, 2}, {1, 3}, {4, 6}, {5, 7}, {0, 4}, {1, 5}, {2, 6}, {3, 7}};
  for (int k = 0; k + 1 < nz; ++k)
    for (int j = 0; j + 1 < ny; ++j)
      for (int i = 0; i + 1 < nx; ++i) {
        double v[8];
        int inside = 0;
        for (int c = 0; c < 8; ++c) {
          v[c] = values[gid(i + corner[c][0], j + corner[c][1], k + corner[c][2])];
          inside += v[c] < 0;
        }
        if (inside == 0 || inside == 8) continue;
        Vec3 acc = Vec3::Zero();
        int n = 0;
        for (auto& e : edges) {
          const double va = v[e[0]], vb = v[e[1]];
          if ((va < 0) == (vb < 0)) continue;
          const double t = va / (va - vb);
          const Vec3 pa = gpos(i + corner[e[0]][0], j + corner[e[0]][1], k + corner[e[0]][2]);
          const Vec3 pb = gpos(i + corner[e[1]][0], j + corner[e[1]][1], k + corner[e[1]][2]);
          acc += pa + t * (pb - pa);
          ++n;
        }
        Vec3 p = acc / n;
        raw.push_back(p);
        // pull onto the level set, never leaving the cell
        const Vec3 cell_lo = gpos(i, j, k), cell_hi = gpos(i + 1, j + 1, k + 1);
        for (int it = 0; it < 4; ++it) {
          const double f = field(p);
          Vec3 g;
          const double e = 1e-6;
          for (int a = 0; a < 3; ++a) {
            Vec3 d = Vec3::Zero();
            d[a] = e;
            g[a] = (field(p + d) - field(p - d)) / (2 * e);
          }
          if (g.squaredNorm() < 1e-12) break;
          p = (p - f * g / g.squaredNorm()).cwiseMax(cell_lo).cwiseMin(cell_hi);
        }
        cell_vertex[gid(i, j, k)] = static_cast<int>(verts.size());
        verts.push_back(p);
      }

  std::vector<Eigen::Vector3i> tris;
  auto emit_quad = [&](int a, int b, int c, int d) {
    if (a < 0 || b < 0 || c < 0 || d < 0) throw NumericalError("surface nets: incomplete quad at grid border");
    // split along the shorter diagonal
    if ((verts[static_cast<size_t>(a)] - verts[static_cast<size_t>(c)]).squaredNorm() <=
        (verts[static_cast<size_t>(b)] - verts[static_cast<size_t>(d)]).squaredNorm()) {
      tris.emplace_back(a, b, c);
      tris.emplace_back(a, c, d);
    } else {
      tris.emplace_back(a, b, d);
      tris.emplace_back(b, c, d);
    }
  };
  auto cv = [&](int i, int j, int k) {
    if (i < 0 || j < 0 || k < 0 || i + 1 >= nx || j + 1 >= ny || k + 1 >= nz) return -1;
    return cell_vertex[gid(i, j, k)];
  };
  for (int k = 0; k < nz; ++k)
    for (int j = 0; j < ny; ++j)
      for (int i = 0; i < nx; ++i) {
        const bool in0 = values[gid(i, j, k)] < 0;
        if (i + 1 < nx && in0 != (values[gid(i + 1, j, k)] < 0)) {
          int q[4] = {cv(i, j - 1, k - 1), cv(i, j, k - 1), cv(i, j, k), cv(i, j - 1, k)};
          if (in0) emit_quad(q[0], q[1], q[2], q[3]);
          else emit_quad(q[3], q[2], q[1], q[0]);
        }
        if (j + 1 < ny && in0 != (values[gid(i, j + 1, k)] < 0)) {
          int q[4] = {cv(i - 1, j, k - 1), cv(i - 1, j, k), cv(i, j, k), cv(i, j, k - 1)};
          if (in0) emit_quad(q[0], q[1], q[2], q[3]);
          else emit_quad(q[3], q[2], q[1], q[0]);
        }
        if (k + 1 < nz && in0 != (values[gid(i, j, k + 1)] < 0)) {
          int q[4] = {cv(i - 1, j - 1, k), cv(i, j - 1, k), cv(i, j, k), cv(i - 1, j, k)};
          if (in0) emit_quad(q[0], q[1], q[2], q[3]);
          else emit_quad(q[3], q[2], q[1], q[0]);
        }
      }

  // projection can flatten a triangle; fall back to the raw positions there
  auto area = [&](const Eigen::Vector3i& t) {
    return (verts[static_cast<size_t>(t[1])] - verts[static_cast<size_t>(t[0])])
        .cross(verts[static_cast<size_t>(t[2])] - verts[static_cast<size_t>(t[0])])
        .norm();
  };
  for (const auto& t : tris)
    if (area(t) < 1e-10 * h * h)
      for (int k = 0; k < 3; ++k) verts[static_cast<size_t>(t[k])] = raw[static_cast<size_t>(t[k])];

  TriMesh mesh;
  mesh.vertices.resize(static_cast<Eigen::Index>(verts.size()), 3);
  for (size_t v = 0; v < verts.size(); ++v) mesh.vertices.row(static_cast<Eigen::Index>(v)) = verts[v].transpose();
  mesh.faces.resize(static_cast<Eigen::Index>(tris.size()), 3);
  for (size_t f = 0; f < tris.size(); ++f) mesh.faces.row(static_cast<Eigen::Index>(f)) = tris[f].transpose();
  return mesh;
}

/// Removes vertices no face references and renumbers the rest.
inline TriMesh compact(const TriMesh& mesh) {
  std::vector<int> remap(static_cast<size_t>(mesh.num_vertices()), -1);
  int next = 0;
  for (int f = 0; f < mesh.num_faces(); ++f)
    for (int k = 0; k < 3; ++k)
      if (remap[static_cast<size_t>(mesh.faces(f, k))] < 0) remap[static_cast<size_t>(mesh.faces(f, k))] = next++;
  TriMesh out;
  out.vertices.resize(next, 3);
  for (int v = 0; v < mesh.num_vertices(); ++v)
    if (remap[static_cast<size_t>(v)] >= 0) out.vertices.row(remap[static_cast<size_t>(v)]) = mesh.vertices.row(v);
  out.faces.resize(mesh.num_faces(), 3);
  for (int f = 0; f < mesh.num_faces(); ++f)
    for (int k = 0; k < 3; ++k) out.faces(f, k) = remap[static_cast<size_t>(mesh.faces(f, k))];
  return out;
}

}  // namespace stick

/// Deterministic procedural body with the SMPL kinematic tree (J = 24).
inline BodyTemplate make_stick_model(const StickConfig& config = {}) {
  TIGHTFIT_CHECK(config.height_scale > 0 && std::isfinite(config.height_scale), "stick model height must be positive");
  TIGHTFIT_CHECK(config.radius_scale > 0 && std::isfinite(config.radius_scale), "stick model radius must be positive");
  TIGHTFIT_CHECK(config.subdivision >= 0 && config.subdivision <= 4, "subdivision level must be in [0, 4]");
  TIGHTFIT_CHECK(config.shape_dim >= 0, "shape dimension must be nonnegative");
  TIGHTFIT_CHECK(config.blend > 0, "blend width must be positive");

  const auto segs = stick::segments(config);
  Vec3 lo = Vec3::Constant(kInf), hi = Vec3::Constant(-kInf);
  double max_r = 0;
  for (const auto& s : segs) {
    lo = lo.cwiseMin(s.a).cwiseMin(s.b);
    hi = hi.cwiseMax(s.a).cwiseMax(s.b);
    max_r = std::max({max_r, s.ra, s.rb});
  }
  const double h = 0.02 * config.height_scale * std::pow(0.7, config.subdivision);
  // irrational offset keeps grid points off the level set
  lo -= Vec3::Constant(max_r + 3 * h) + h * Vec3(0.1234567, 0.2345678, 0.3456789);
  hi += Vec3::Constant(max_r + 3 * h);
  auto sdf = [&](const Vec3& p) { return stick::body_sdf(segs, config.blend, p); };
  const TriMesh mesh = stick::compact(clean_mesh(stick::surface_nets(sdf, lo, hi, h)));

  BodyTemplate m;
  m.template_vertices = mesh.vertices;
  m.faces = mesh.faces;
  m.parents = stick::parents();
  const int nv = mesh.num_vertices();
  const int nj = stick::kJoints;
  const auto design = stick::joint_positions();

  // Skinning: soft assignment by distance to each joint's segments.
  std::vector<Eigen::Triplet<double>> wts;
  std::vector<Vec3> radial(static_cast<size_t>(nv));
  std::vector<int> dominant(static_cast<size_t>(nv));
  const double tau = 0.012 * config.radius_scale;
  for (int v = 0; v < nv; ++v) {
    const Vec3 p = mesh.vertex(v);
    std::vector<double> d(static_cast<size_t>(nj), kInf);
    double best = kInf;
    for (const auto& s : segs) {
      Vec3 axis;
      const double dist = stick::capsule_distance(s, p, nullptr, &axis);
      if (dist < d[static_cast<size_t>(s.owner)]) d[static_cast<size_t>(s.owner)] = dist;
      if (dist < best) {
        best = dist;
        dominant[static_cast<size_t>(v)] = s.owner;
        radial[static_cast<size_t>(v)] = (p - axis).normalized();
      }
    }
    std::vector<std::pair<double, int>> raw;
    for (int j = 0; j < nj; ++j) raw.emplace_back(std::exp(-(d[static_cast<size_t>(j)] - best) / tau), j);
    std::sort(raw.begin(), raw.end(), [](auto& a, auto& b) { return a.first > b.first || (a.first == b.first && a.second < b.second); });
    raw.resize(4);
    double sum = 0;
    for (auto& [w, j] : raw) {
      if (w < 1e-4) w = 0;
      sum += w;
    }
    for (auto& [w, j] : raw)
      if (w > 0) wts.emplace_back(v, j, w / sum);
  }
  m.skinning_weights.resize(nv, nj);
  m.skinning_weights.setFromTriplets(wts.begin(), wts.end());
  m.skinning_weights.makeCompressed();

  // Joint regressor: Gaussian-weighted nearby vertices, minimally corrected so the
  // regressed rest joint reproduces the designed joint location exactly.
  std::vector<Eigen::Triplet<double>> reg;
  for (int j = 0; j < nj; ++j) {
    const Vec3 c = config.height_scale * design[static_cast<size_t>(j)];
    double rj = 0;
    for (const auto& s : segs) {
      if ((s.a - c).norm() < 1e-9) rj = std::max(rj, s.ra);
      if ((s.b - c).norm() < 1e-9) rj = std::max(rj, s.rb);
    }
    double rho = 1.6 * std::max(rj, 0.03 * config.radius_scale);
    std::vector<int> near;
    while (true) {
      near.clear();
      for (int v = 0; v < nv; ++v)
        if ((mesh.vertex(v) - c).norm() < rho) near.push_back(v);
      if (near.size() >= 8) break;
      rho *= 1.5;
    }
    const int n = static_cast<int>(near.size());
    Eigen::VectorXd w0(n);
    Eigen::MatrixXd a(4, n);
    for (int i = 0; i < n; ++i) {
      const Vec3 p = mesh.vertex(near[static_cast<size_t>(i)]);
      w0[i] = std::exp(-(p - c).squaredNorm() / (2 * (rho / 2) * (rho / 2)));
      a.col(i) << p, 1.0;
    }
    w0 /= w0.sum();
    Eigen::Vector4d target;
    target << c, 1.0;
    const Eigen::Matrix4d gram = a * a.transpose();
    const Eigen::VectorXd w = w0 + a.transpose() * gram.ldlt().solve(target - a * w0);
    for (int i = 0; i < n; ++i) reg.emplace_back(j, near[static_cast<size_t>(i)], w[i]);
  }
  m.joint_regressor.resize(nj, nv);
  m.joint_regressor.setFromTriplets(reg.begin(), reg.end());
  m.joint_regressor.makeCompressed();

  // Shape basis: hand-designed global modes followed by seeded smooth bumps.
  const int ns = config.shape_dim;
  m.shape_basis = Eigen::MatrixXd::Zero(3 * nv, ns);
  const double hs = config.height_scale;
  const double y_min = mesh.vertices.col(1).minCoeff();
  const double y_max = mesh.vertices.col(1).maxCoeff();
  std::mt19937_64 rng(config.seed);
  std::uniform_real_distribution<double> unif(-1.0, 1.0);
  auto is_torso = [](int j) { return j == 0 || j == 3 || j == 6 || j == 9 || j == 12 || j == 13 || j == 14; };
  for (int s = 0; s < ns; ++s) {
    std::vector<std::pair<int, double>> slab_bumps;
    if (s >= 7) {
      for (int b = 0; b < 4; ++b) {
        const int centre = static_cast<int>(std::floor((unif(rng) * 0.5 + 0.5) * (nv - 1)));
        slab_bumps.emplace_back(centre, 0.01 * unif(rng));
      }
    }
    for (int v = 0; v < nv; ++v) {
      const Vec3 p = mesh.vertex(v);
      const Vec3 u = radial[static_cast<size_t>(v)];
      const double sx = p.x() >= 0 ? 1.0 : -1.0;
      Vec3 d = Vec3::Zero();
      switch (s) {
        case 0:  // stature
          d = Vec3::UnitY() * 0.06 * (p.y() - y_min) / (y_max - y_min);
          break;
        case 1:  // girth
          d = u * 0.012 * (is_torso(dominant[static_cast<size_t>(v)]) ? 1.5 : 1.0);
          break;
        case 2:  // leg length
          d = -Vec3::UnitY() * 0.04 * std::clamp((0.88 * hs - p.y()) / (0.88 * hs), 0.0, 1.0);
          break;
        case 3:  // arm length
          d = Vec3::UnitX() * sx * 0.04 * std::clamp((std::abs(p.x()) - 0.18 * hs) / (0.6 * hs), 0.0, 1.0);
          break;
        case 4:  // shoulder width
          d = Vec3::UnitX() * sx * 0.02 * std::clamp((p.y() - 1.25 * hs) / (0.1 * hs), 0.0, 1.0) *
              std::clamp(std::abs(p.x()) / (0.1 * hs), 0.0, 1.0);
          break;
        case 5:  // hip width
          d = Vec3(u.x(), 0, u.z()) * 0.015 * std::exp(-std::pow((p.y() - 0.9 * hs) / (0.12 * hs), 2));
          break;
        case 6:  // torso length
          d = Vec3::UnitY() * 0.03 * std::clamp((p.y() - 0.95 * hs) / (0.55 * hs), 0.0, 1.0);
          break;
        default:
          for (auto& [centre, amp] : slab_bumps) {
            const double r2 = (p - mesh.vertex(centre)).squaredNorm();
            d += u * amp * std::exp(-r2 / (2 * 0.12 * 0.12 * hs * hs));
          }
      }
      m.shape_basis.block<3, 1>(3 * v, s) = d;
    }
  }
  validate_template(m);
  return m;
}

}  // namespace tightfit
