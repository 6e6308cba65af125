#pragma once

#include "tightfit/common.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <random>
#include <sstream>

namespace tightfit {

/// Indexed triangle mesh. Faces are counter-clockwise seen from outside.
struct TriMesh {
  Points vertices;
  Faces faces;

  int num_vertices() const { return static_cast<int>(vertices.rows()); }
  int num_faces() const { return static_cast<int>(faces.rows()); }

  Vec3 vertex(int i) const { return vertices.row(i).transpose(); }
  Vec3 corner(int f, int k) const { return vertices.row(faces(f, k)).transpose(); }

  Vec3 face_cross(int f) const { return (corner(f, 1) - corner(f, 0)).cross(corner(f, 2) - corner(f, 0)); }
  double face_area(int f) const { return 0.5 * face_cross(f).norm(); }
  Vec3 face_normal(int f) const { return face_cross(f).normalized(); }

  Vec3 interpolate(int f, const Vec3& bary) const {
    return bary[0] * corner(f, 0) + bary[1] * corner(f, 1) + bary[2] * corner(f, 2);
  }
};

/// A point on a mesh surface, located by face and barycentric coordinates.
struct SurfaceSample {
  int face = -1;
  Vec3 bary = Vec3::Zero();
  Vec3 position = Vec3::Zero();
  Vec3 normal = Vec3::UnitZ();
};

inline void validate_mesh(const TriMesh& mesh) {
  TIGHTFIT_CHECK(mesh.num_vertices() > 0 && mesh.num_faces() > 0, "mesh is empty");
  TIGHTFIT_CHECK(mesh.vertices.allFinite(), "mesh has non-finite vertex coordinates");
  for (int f = 0; f < mesh.num_faces(); ++f) {
    for (int k = 0; k < 3; ++k) {
      const int v = mesh.faces(f, k);
      TIGHTFIT_CHECK(v >= 0 && v < mesh.num_vertices(), "face index out of range");
    }
    TIGHTFIT_CHECK(mesh.face_area(f) > 0.0, "mesh has a zero-area face");
  }
}

/// Drops faces with repeated or out-of-range indices and faces of (near) zero area.
inline TriMesh clean_mesh(const TriMesh& mesh, double min_area = 1e-14) {
  std::vector<int> keep;
  for (int f = 0; f < mesh.num_faces(); ++f) {
    const int a = mesh.faces(f, 0), b = mesh.faces(f, 1), c = mesh.faces(f, 2);
    const int n = mesh.num_vertices();
    if (a < 0 || b < 0 || c < 0 || a >= n || b >= n || c >= n) continue;
    if (a == b || b == c || a == c) continue;
    if (!(mesh.face_area(f) > min_area)) continue;
    keep.push_back(f);
  }
  TriMesh out;
  out.vertices = mesh.vertices;
  out.faces.resize(static_cast<Eigen::Index>(keep.size()), 3);
  for (size_t i = 0; i < keep.size(); ++i) out.faces.row(static_cast<Eigen::Index>(i)) = mesh.faces.row(keep[i]);
  return out;
}

/// Angle-weighted vertex normals.
inline Points vertex_normals(const TriMesh& mesh) {
  Points normals = Points::Zero(mesh.num_vertices(), 3);
  for (int f = 0; f < mesh.num_faces(); ++f) {
    const Vec3 n = mesh.face_normal(f);
    for (int k = 0; k < 3; ++k) {
      const Vec3 p = mesh.corner(f, k);
      const Vec3 e1 = (mesh.corner(f, (k + 1) % 3) - p).normalized();
      const Vec3 e2 = (mesh.corner(f, (k + 2) % 3) - p).normalized();
      const double angle = std::acos(std::clamp(e1.dot(e2), -1.0, 1.0));
      normals.row(mesh.faces(f, k)) += angle * n.transpose();
    }
  }
  for (int v = 0; v < mesh.num_vertices(); ++v) {
    const double len = normals.row(v).norm();
    if (len > 0) normals.row(v) /= len;
  }
  return normals;
}

inline double surface_area(const TriMesh& mesh) {
  double area = 0;
  for (int f = 0; f < mesh.num_faces(); ++f) area += mesh.face_area(f);
  return area;
}

/// Fills position and normal of a sample from its face and barycentric coordinates.
inline SurfaceSample make_sample(const TriMesh& mesh, const Points& normals, int face, const Vec3& bary) {
  SurfaceSample s;
  s.face = face;
  s.bary = bary;
  s.position = mesh.interpolate(face, bary);
  Vec3 n = Vec3::Zero();
  for (int k = 0; k < 3; ++k) n += bary[k] * normals.row(mesh.faces(face, k)).transpose();
  s.normal = n.norm() > 0 ? n.normalized() : mesh.face_normal(face);
  return s;
}

inline SurfaceSample make_sample(const TriMesh& mesh, int face, const Vec3& bary) {
  return make_sample(mesh, vertex_normals(mesh), face, bary);
}

/// Area-weighted uniform samples on the surface, deterministic in `seed`.
inline std::vector<SurfaceSample> sample_surface(const TriMesh& mesh, int n, std::uint64_t seed) {
  TIGHTFIT_CHECK(mesh.num_faces() > 0, "cannot sample an empty mesh");
  TIGHTFIT_CHECK(n >= 1, "sample count must be at least 1");
  std::vector<double> cumulative(static_cast<size_t>(mesh.num_faces()));
  double total = 0;
  for (int f = 0; f < mesh.num_faces(); ++f) {
    total += mesh.face_area(f);
    cumulative[static_cast<size_t>(f)] = total;
  }
  TIGHTFIT_CHECK(total > 0, "mesh has zero surface area");
  const Points normals = vertex_normals(mesh);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<SurfaceSample> samples;
  samples.reserve(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    const double pick = unit(rng) * total;
    auto it = std::upper_bound(cumulative.begin(), cumulative.end(), pick);
    if (it == cumulative.end()) --it;
    const int face = static_cast<int>(it - cumulative.begin());
    const double r1 = std::sqrt(unit(rng));
    const double r2 = unit(rng);
    const Vec3 bary(1.0 - r1, r1 * (1.0 - r2), r1 * r2);
    samples.push_back(make_sample(mesh, normals, face, bary));
  }
  return samples;
}

inline Points sample_positions(const std::vector<SurfaceSample>& samples) {
  Points p(static_cast<Eigen::Index>(samples.size()), 3);
  for (size_t i = 0; i < samples.size(); ++i) p.row(static_cast<Eigen::Index>(i)) = samples[i].position.transpose();
  return p;
}

// OBJ: only `v` and triangular `f` records are read; everything else is skipped.
inline TriMesh read_obj(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open OBJ file: " + path);
  std::vector<Vec3> verts;
  std::vector<Eigen::Vector3i> tris;
  std::string line;
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    std::string tag;
    ls >> tag;
    if (tag == "v") {
      Vec3 p;
      if (!(ls >> p.x() >> p.y() >> p.z())) throw ValidationError("malformed vertex record in " + path);
      verts.push_back(p);
    } else if (tag == "f") {
      std::vector<int> idx;
      std::string tok;
      while (ls >> tok) idx.push_back(std::stoi(tok.substr(0, tok.find('/'))) - 1);
      if (idx.size() != 3) throw ValidationError("only triangular faces are supported: " + path);
      tris.emplace_back(idx[0], idx[1], idx[2]);
    }
  }
  TriMesh mesh;
  mesh.vertices.resize(static_cast<Eigen::Index>(verts.size()), 3);
  for (size_t i = 0; i < verts.size(); ++i) mesh.vertices.row(static_cast<Eigen::Index>(i)) = verts[i].transpose();
  mesh.faces.resize(static_cast<Eigen::Index>(tris.size()), 3);
  for (size_t i = 0; i < tris.size(); ++i) mesh.faces.row(static_cast<Eigen::Index>(i)) = tris[i].transpose();
  return mesh;
}

/// OBJ text with fixed 9-digit coordinates.
inline std::string obj_string(const TriMesh& mesh) {
  std::string out;
  out.reserve(static_cast<size_t>(mesh.num_vertices()) * 48 + static_cast<size_t>(mesh.num_faces()) * 24);
  char buf[128];
  for (int v = 0; v < mesh.num_vertices(); ++v) {
    std::snprintf(buf, sizeof(buf), "v %.9f %.9f %.9f\n", mesh.vertices(v, 0), mesh.vertices(v, 1), mesh.vertices(v, 2));
    out += buf;
  }
  for (int f = 0; f < mesh.num_faces(); ++f) {
    std::snprintf(buf, sizeof(buf), "f %d %d %d\n", mesh.faces(f, 0) + 1, mesh.faces(f, 1) + 1, mesh.faces(f, 2) + 1);
    out += buf;
  }
  return out;
}

/// Edge -> incident face count; a closed 2-manifold has every count equal to 2.
inline bool is_closed_manifold(const TriMesh& mesh) {
  std::vector<std::pair<std::int64_t, int>> edges;
  edges.reserve(static_cast<size_t>(mesh.num_faces()) * 3);
  const std::int64_t n = mesh.num_vertices();
  for (int f = 0; f < mesh.num_faces(); ++f) {
    for (int k = 0; k < 3; ++k) {
      const std::int64_t a = mesh.faces(f, k), b = mesh.faces(f, (k + 1) % 3);
      edges.emplace_back(std::min(a, b) * n + std::max(a, b), a < b ? 1 : -1);
    }
  }
  std::sort(edges.begin(), edges.end());
  for (size_t i = 0; i < edges.size();) {
    size_t j = i;
    int orient = 0;
    while (j < edges.size() && edges[j].first == edges[i].first) orient += edges[j++].second;
    if (j - i != 2 || orient != 0) return false;
    i = j;
  }
  return true;
}

}  // namespace tightfit
