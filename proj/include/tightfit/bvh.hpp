#pragma once

#include "tightfit/mesh.hpp"

#include <numeric>
#include <optional>

namespace tightfit {

struct RayHit {
  Vec3 position;
  int face = -1;
  double distance = 0;
  Vec3 bary;
};

struct ClosestPoint {
  Vec3 position;
  int face = -1;
  double distance = 0;
  Vec3 bary;
};

inline constexpr double kRayEpsilon = 1e-6;

/// Moller-Trumbore. `dir` must be unit length; returns the ray parameter and (u, v).
inline std::optional<std::pair<double, Eigen::Vector2d>> intersect_triangle(const Vec3& origin, const Vec3& dir,
                                                                            const Vec3& a, const Vec3& b,
                                                                            const Vec3& c) {
  const Vec3 e1 = b - a;
  const Vec3 e2 = c - a;
  const Vec3 p = dir.cross(e2);
  const double det = e1.dot(p);
  if (std::abs(det) < 1e-300) return std::nullopt;
  const double inv = 1.0 / det;
  const Vec3 s = origin - a;
  const double u = s.dot(p) * inv;
  if (u < 0.0 || u > 1.0) return std::nullopt;
  const Vec3 q = s.cross(e1);
  const double v = dir.dot(q) * inv;
  if (v < 0.0 || u + v > 1.0) return std::nullopt;
  const double t = e2.dot(q) * inv;
  return std::make_pair(t, Eigen::Vector2d(u, v));
}

/// Closest point on triangle abc to p, returned as barycentric coordinates.
inline Vec3 closest_on_triangle(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c) {
  const Vec3 ab = b - a, ac = c - a, ap = p - a;
  const double d1 = ab.dot(ap), d2 = ac.dot(ap);
  if (d1 <= 0 && d2 <= 0) return {1, 0, 0};
  const Vec3 bp = p - b;
  const double d3 = ab.dot(bp), d4 = ac.dot(bp);
  if (d3 >= 0 && d4 <= d3) return {0, 1, 0};
  const double vc = d1 * d4 - d3 * d2;
  if (vc <= 0 && d1 >= 0 && d3 <= 0) {
    const double v = d1 / (d1 - d3);
    return {1 - v, v, 0};
  }
  const Vec3 cp = p - c;
  const double d5 = ab.dot(cp), d6 = ac.dot(cp);
  if (d6 >= 0 && d5 <= d6) return {0, 0, 1};
  const double vb = d5 * d2 - d1 * d6;
  if (vb <= 0 && d2 >= 0 && d6 <= 0) {
    const double w = d2 / (d2 - d6);
    return {1 - w, 0, w};
  }
  const double va = d3 * d6 - d5 * d4;
  if (va <= 0 && (d4 - d3) >= 0 && (d5 - d6) >= 0) {
    const double w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
    return {0, 1 - w, w};
  }
  const double denom = 1.0 / (va + vb + vc);
  const double v = vb * denom, w = vc * denom;
  return {1 - v - w, v, w};
}

/// Median-split AABB tree over the faces of a mesh. Holds a copy of the mesh.
class MeshBvh {
 public:
  explicit MeshBvh(TriMesh mesh) : mesh_(std::move(mesh)) {
    TIGHTFIT_CHECK(mesh_.num_faces() > 0, "cannot build a BVH over an empty mesh");
    order_.resize(static_cast<size_t>(mesh_.num_faces()));
    std::iota(order_.begin(), order_.end(), 0);
    centroids_.resize(order_.size());
    for (int f = 0; f < mesh_.num_faces(); ++f)
      centroids_[static_cast<size_t>(f)] = (mesh_.corner(f, 0) + mesh_.corner(f, 1) + mesh_.corner(f, 2)) / 3.0;
    nodes_.reserve(2 * order_.size() / kLeafSize + 2);
    build(0, static_cast<int>(order_.size()));
  }

  const TriMesh& mesh() const { return mesh_; }

  /// Nearest hit with distance > kRayEpsilon; ties go to the lower face index.
  std::optional<RayHit> intersect(const Vec3& origin, const Vec3& direction) const {
    const double len = direction.norm();
    TIGHTFIT_CHECK(len > 0 && std::isfinite(len), "ray direction must be nonzero");
    const Vec3 dir = direction / len;
    const Vec3 inv(1.0 / dir.x(), 1.0 / dir.y(), 1.0 / dir.z());
    double best_t = kInf;
    int best_face = -1;
    Eigen::Vector2d best_uv;
    std::vector<int> stack{0};
    while (!stack.empty()) {
      const Node& node = nodes_[static_cast<size_t>(stack.back())];
      stack.pop_back();
      if (!slab_hit(node, origin, inv, best_t)) continue;
      if (node.left < 0) {
        for (int i = node.start; i < node.start + node.count; ++i) {
          const int f = order_[static_cast<size_t>(i)];
          auto hit = intersect_triangle(origin, dir, mesh_.corner(f, 0), mesh_.corner(f, 1), mesh_.corner(f, 2));
          if (!hit || hit->first <= kRayEpsilon) continue;
          if (hit->first < best_t || (hit->first == best_t && f < best_face)) {
            best_t = hit->first;
            best_face = f;
            best_uv = hit->second;
          }
        }
      } else {
        stack.push_back(node.left);
        stack.push_back(node.right);
      }
    }
    if (best_face < 0) return std::nullopt;
    RayHit hit;
    hit.face = best_face;
    hit.distance = best_t;
    hit.bary = Vec3(1.0 - best_uv[0] - best_uv[1], best_uv[0], best_uv[1]);
    hit.position = origin + best_t * dir;
    return hit;
  }

  /// Closest surface point; ties go to the lower face index.
  ClosestPoint closest(const Vec3& p) const {
    double best_d2 = kInf;
    int best_face = -1;
    Vec3 best_bary;
    std::vector<int> stack{0};
    while (!stack.empty()) {
      const Node& node = nodes_[static_cast<size_t>(stack.back())];
      stack.pop_back();
      if (box_distance2(node, p) > best_d2) continue;
      if (node.left < 0) {
        for (int i = node.start; i < node.start + node.count; ++i) {
          const int f = order_[static_cast<size_t>(i)];
          const Vec3 bary = closest_on_triangle(p, mesh_.corner(f, 0), mesh_.corner(f, 1), mesh_.corner(f, 2));
          const double d2 = (mesh_.interpolate(f, bary) - p).squaredNorm();
          if (d2 < best_d2 || (d2 == best_d2 && f < best_face)) {
            best_d2 = d2;
            best_face = f;
            best_bary = bary;
          }
        }
      } else {
        const Node& l = nodes_[static_cast<size_t>(node.left)];
        const Node& r = nodes_[static_cast<size_t>(node.right)];
        // visit the nearer child first
        if (box_distance2(l, p) < box_distance2(r, p)) {
          stack.push_back(node.right);
          stack.push_back(node.left);
        } else {
          stack.push_back(node.left);
          stack.push_back(node.right);
        }
      }
    }
    ClosestPoint out;
    out.face = best_face;
    out.bary = best_bary;
    out.position = mesh_.interpolate(best_face, best_bary);
    out.distance = std::sqrt(best_d2);
    return out;
  }

 private:
  static constexpr int kLeafSize = 4;

  struct Node {
    Vec3 lo, hi;
    int left = -1, right = -1;
    int start = 0, count = 0;
  };

  int build(int begin, int end) {
    const int index = static_cast<int>(nodes_.size());
    nodes_.emplace_back();
    Vec3 lo = Vec3::Constant(kInf), hi = Vec3::Constant(-kInf);
    for (int i = begin; i < end; ++i) {
      const int f = order_[static_cast<size_t>(i)];
      for (int k = 0; k < 3; ++k) {
        lo = lo.cwiseMin(mesh_.corner(f, k));
        hi = hi.cwiseMax(mesh_.corner(f, k));
      }
    }
    nodes_[static_cast<size_t>(index)].lo = lo;
    nodes_[static_cast<size_t>(index)].hi = hi;
    if (end - begin <= kLeafSize) {
      nodes_[static_cast<size_t>(index)].start = begin;
      nodes_[static_cast<size_t>(index)].count = end - begin;
      return index;
    }
    int axis = 0;
    (hi - lo).maxCoeff(&axis);
    const int mid = (begin + end) / 2;
    std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end, [&](int a, int b) {
      const double ca = centroids_[static_cast<size_t>(a)][axis], cb = centroids_[static_cast<size_t>(b)][axis];
      return ca < cb || (ca == cb && a < b);
    });
    const int left = build(begin, mid);
    const int right = build(mid, end);
    nodes_[static_cast<size_t>(index)].left = left;
    nodes_[static_cast<size_t>(index)].right = right;
    return index;
  }

  static bool slab_hit(const Node& n, const Vec3& o, const Vec3& inv, double t_max) {
    double t0 = 0.0, t1 = t_max;
    for (int a = 0; a < 3; ++a) {
      double ta = (n.lo[a] - o[a]) * inv[a];
      double tb = (n.hi[a] - o[a]) * inv[a];
      if (std::isnan(ta) || std::isnan(tb)) {
        // ray parallel to and lying in a slab plane
        if (o[a] < n.lo[a] || o[a] > n.hi[a]) return false;
        continue;
      }
      if (ta > tb) std::swap(ta, tb);
      t0 = std::max(t0, ta);
      t1 = std::min(t1, tb);
      // padding keeps grazing hits on box faces
      if (t0 > t1 * (1 + 1e-12) + 1e-12) return false;
    }
    return true;
  }

  static double box_distance2(const Node& n, const Vec3& p) {
    const Vec3 d = (n.lo - p).cwiseMax(Vec3::Zero()).cwiseMax(p - n.hi);
    return d.squaredNorm();
  }

  TriMesh mesh_;
  std::vector<int> order_;
  std::vector<Vec3> centroids_;
  std::vector<Node> nodes_;
};

/// One-shot ray cast (builds a BVH per call; keep a MeshBvh for repeated queries).
inline std::optional<RayHit> ray_intersect(const TriMesh& mesh, const Vec3& origin, const Vec3& direction) {
  return MeshBvh(mesh).intersect(origin, direction);
}

}  // namespace tightfit
