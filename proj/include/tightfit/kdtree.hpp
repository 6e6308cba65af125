#pragma once

#include "tightfit/common.hpp"

#include <algorithm>
#include <numeric>

namespace tightfit {

/// Static 3D kd-tree over a point set (copied in). Nearest ties resolve to the lower index.
class KdTree {
 public:
  explicit KdTree(Points points) : points_(std::move(points)) {
    index_.resize(static_cast<size_t>(points_.rows()));
    std::iota(index_.begin(), index_.end(), 0);
    if (!index_.empty()) root_ = build(0, static_cast<int>(index_.size()), 0);
  }

  int size() const { return static_cast<int>(points_.rows()); }
  const Points& points() const { return points_; }

  /// (index, distance) of the nearest point.
  std::pair<int, double> nearest(const Vec3& q) const {
    TIGHTFIT_CHECK(size() > 0, "nearest-neighbour query on an empty point set");
    int best = -1;
    double best_d2 = kInf;
    search_nearest(root_, q, best, best_d2);
    return {best, std::sqrt(best_d2)};
  }

  /// Indices of points strictly within `radius` of q, in ascending index order.
  std::vector<int> radius(const Vec3& q, double radius) const {
    std::vector<int> out;
    if (size() > 0) search_radius(root_, q, radius * radius, out);
    std::sort(out.begin(), out.end());
    return out;
  }

 private:
  struct Node {
    int point = -1;
    int axis = 0;
    int left = -1, right = -1;
  };

  int build(int begin, int end, int depth) {
    if (begin >= end) return -1;
    const int axis = depth % 3;
    const int mid = (begin + end) / 2;
    std::nth_element(index_.begin() + begin, index_.begin() + mid, index_.begin() + end, [&](int a, int b) {
      const double pa = points_(a, axis), pb = points_(b, axis);
      return pa < pb || (pa == pb && a < b);
    });
    const int id = static_cast<int>(nodes_.size());
    nodes_.push_back({index_[static_cast<size_t>(mid)], axis, -1, -1});
    const int l = build(begin, mid, depth + 1);
    const int r = build(mid + 1, end, depth + 1);
    nodes_[static_cast<size_t>(id)].left = l;
    nodes_[static_cast<size_t>(id)].right = r;
    return id;
  }

  void search_nearest(int node, const Vec3& q, int& best, double& best_d2) const {
    if (node < 0) return;
    const Node& n = nodes_[static_cast<size_t>(node)];
    const double d2 = (points_.row(n.point).transpose() - q).squaredNorm();
    if (d2 < best_d2 || (d2 == best_d2 && n.point < best)) {
      best_d2 = d2;
      best = n.point;
    }
    const double diff = q[n.axis] - points_(n.point, n.axis);
    const int near = diff < 0 ? n.left : n.right;
    const int far = diff < 0 ? n.right : n.left;
    search_nearest(near, q, best, best_d2);
    if (diff * diff <= best_d2) search_nearest(far, q, best, best_d2);
  }

  void search_radius(int node, const Vec3& q, double r2, std::vector<int>& out) const {
    if (node < 0) return;
    const Node& n = nodes_[static_cast<size_t>(node)];
    if ((points_.row(n.point).transpose() - q).squaredNorm() < r2) out.push_back(n.point);
    const double diff = q[n.axis] - points_(n.point, n.axis);
    if (diff < 0 || diff * diff < r2) search_radius(n.left, q, r2, out);
    if (diff >= 0 || diff * diff < r2) search_radius(n.right, q, r2, out);
  }

  Points points_;
  std::vector<int> index_;
  std::vector<Node> nodes_;
  int root_ = -1;
};

}  // namespace tightfit
