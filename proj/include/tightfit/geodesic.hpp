#pragma once

#include "tightfit/mesh.hpp"

#include <queue>
#include <tuple>
#include <utility>

namespace tightfit {

/// Graph geodesics on a triangle mesh.
///
/// Nodes are the mesh vertices plus one node per edge midpoint. Within each face
/// all six nodes are pairwise connected by straight segments. Query points on the
/// surface are attached to the six nodes of their face (and directly to each other
/// when they share a face), so every path is a polyline on the surface and the
/// graph distance is never shorter than the Euclidean one.
class GeodesicGraph {
 public:
  explicit GeodesicGraph(const TriMesh& mesh) : mesh_(mesh) {
    validate_mesh(mesh);
    const int nv = mesh.num_vertices();
    std::vector<std::pair<std::int64_t, int>> edge_keys;
    edge_keys.reserve(static_cast<size_t>(mesh.num_faces()) * 3);
    for (int f = 0; f < mesh.num_faces(); ++f)
      for (int k = 0; k < 3; ++k) edge_keys.emplace_back(edge_key(mesh.faces(f, k), mesh.faces(f, (k + 1) % 3)), 0);
    std::sort(edge_keys.begin(), edge_keys.end());
    edge_keys.erase(std::unique(edge_keys.begin(), edge_keys.end()), edge_keys.end());
    num_nodes_ = nv + static_cast<int>(edge_keys.size());
    positions_.resize(static_cast<size_t>(num_nodes_));
    for (int v = 0; v < nv; ++v) positions_[static_cast<size_t>(v)] = mesh.vertex(v);
    for (size_t e = 0; e < edge_keys.size(); ++e) {
      const int a = static_cast<int>(edge_keys[e].first / nv), b = static_cast<int>(edge_keys[e].first % nv);
      positions_[static_cast<size_t>(nv) + e] = 0.5 * (mesh.vertex(a) + mesh.vertex(b));
    }
    face_nodes_.resize(static_cast<size_t>(mesh.num_faces()));
    std::vector<std::tuple<int, int>> links;
    links.reserve(static_cast<size_t>(mesh.num_faces()) * 15);
    for (int f = 0; f < mesh.num_faces(); ++f) {
      auto& fn = face_nodes_[static_cast<size_t>(f)];
      for (int k = 0; k < 3; ++k) {
        fn[static_cast<size_t>(k)] = mesh.faces(f, k);
        const std::int64_t key = edge_key(mesh.faces(f, k), mesh.faces(f, (k + 1) % 3));
        auto it = std::lower_bound(edge_keys.begin(), edge_keys.end(), std::make_pair(key, 0));
        fn[static_cast<size_t>(3 + k)] = nv + static_cast<int>(it - edge_keys.begin());
      }
      for (int i = 0; i < 6; ++i)
        for (int j = i + 1; j < 6; ++j) {
          const int a = fn[static_cast<size_t>(i)], b = fn[static_cast<size_t>(j)];
          links.emplace_back(std::min(a, b), std::max(a, b));
        }
    }
    std::sort(links.begin(), links.end());
    links.erase(std::unique(links.begin(), links.end()), links.end());
    offsets_.assign(static_cast<size_t>(num_nodes_) + 1, 0);
    for (auto& [a, b] : links) {
      ++offsets_[static_cast<size_t>(a) + 1];
      ++offsets_[static_cast<size_t>(b) + 1];
    }
    for (int i = 0; i < num_nodes_; ++i) offsets_[static_cast<size_t>(i) + 1] += offsets_[static_cast<size_t>(i)];
    adjacency_.resize(static_cast<size_t>(offsets_.back()));
    std::vector<int> fill(offsets_.begin(), offsets_.end() - 1);
    for (auto& [a, b] : links) {
      const double w = (positions_[static_cast<size_t>(a)] - positions_[static_cast<size_t>(b)]).norm();
      adjacency_[static_cast<size_t>(fill[static_cast<size_t>(a)]++)] = {b, w};
      adjacency_[static_cast<size_t>(fill[static_cast<size_t>(b)]++)] = {a, w};
    }
  }

  const TriMesh& mesh() const { return mesh_; }
  int num_nodes() const { return num_nodes_; }

  /// Shortest-path length between two surface samples; kInf when disconnected.
  double distance(const SurfaceSample& a, const SurfaceSample& b) const {
    check_sample(a);
    check_sample(b);
    const bool swap = sample_less(b, a);
    const SurfaceSample& src = swap ? b : a;
    const SurfaceSample& dst = swap ? a : b;
    if (src.face == dst.face && src.bary == dst.bary) return 0.0;
    double best = src.face == dst.face ? (src.position - dst.position).norm() : kInf;
    const auto& dst_nodes = face_nodes_[static_cast<size_t>(dst.face)];
    std::array<double, 6> tail{};
    for (int k = 0; k < 6; ++k) tail[static_cast<size_t>(k)] = (positions_[static_cast<size_t>(dst_nodes[static_cast<size_t>(k)])] - dst.position).norm();
    run(seed_from(src), [&](int node, double d) {
      if (d >= best) return false;
      for (int k = 0; k < 6; ++k)
        if (dst_nodes[static_cast<size_t>(k)] == node) best = std::min(best, d + tail[static_cast<size_t>(k)]);
      return true;
    });
    return best;
  }

  /// Geodesic-nearest target to `query`; ties go to the lowest index.
  std::pair<int, double> nearest(const SurfaceSample& query, const std::vector<SurfaceSample>& targets) const {
    TIGHTFIT_CHECK(!targets.empty(), "geodesic_nearest needs at least one target");
    check_sample(query);
    std::vector<double> best(targets.size(), kInf);
    // node -> (target, tail length) links for early exit bookkeeping
    std::vector<std::vector<std::pair<int, double>>> attach;
    std::vector<int> attach_slot(static_cast<size_t>(num_nodes_), -1);
    for (size_t t = 0; t < targets.size(); ++t) {
      check_sample(targets[t]);
      if (targets[t].face == query.face) {
        best[t] = (targets[t].face == query.face && targets[t].bary == query.bary)
                      ? 0.0
                      : (targets[t].position - query.position).norm();
      }
      const auto& nodes = face_nodes_[static_cast<size_t>(targets[t].face)];
      for (int k = 0; k < 6; ++k) {
        const int node = nodes[static_cast<size_t>(k)];
        if (attach_slot[static_cast<size_t>(node)] < 0) {
          attach_slot[static_cast<size_t>(node)] = static_cast<int>(attach.size());
          attach.emplace_back();
        }
        attach[static_cast<size_t>(attach_slot[static_cast<size_t>(node)])].emplace_back(
            static_cast<int>(t), (positions_[static_cast<size_t>(node)] - targets[t].position).norm());
      }
    }
    double current = *std::min_element(best.begin(), best.end());
    run(seed_from(query), [&](int node, double d) {
      if (d > current) return false;
      const int slot = attach_slot[static_cast<size_t>(node)];
      if (slot >= 0)
        for (auto& [t, tail] : attach[static_cast<size_t>(slot)]) {
          best[static_cast<size_t>(t)] = std::min(best[static_cast<size_t>(t)], d + tail);
          current = std::min(current, best[static_cast<size_t>(t)]);
        }
      return true;
    });
    int arg = -1;
    for (size_t t = 0; t < best.size(); ++t)
      if (best[t] < kInf && (arg < 0 || best[t] < best[static_cast<size_t>(arg)])) arg = static_cast<int>(t);
    if (arg < 0) throw NumericalError("no geodesic target is reachable from the query");
    return {arg, best[static_cast<size_t>(arg)]};
  }

  /// Distances from a source sample to every graph node.
  std::vector<double> node_distances(const SurfaceSample& source, double max_distance = kInf) const {
    check_sample(source);
    std::vector<double> out(static_cast<size_t>(num_nodes_), kInf);
    run(seed_from(source), [&](int node, double d) {
      if (d > max_distance) return false;
      out[static_cast<size_t>(node)] = d;
      return true;
    });
    return out;
  }

  /// Distances from a mesh vertex to every graph node.
  std::vector<double> vertex_source_distances(int vertex) const {
    std::vector<double> out(static_cast<size_t>(num_nodes_), kInf);
    run({{vertex, 0.0}}, [&](int node, double d) {
      out[static_cast<size_t>(node)] = d;
      return true;
    });
    return out;
  }

  /// Result of a labelled multi-source run: every node knows its closest source.
  struct SourceField {
    std::vector<double> dist;
    std::vector<int> label;
  };

  /// Multi-source Dijkstra; ties between sources go to the lower source index.
  SourceField multi_source(const std::vector<SurfaceSample>& sources, double max_distance = kInf) const {
    SourceField field{std::vector<double>(static_cast<size_t>(num_nodes_), kInf),
                      std::vector<int>(static_cast<size_t>(num_nodes_), -1)};
    using Item = std::tuple<double, int, int>;  // distance, label, node
    std::priority_queue<Item, std::vector<Item>, std::greater<>> queue;
    auto offer = [&](int node, double d, int label) {
      auto& cd = field.dist[static_cast<size_t>(node)];
      auto& cl = field.label[static_cast<size_t>(node)];
      if (d < cd || (d == cd && label < cl)) {
        cd = d;
        cl = label;
        queue.emplace(d, label, node);
      }
    };
    for (size_t s = 0; s < sources.size(); ++s) {
      check_sample(sources[s]);
      for (auto& [node, d] : seed_from(sources[s])) offer(node, d, static_cast<int>(s));
    }
    while (!queue.empty()) {
      auto [d, label, node] = queue.top();
      queue.pop();
      if (d != field.dist[static_cast<size_t>(node)] || label != field.label[static_cast<size_t>(node)]) continue;
      if (d > max_distance) break;
      for (int e = offsets_[static_cast<size_t>(node)]; e < offsets_[static_cast<size_t>(node) + 1]; ++e) {
        const auto& [next, w] = adjacency_[static_cast<size_t>(e)];
        offer(next, d + w, label);
      }
    }
    return field;
  }

  /// Closest source of a query sample under a multi-source field, with same-face sources
  /// connected directly. Returns (-1, kInf) if nothing is reachable.
  std::pair<int, double> query_field(const SourceField& field, const std::vector<SurfaceSample>& sources,
                                     const std::vector<std::vector<int>>& sources_by_face,
                                     const SurfaceSample& q) const {
    check_sample(q);
    int best_label = -1;
    double best = kInf;
    auto consider = [&](double d, int label) {
      if (d < best || (d == best && label < best_label)) {
        best = d;
        best_label = label;
      }
    };
    for (int s : sources_by_face[static_cast<size_t>(q.face)]) {
      const auto& src = sources[static_cast<size_t>(s)];
      consider(src.bary == q.bary ? 0.0 : (src.position - q.position).norm(), s);
    }
    const auto& nodes = face_nodes_[static_cast<size_t>(q.face)];
    for (int k = 0; k < 6; ++k) {
      const int node = nodes[static_cast<size_t>(k)];
      if (field.label[static_cast<size_t>(node)] < 0) continue;
      consider(field.dist[static_cast<size_t>(node)] + (positions_[static_cast<size_t>(node)] - q.position).norm(),
               field.label[static_cast<size_t>(node)]);
    }
    return {best_label, best};
  }

  std::vector<std::vector<int>> bucket_by_face(const std::vector<SurfaceSample>& samples) const {
    std::vector<std::vector<int>> out(static_cast<size_t>(mesh_.num_faces()));
    for (size_t i = 0; i < samples.size(); ++i) out[static_cast<size_t>(samples[i].face)].push_back(static_cast<int>(i));
    return out;
  }

  /// Number of connected vertex components.
  int component_count() const {
    std::vector<int> comp(static_cast<size_t>(num_nodes_), -1);
    int count = 0;
    for (int v = 0; v < mesh_.num_vertices(); ++v) {
      if (comp[static_cast<size_t>(v)] >= 0) continue;
      std::vector<int> stack{v};
      comp[static_cast<size_t>(v)] = count;
      while (!stack.empty()) {
        const int n = stack.back();
        stack.pop_back();
        for (int e = offsets_[static_cast<size_t>(n)]; e < offsets_[static_cast<size_t>(n) + 1]; ++e) {
          const int next = adjacency_[static_cast<size_t>(e)].first;
          if (comp[static_cast<size_t>(next)] < 0) {
            comp[static_cast<size_t>(next)] = count;
            stack.push_back(next);
          }
        }
      }
      ++count;
    }
    return count;
  }

 private:
  std::int64_t edge_key(int a, int b) const {
    const std::int64_t n = mesh_.num_vertices();
    return static_cast<std::int64_t>(std::min(a, b)) * n + std::max(a, b);
  }

  static bool sample_less(const SurfaceSample& a, const SurfaceSample& b) {
    return std::tie(a.face, a.bary[0], a.bary[1], a.bary[2]) < std::tie(b.face, b.bary[0], b.bary[1], b.bary[2]);
  }

  void check_sample(const SurfaceSample& s) const {
    TIGHTFIT_CHECK(s.face >= 0 && s.face < mesh_.num_faces(), "surface sample face index out of range");
  }

  std::vector<std::pair<int, double>> seed_from(const SurfaceSample& s) const {
    std::vector<std::pair<int, double>> seeds;
    for (int node : face_nodes_[static_cast<size_t>(s.face)])
      seeds.emplace_back(node, (positions_[static_cast<size_t>(node)] - s.position).norm());
    return seeds;
  }

  // Dijkstra from seeded nodes; `visit(node, dist)` returns false to stop.
  template <typename Visit>
  void run(const std::vector<std::pair<int, double>>& seeds, Visit&& visit) const {
    std::vector<double> dist(static_cast<size_t>(num_nodes_), kInf);
    using Item = std::pair<double, int>;
    std::priority_queue<Item, std::vector<Item>, std::greater<>> queue;
    for (auto& [node, d] : seeds) {
      if (d < dist[static_cast<size_t>(node)]) {
        dist[static_cast<size_t>(node)] = d;
        queue.emplace(d, node);
      }
    }
    while (!queue.empty()) {
      auto [d, node] = queue.top();
      queue.pop();
      if (d != dist[static_cast<size_t>(node)]) continue;
      if (!visit(node, d)) return;
      for (int e = offsets_[static_cast<size_t>(node)]; e < offsets_[static_cast<size_t>(node) + 1]; ++e) {
        const auto& [next, w] = adjacency_[static_cast<size_t>(e)];
        const double nd = d + w;
        if (nd < dist[static_cast<size_t>(next)]) {
          dist[static_cast<size_t>(next)] = nd;
          queue.emplace(nd, next);
        }
      }
    }
  }

  TriMesh mesh_;
  int num_nodes_ = 0;
  std::vector<Vec3> positions_;
  std::vector<std::array<int, 6>> face_nodes_;
  std::vector<int> offsets_;
  std::vector<std::pair<int, double>> adjacency_;
};

inline double geodesic_distance(const TriMesh& mesh, const SurfaceSample& a, const SurfaceSample& b) {
  return GeodesicGraph(mesh).distance(a, b);
}

inline std::pair<int, double> geodesic_nearest(const TriMesh& mesh, const SurfaceSample& query,
                                               const std::vector<SurfaceSample>& targets) {
  return GeodesicGraph(mesh).nearest(query, targets);
}

}  // namespace tightfit
