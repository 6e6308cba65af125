#pragma once

#include "tightfit/body_model.hpp"
#include "tightfit/bvh.hpp"
#include "tightfit/geodesic.hpp"
#include "tightfit/kdtree.hpp"

namespace tightfit {

/// Per scan point: unit direction d, magnitude b >= 0, marker label l and
/// confidence c in [0, 1]. The tightness vector is v = b * d.
struct TightnessField {
  std::vector<Vec3> directions;
  std::vector<double> magnitudes;
  std::vector<int> labels;
  std::vector<double> confidences;

  int size() const { return static_cast<int>(directions.size()); }

  void resize(int n) {
    directions.assign(static_cast<size_t>(n), Vec3::UnitZ());
    magnitudes.assign(static_cast<size_t>(n), 0.0);
    labels.assign(static_cast<size_t>(n), 0);
    confidences.assign(static_cast<size_t>(n), 0.0);
  }

  Vec3 vector(int i) const { return magnitudes[static_cast<size_t>(i)] * directions[static_cast<size_t>(i)]; }

  bool operator==(const TightnessField&) const = default;
};

inline void validate_field(const TightnessField& f, int num_markers) {
  const size_t n = f.directions.size();
  TIGHTFIT_CHECK(f.magnitudes.size() == n && f.labels.size() == n && f.confidences.size() == n,
                 "tightness field arrays must have equal length");
  for (size_t i = 0; i < n; ++i) {
    TIGHTFIT_CHECK(std::abs(f.directions[i].norm() - 1.0) <= 1e-9, "tightness directions must be unit vectors");
    TIGHTFIT_CHECK(f.magnitudes[i] >= 0.0 && std::isfinite(f.magnitudes[i]), "tightness magnitudes must be >= 0");
    TIGHTFIT_CHECK(f.labels[i] >= 0 && f.labels[i] < num_markers, "tightness label out of range");
    TIGHTFIT_CHECK(f.confidences[i] >= 0.0 && f.confidences[i] <= 1.0, "tightness confidences must lie in [0, 1]");
  }
}

/// Same face/barycentric sites re-evaluated on another mesh with identical topology.
inline MarkerSet rebind_markers(const MarkerSet& markers, const TriMesh& mesh) {
  const Points normals = vertex_normals(mesh);
  MarkerSet out;
  for (const auto& s : markers.sites) {
    TIGHTFIT_CHECK(s.face >= 0 && s.face < mesh.num_faces(), "marker face index out of range");
    out.sites.push_back(make_sample(mesh, normals, s.face, s.bary));
  }
  return out;
}

/// Sample sitting exactly on vertex v (lowest-index incident face, one-hot barycentric).
inline SurfaceSample vertex_sample(const TriMesh& mesh, const Points& normals, int v) {
  for (int f = 0; f < mesh.num_faces(); ++f)
    for (int k = 0; k < 3; ++k)
      if (mesh.faces(f, k) == v) return make_sample(mesh, normals, f, Vec3::Unit(k));
  throw ValidationError("vertex " + std::to_string(v) + " is not referenced by any face");
}

/// Farthest-point marker layout under the graph geodesic metric.
///
/// The first site is the vertex nearest the area-weighted surface centroid.
/// Exact distance ties are broken by a seeded random vertex priority.
inline MarkerSet select_markers(const TriMesh& body, int k, std::uint64_t seed) {
  TIGHTFIT_CHECK(k >= 1, "marker count must be at least 1");
  TIGHTFIT_CHECK(k <= body.num_vertices(), "marker count exceeds the vertex count");
  const GeodesicGraph graph(body);
  if (graph.component_count() != 1) throw ValidationError("marker selection needs a connected mesh");

  Vec3 centroid = Vec3::Zero();
  double area = 0;
  for (int f = 0; f < body.num_faces(); ++f) {
    const double a = body.face_area(f);
    centroid += a * (body.corner(f, 0) + body.corner(f, 1) + body.corner(f, 2)) / 3.0;
    area += a;
  }
  centroid /= area;

  std::vector<std::uint64_t> priority(static_cast<size_t>(body.num_vertices()));
  std::mt19937_64 rng(seed);
  for (auto& p : priority) p = rng();

  int first = 0;
  for (int v = 1; v < body.num_vertices(); ++v)
    if ((body.vertex(v) - centroid).squaredNorm() < (body.vertex(first) - centroid).squaredNorm()) first = v;

  const Points normals = vertex_normals(body);
  std::vector<int> chosen{first};
  std::vector<double> dist(static_cast<size_t>(body.num_vertices()), kInf);
  while (static_cast<int>(chosen.size()) < k) {
    const auto fresh = graph.vertex_source_distances(chosen.back());
    for (int v = 0; v < body.num_vertices(); ++v)
      dist[static_cast<size_t>(v)] = std::min(dist[static_cast<size_t>(v)], fresh[static_cast<size_t>(v)]);
    int best = -1;
    for (int v = 0; v < body.num_vertices(); ++v) {
      const double d = dist[static_cast<size_t>(v)];
      if (d == 0.0 || d == kInf) continue;
      if (best < 0 || d > dist[static_cast<size_t>(best)] ||
          (d == dist[static_cast<size_t>(best)] && priority[static_cast<size_t>(v)] < priority[static_cast<size_t>(best)]))
        best = v;
    }
    if (best < 0) throw NumericalError("marker selection ran out of distinct vertices");
    chosen.push_back(best);
  }
  MarkerSet out;
  for (int v : chosen) out.sites.push_back(vertex_sample(body, normals, v));
  return out;
}

/// For every marker, the geodesically nearest other marker on `body`.
inline std::vector<int> marker_neighbors(const TriMesh& body, const MarkerSet& markers) {
  TIGHTFIT_CHECK(markers.size() >= 2, "marker neighbours need at least two markers");
  const GeodesicGraph graph(body);
  const MarkerSet sites = rebind_markers(markers, body);
  std::vector<int> out(static_cast<size_t>(markers.size()));
  for (int k = 0; k < markers.size(); ++k) {
    std::vector<SurfaceSample> others;
    std::vector<int> index;
    for (int o = 0; o < markers.size(); ++o) {
      if (o == k) continue;
      others.push_back(sites.sites[static_cast<size_t>(o)]);
      index.push_back(o);
    }
    out[static_cast<size_t>(k)] = index[static_cast<size_t>(graph.nearest(sites.sites[static_cast<size_t>(k)], others).first)];
  }
  return out;
}

enum class Provenance { geodesic, euclidean };

struct Correspondence {
  SurfaceSample inner;  // y on the body
  int anchor = -1;      // anchor index, -1 for the Euclidean fallback
  Provenance provenance = Provenance::geodesic;
};

/// Dense map from scattered outer points to inner body points.
struct CorrespondenceMap {
  std::vector<SurfaceSample> scattered;  // x on the outer surface
  std::vector<Correspondence> entries;

  int size() const { return static_cast<int>(entries.size()); }
  int count(Provenance p) const {
    return static_cast<int>(std::count_if(entries.begin(), entries.end(), [&](const auto& e) { return e.provenance == p; }));
  }
};

/// Anchor pairs: outer hit x_j of the normal ray from inner sample y_j.
struct AnchorSet {
  std::vector<SurfaceSample> inner;
  std::vector<SurfaceSample> outer;
  int size() const { return static_cast<int>(outer.size()); }
};

struct CorrespondenceConfig {
  int n_inner = 5000;
  int n_scatter = 5000;
  double geo_threshold = 0.01;
  std::uint64_t seed = 0;
};

struct CorrespondenceResult {
  AnchorSet anchors;
  CorrespondenceMap map;
  int dropped_inner = 0;  // inner samples whose ray missed the outer surface
};

/// Ray origins are pulled back by this distance so that a coincident outer surface is still hit.
inline constexpr double kAnchorRayBackoff = 1e-5;

/// Shoots each inner sample along its normal onto the outer surface.
inline AnchorSet shoot_anchors(const std::vector<SurfaceSample>& inner, const MeshBvh& outer, int* dropped = nullptr) {
  const Points outer_normals = vertex_normals(outer.mesh());
  AnchorSet anchors;
  int missed = 0;
  for (const auto& y : inner) {
    const auto hit = outer.intersect(y.position - kAnchorRayBackoff * y.normal, y.normal);
    if (!hit) {
      ++missed;
      continue;
    }
    anchors.inner.push_back(y);
    anchors.outer.push_back(make_sample(outer.mesh(), outer_normals, hit->face, hit->bary));
  }
  if (dropped) *dropped = missed;
  return anchors;
}

/// Scattered points inherit the inner point of their geodesic-nearest anchor when it
/// lies within `geo_threshold`; otherwise they take the Euclidean-nearest inner sample.
inline CorrespondenceMap correspond_scattered(const GeodesicGraph& outer_graph, const AnchorSet& anchors,
                                             const std::vector<SurfaceSample>& scattered,
                                             const std::vector<SurfaceSample>& inner_pool, double geo_threshold) {
  TIGHTFIT_CHECK(anchors.size() > 0, "no anchor survived the ray casting");
  TIGHTFIT_CHECK(!inner_pool.empty(), "Euclidean fallback needs inner samples");
  TIGHTFIT_CHECK(geo_threshold >= 0, "geodesic threshold must be nonnegative");
  const auto field = outer_graph.multi_source(anchors.outer, geo_threshold);
  const auto by_face = outer_graph.bucket_by_face(anchors.outer);
  const KdTree inner_tree(sample_positions(inner_pool));
  CorrespondenceMap map;
  map.scattered = scattered;
  map.entries.reserve(scattered.size());
  for (const auto& x : scattered) {
    const auto [anchor, d] = outer_graph.query_field(field, anchors.outer, by_face, x);
    Correspondence c;
    if (anchor >= 0 && d <= geo_threshold) {
      c.inner = anchors.inner[static_cast<size_t>(anchor)];
      c.anchor = anchor;
      c.provenance = Provenance::geodesic;
    } else {
      c.inner = inner_pool[static_cast<size_t>(inner_tree.nearest(x.position).first)];
      c.provenance = Provenance::euclidean;
    }
    map.entries.push_back(c);
  }
  return map;
}

inline CorrespondenceResult build_correspondence(const TriMesh& body, const TriMesh& outer,
                                                 const CorrespondenceConfig& config) {
  TIGHTFIT_CHECK(config.n_inner >= 1 && config.n_scatter >= 1, "sample counts must be at least 1");
  const auto inner = sample_surface(body, config.n_inner, derive_seed(config.seed, 0));
  const MeshBvh outer_bvh(outer);
  CorrespondenceResult result;
  result.anchors = shoot_anchors(inner, outer_bvh, &result.dropped_inner);
  if (result.anchors.size() == 0) throw NumericalError("no anchor survived the ray casting");
  const auto scattered = sample_surface(outer, config.n_scatter, derive_seed(config.seed, 1));
  const GeodesicGraph outer_graph(outer);
  result.map = correspond_scattered(outer_graph, result.anchors, scattered, inner, config.geo_threshold);
  return result;
}

/// Tightness field from a correspondence map (confidence c = exp(-lambda * g)).
///
/// Labels come from a multi-source geodesic run from the markers on `body`; a
/// zero-length tightness vector takes the inward body normal as its direction.
inline TightnessField ground_truth_field(const CorrespondenceMap& corr, const TriMesh& body, const MarkerSet& markers,
                                         double lambda, std::vector<double>* marker_distance = nullptr) {
  TIGHTFIT_CHECK(lambda > 0, "lambda must be positive");
  TIGHTFIT_CHECK(markers.size() >= 1, "ground truth needs at least one marker");
  const GeodesicGraph graph(body);
  const MarkerSet sites = rebind_markers(markers, body);
  const auto field = graph.multi_source(sites.sites);
  const auto by_face = graph.bucket_by_face(sites.sites);
  TightnessField out;
  out.resize(corr.size());
  if (marker_distance) marker_distance->assign(static_cast<size_t>(corr.size()), 0.0);
  for (int i = 0; i < corr.size(); ++i) {
    const auto& y = corr.entries[static_cast<size_t>(i)].inner;
    const Vec3 v = y.position - corr.scattered[static_cast<size_t>(i)].position;
    const double b = v.norm();
    out.magnitudes[static_cast<size_t>(i)] = b;
    out.directions[static_cast<size_t>(i)] = b > 0 ? Vec3(v / b) : Vec3(-y.normal);
    const auto [label, g] = graph.query_field(field, sites.sites, by_face, y);
    if (label < 0) throw NumericalError("inner point cannot reach any marker");
    out.labels[static_cast<size_t>(i)] = label;
    out.confidences[static_cast<size_t>(i)] = std::exp(-lambda * g);
    if (marker_distance) (*marker_distance)[static_cast<size_t>(i)] = g;
  }
  return out;
}

struct NoiseConfig {
  double sigma_angle = 0;      // radians
  double sigma_magnitude = 0;  // relative
  double flip_probability = 0;
  double sigma_confidence = 0;
};

inline void validate_noise(const NoiseConfig& n) {
  TIGHTFIT_CHECK(n.sigma_angle >= 0 && n.sigma_magnitude >= 0 && n.sigma_confidence >= 0, "noise sigmas must be >= 0");
  TIGHTFIT_CHECK(n.flip_probability >= 0 && n.flip_probability <= 1, "flip probability must lie in [0, 1]");
}

/// Stand-in predictor: the ground-truth field with seeded noise.
///
/// Directions are turned about a random axis perpendicular to d by |N(0, sigma)|;
/// magnitudes are scaled by (1 + N(0, sigma_b)) and clamped at 0; labels flip to
/// `neighbors[l]` with the given probability; confidences get additive noise and
/// are clamped to [0, 1]. Every point consumes the same random draws whatever the
/// noise levels, so zero noise reproduces the input exactly.
inline TightnessField oracle_predict(const TightnessField& gt, const NoiseConfig& noise, std::uint64_t seed,
                                     const std::vector<int>& neighbors = {}) {
  validate_noise(noise);
  if (noise.flip_probability > 0) {
    for (int l : gt.labels)
      TIGHTFIT_CHECK(l >= 0 && l < static_cast<int>(neighbors.size()), "label flips need a neighbour for every label");
  }
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  TightnessField out = gt;
  for (int i = 0; i < gt.size(); ++i) {
    const size_t s = static_cast<size_t>(i);
    const Vec3 d = gt.directions[s];
    Vec3 axis;
    do {
      const Vec3 u(normal(rng), normal(rng), normal(rng));
      axis = u - u.dot(d) * d;
    } while (axis.norm() < 1e-9);
    const double angle = std::abs(noise.sigma_angle * normal(rng));
    const double mag = normal(rng);
    const double flip = unit(rng);
    const double conf = normal(rng);
    if (angle > 0) out.directions[s] = (rodrigues(axis.normalized() * angle) * d).normalized();
    out.magnitudes[s] = std::max(0.0, gt.magnitudes[s] * (1.0 + noise.sigma_magnitude * mag));
    if (flip < noise.flip_probability) out.labels[s] = neighbors[static_cast<size_t>(gt.labels[s])];
    out.confidences[s] = std::clamp(gt.confidences[s] + noise.sigma_confidence * conf, 0.0, 1.0);
  }
  return out;
}

struct LossWeights {
  double direction = 1.0;
  double magnitude = 1.0;
  double label = 1.0;
  double confidence = 1.0;
};

struct LossTerms {
  double direction = 0;
  double magnitude = 0;
  double label = 0;
  double confidence = 0;
  double total = 0;
};

/// Gradients of the weighted total w.r.t. the predicted quantities.
struct LossGradients {
  std::vector<Vec3> direction;  // w.r.t. the raw predicted direction vectors
  std::vector<double> magnitude;
  std::vector<double> confidence;
  Eigen::MatrixXd label_probs;
};

/// Direction term 1 - cos, squared errors for magnitude and confidence, and mean
/// negative log probability of the true label. Per-term values are unweighted.
///
/// `pred.directions` may be unnormalized; `label_probs` is N x K.
inline LossTerms losses(const TightnessField& pred, const TightnessField& gt, const LossWeights& w,
                        const Eigen::MatrixXd& label_probs, LossGradients* grad = nullptr) {
  const int n = gt.size();
  TIGHTFIT_CHECK(n > 0, "losses need at least one point");
  TIGHTFIT_CHECK(pred.size() == n && static_cast<int>(pred.magnitudes.size()) == n &&
                     static_cast<int>(pred.confidences.size()) == n && static_cast<int>(gt.magnitudes.size()) == n &&
                     static_cast<int>(gt.confidences.size()) == n && static_cast<int>(gt.labels.size()) == n,
                 "predicted and ground-truth fields must be aligned");
  TIGHTFIT_CHECK(label_probs.rows() == n, "label probability table needs one row per point");
  if (grad) {
    grad->direction.assign(static_cast<size_t>(n), Vec3::Zero());
    grad->magnitude.assign(static_cast<size_t>(n), 0.0);
    grad->confidence.assign(static_cast<size_t>(n), 0.0);
    grad->label_probs = Eigen::MatrixXd::Zero(label_probs.rows(), label_probs.cols());
  }
  LossTerms t;
  const double inv_n = 1.0 / n;
  for (int i = 0; i < n; ++i) {
    const size_t s = static_cast<size_t>(i);
    const Vec3& p = pred.directions[s];
    const Vec3& g = gt.directions[s];
    const double np = p.norm(), ng = g.norm();
    if (!(np > 0) || !(ng > 0)) throw NumericalError("zero-length direction in cosine loss");
    const double cosv = p.dot(g) / (np * ng);
    t.direction += (1.0 - cosv) * inv_n;

    const double db = pred.magnitudes[s] - gt.magnitudes[s];
    t.magnitude += db * db * inv_n;
    const double dc = pred.confidences[s] - gt.confidences[s];
    t.confidence += dc * dc * inv_n;

    const int l = gt.labels[s];
    TIGHTFIT_CHECK(l >= 0 && l < label_probs.cols(), "label out of range of the probability table");
    const double prob = label_probs(i, l);
    if (!(prob > 0)) throw NumericalError("true-label probability must be positive");
    t.label -= std::log(prob) * inv_n;

    if (grad) {
      grad->direction[s] = -w.direction * inv_n * (g / (np * ng) - cosv * p / (np * np));
      grad->magnitude[s] = w.magnitude * inv_n * 2.0 * db;
      grad->confidence[s] = w.confidence * inv_n * 2.0 * dc;
      grad->label_probs(i, l) = -w.label * inv_n / prob;
    }
  }
  t.total = w.direction * t.direction + w.magnitude * t.magnitude + w.label * t.label + w.confidence * t.confidence;
  return t;
}

/// One-hot probability table for the labels of a field (probability 1 on the label).
inline Eigen::MatrixXd one_hot_probs(const TightnessField& f, int num_markers) {
  Eigen::MatrixXd p = Eigen::MatrixXd::Zero(f.size(), num_markers);
  for (int i = 0; i < f.size(); ++i) p(i, f.labels[static_cast<size_t>(i)]) = 1.0;
  return p;
}

}  // namespace tightfit
