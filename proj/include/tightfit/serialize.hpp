#pragma once

#include "tightfit/fitting.hpp"
#include "tightfit/group.hpp"
#include "tightfit/metrics.hpp"
#include "tightfit/model_io.hpp"
#include "tightfit/stick_model.hpp"
#include "tightfit/synth.hpp"

#include <set>

namespace tightfit {

namespace detail {

inline json vec_to_json(const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

inline Eigen::VectorXd vec_from_json(const json& j, const char* what) {
  if (!j.is_array()) throw ValidationError(std::string(what) + " must be an array of numbers");
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

inline json vec3_to_json(const Vec3& v) { return {v.x(), v.y(), v.z()}; }

inline Vec3 vec3_from_json(const json& j, const char* what) {
  if (!j.is_array() || j.size() != 3) throw ValidationError(std::string(what) + " must be a 3-vector");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

// Rejects keys outside `allowed` so that typos in config files do not pass silently.
inline void check_keys(const json& j, std::initializer_list<const char*> allowed, const char* what) {
  if (!j.is_object()) throw ValidationError(std::string(what) + " must be a JSON object");
  const std::set<std::string> ok(allowed.begin(), allowed.end());
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!ok.count(it.key())) throw ValidationError(std::string("unknown key '") + it.key() + "' in " + what);
}

template <typename T>
void read_opt(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

// Maps nlohmann parse/type errors onto ValidationError.
template <typename F>
auto guarded(const char* what, F&& f) {
  try {
    return f();
  } catch (const json::exception& e) {
    throw ValidationError(std::string("malformed ") + what + ": " + e.what());
  }
}

}  // namespace detail

inline json params_to_json(const BodyParams& p) {
  return {{"beta", detail::vec_to_json(p.beta)}, {"theta", detail::vec_to_json(p.theta)}, {"t", detail::vec3_to_json(p.t)}};
}

inline BodyParams params_from_json(const json& j) {
  return detail::guarded("body parameters", [&] {
    detail::check_keys(j, {"beta", "theta", "t"}, "body parameters");
    BodyParams p;
    p.beta = detail::vec_from_json(detail::require(j, "beta"), "beta");
    p.theta = detail::vec_from_json(detail::require(j, "theta"), "theta");
    p.t = detail::vec3_from_json(detail::require(j, "t"), "t");
    TIGHTFIT_CHECK(p.theta.size() % 3 == 0, "theta length must be a multiple of 3");
    TIGHTFIT_CHECK(p.beta.allFinite() && p.theta.allFinite() && p.t.allFinite(), "body parameters must be finite");
    return normalize_params(p);
  });
}

/// Marker layout as (face, barycentric) pairs.
inline json markers_to_json(const MarkerSet& m) {
  json sites = json::array();
  for (const auto& s : m.sites) sites.push_back({{"face", s.face}, {"bary", detail::vec3_to_json(s.bary)}});
  return {{"sites", sites}};
}

/// Reads a layout and evaluates it on `mesh` (usually the template rest mesh).
inline MarkerSet markers_from_json(const json& j, const TriMesh& mesh) {
  return detail::guarded("marker file", [&] {
    const Points normals = vertex_normals(mesh);
    MarkerSet m;
    for (const auto& s : detail::require(j, "sites")) {
      const int face = s.at("face").get<int>();
      const Vec3 bary = detail::vec3_from_json(s.at("bary"), "bary");
      TIGHTFIT_CHECK(face >= 0 && face < mesh.num_faces(), "marker face index out of range");
      TIGHTFIT_CHECK((bary.array() >= 0).all() && std::abs(bary.sum() - 1.0) <= 1e-9, "marker barycentrics must be a convex triple");
      m.sites.push_back(make_sample(mesh, normals, face, bary));
    }
    TIGHTFIT_CHECK(m.size() >= 4, "a marker layout needs at least 4 sites");
    return m;
  });
}

/// Field file: parallel arrays plus a header and the scan points they belong to.
struct FieldFile {
  TightnessField field;
  Points points;
  std::vector<int> provenance;  // 0 geodesic, 1 euclidean; empty for predicted fields
  double lambda = 0;
  int num_markers = 0;
  std::uint64_t seed = 0;
};

inline json field_to_json(const FieldFile& f) {
  json dirs = json::array();
  for (const auto& d : f.field.directions) dirs.push_back(detail::vec3_to_json(d));
  const auto geo = std::count(f.provenance.begin(), f.provenance.end(), 0);
  const auto euc = std::count(f.provenance.begin(), f.provenance.end(), 1);
  json j;
  j["header"] = {{"lambda", f.lambda},
                 {"markers", f.num_markers},
                 {"seed", f.seed},
                 {"points", f.field.size()},
                 {"geodesic_count", geo},
                 {"euclidean_count", euc}};
  j["points"] = detail::points_to_json(f.points);
  j["directions"] = dirs;
  j["magnitudes"] = f.field.magnitudes;
  j["labels"] = f.field.labels;
  j["confidences"] = f.field.confidences;
  j["provenance"] = f.provenance;
  return j;
}

inline FieldFile field_from_json(const json& j) {
  return detail::guarded("tightness field", [&] {
    FieldFile f;
    const json& h = detail::require(j, "header");
    f.lambda = h.at("lambda").get<double>();
    f.num_markers = h.at("markers").get<int>();
    f.seed = h.at("seed").get<std::uint64_t>();
    f.points = detail::points_from_json(detail::require(j, "points"), "points");
    for (const auto& d : detail::require(j, "directions")) f.field.directions.push_back(detail::vec3_from_json(d, "direction"));
    f.field.magnitudes = detail::require(j, "magnitudes").get<std::vector<double>>();
    f.field.labels = detail::require(j, "labels").get<std::vector<int>>();
    f.field.confidences = detail::require(j, "confidences").get<std::vector<double>>();
    if (j.contains("provenance")) f.provenance = j.at("provenance").get<std::vector<int>>();
    TIGHTFIT_CHECK(f.points.rows() == f.field.size(), "field arrays and points must have equal length");
    validate_field(f.field, f.num_markers);
    return f;
  });
}

inline json fit_config_to_json(const FitConfig& c) {
  return {{"top_m", c.top_m},
          {"alpha", c.alpha},
          {"stage1_steps", c.stage1_steps},
          {"stage1_scale", c.stage1_scale},
          {"stage1_shape_coeffs", c.stage1_shape_coeffs},
          {"stage2_steps", c.stage2_steps},
          {"stage2_scale", c.stage2_scale},
          {"lm_damping_init", c.lm_damping_init},
          {"lm_damping_factor", c.lm_damping_factor},
          {"convergence_tol", c.convergence_tol}};
}

inline FitConfig fit_config_from_json(const json& j) {
  return detail::guarded("fit config", [&] {
    detail::check_keys(j,
                       {"top_m", "alpha", "stage1_steps", "stage1_scale", "stage1_shape_coeffs", "stage2_steps",
                        "stage2_scale", "lm_damping_init", "lm_damping_factor", "convergence_tol"},
                       "fit config");
    FitConfig c;
    detail::read_opt(j, "top_m", c.top_m);
    detail::read_opt(j, "alpha", c.alpha);
    detail::read_opt(j, "stage1_steps", c.stage1_steps);
    detail::read_opt(j, "stage1_scale", c.stage1_scale);
    detail::read_opt(j, "stage1_shape_coeffs", c.stage1_shape_coeffs);
    detail::read_opt(j, "stage2_steps", c.stage2_steps);
    detail::read_opt(j, "stage2_scale", c.stage2_scale);
    detail::read_opt(j, "lm_damping_init", c.lm_damping_init);
    detail::read_opt(j, "lm_damping_factor", c.lm_damping_factor);
    detail::read_opt(j, "convergence_tol", c.convergence_tol);
    validate_fit_config(c);
    return c;
  });
}

/// Wall-clock time is deliberately left out so that result files are reproducible.
inline json fit_result_to_json(const FitResult& r) {
  return {{"params", params_to_json(r.params)},
          {"residual_trace", r.residual_trace},
          {"converged", r.converged},
          {"accepted_steps", r.accepted_steps},
          {"marker_rmse", r.marker_rmse}};
}

inline FitResult fit_result_from_json(const json& j) {
  return detail::guarded("fit result", [&] {
    FitResult r;
    r.params = params_from_json(detail::require(j, "params"));
    r.residual_trace = detail::require(j, "residual_trace").get<std::vector<double>>();
    r.converged = detail::require(j, "converged").get<bool>();
    r.accepted_steps = detail::require(j, "accepted_steps").get<int>();
    r.marker_rmse = detail::require(j, "marker_rmse").get<double>();
    return r;
  });
}

inline json metrics_to_json(const MetricReport& m) {
  json j = {{"v2v_cm", m.v2v_cm},
            {"mpjpe_cm", m.mpjpe_cm},
            {"chamfer_cm", m.chamfer_cm},
            {"angular_mean", m.angular_mean},
            {"angular_median", m.angular_median},
            {"shape_mae", m.shape_mae}};
  return j;
}

inline std::string metrics_csv_header() { return "run,v2v_cm,mpjpe_cm,chamfer_cm,angular_mean,angular_median,shape_mae_0,shape_mae_1,shape_mae_2\n"; }

inline std::string metrics_csv_row(const std::string& run, const MetricReport& m) {
  char buf[512];
  std::snprintf(buf, sizeof(buf), "%s,%.9f,%.9f,%.9f,%.9f,%.9f", run.c_str(), m.v2v_cm, m.mpjpe_cm, m.chamfer_cm,
                m.angular_mean, m.angular_median);
  std::string row = buf;
  for (int c = 0; c < 3; ++c) {
    std::snprintf(buf, sizeof(buf), ",%.9f", c < static_cast<int>(m.shape_mae.size()) ? m.shape_mae[static_cast<size_t>(c)] : 0.0);
    row += buf;
  }
  return row + "\n";
}

/// JSON array of row-major 3x3 matrices in canonical group order.
inline json group_to_json(const RotationGroup& g) {
  json out = json::array();
  for (const Mat3& r : g.elements) {
    json m = json::array();
    for (int a = 0; a < 3; ++a)
      for (int b = 0; b < 3; ++b) m.push_back(r(a, b));
    out.push_back(m);
  }
  return out;
}

}  // namespace tightfit
