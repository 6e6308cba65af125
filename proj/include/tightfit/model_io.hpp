#pragma once

#include "tightfit/body_model.hpp"

#include <json.hpp>

#include <filesystem>
#include <fstream>

namespace tightfit {

using nlohmann::json;

namespace detail {

inline json points_to_json(const Points& p) {
  json out = json::array();
  for (Eigen::Index i = 0; i < p.rows(); ++i) out.push_back({p(i, 0), p(i, 1), p(i, 2)});
  return out;
}

inline Points points_from_json(const json& j, const char* what) {
  if (!j.is_array()) throw ValidationError(std::string(what) + " must be an array of 3-vectors");
  Points p(static_cast<Eigen::Index>(j.size()), 3);
  for (size_t i = 0; i < j.size(); ++i) {
    if (!j[i].is_array() || j[i].size() != 3) throw ValidationError(std::string(what) + " entries must have 3 components");
    for (int c = 0; c < 3; ++c) p(static_cast<Eigen::Index>(i), c) = j[i][static_cast<size_t>(c)].get<double>();
  }
  return p;
}

// Basis stored as [slab][vertex][3].
inline json basis_to_json(const Eigen::MatrixXd& basis) {
  json out = json::array();
  for (Eigen::Index s = 0; s < basis.cols(); ++s) out.push_back(points_to_json(unflatten(basis.col(s))));
  return out;
}

inline Eigen::MatrixXd basis_from_json(const json& j, int nv, const char* what) {
  if (!j.is_array()) throw ValidationError(std::string(what) + " must be an array of slabs");
  Eigen::MatrixXd basis(3 * nv, static_cast<Eigen::Index>(j.size()));
  for (size_t s = 0; s < j.size(); ++s) {
    const Points slab = points_from_json(j[s], what);
    if (slab.rows() != nv) throw ValidationError(std::string(what) + " slab has the wrong vertex count");
    basis.col(static_cast<Eigen::Index>(s)) = flatten(slab);
  }
  return basis;
}

inline const json& require(const json& j, const char* key) {
  if (!j.contains(key)) throw ValidationError(std::string("model file is missing field '") + key + "'");
  return j.at(key);
}

}  // namespace detail

inline json model_to_json(const BodyTemplate& m) {
  json j;
  j["vertices"] = detail::points_to_json(m.template_vertices);
  json faces = json::array();
  for (Eigen::Index f = 0; f < m.faces.rows(); ++f) faces.push_back({m.faces(f, 0), m.faces(f, 1), m.faces(f, 2)});
  j["faces"] = faces;
  j["shape_basis"] = detail::basis_to_json(m.shape_basis);
  json reg = json::array();
  for (int r = 0; r < m.joint_regressor.outerSize(); ++r)
    for (SparseRows::InnerIterator it(m.joint_regressor, r); it; ++it) reg.push_back({it.row(), it.col(), it.value()});
  j["joint_regressor"] = reg;
  json weights = json::array();
  for (int v = 0; v < m.num_vertices(); ++v) {
    json row = json::array();
    for (int jj = 0; jj < m.num_joints(); ++jj) row.push_back(m.skinning_weights.coeff(v, jj));
    weights.push_back(row);
  }
  j["skinning_weights"] = weights;
  j["parents"] = m.parents;
  if (m.has_pose_correctives()) j["pose_corrective_basis"] = detail::basis_to_json(m.pose_corrective_basis);
  return j;
}

/// Parses and validates a model. Skinning rows off by at most 1e-3 are renormalized;
/// larger deviations are rejected.
inline BodyTemplate model_from_json(const json& j) {
  using detail::require;
  BodyTemplate m;
  try {
    m.template_vertices = detail::points_from_json(require(j, "vertices"), "vertices");
    const int nv = m.num_vertices();
    const json& faces = require(j, "faces");
    m.faces.resize(static_cast<Eigen::Index>(faces.size()), 3);
    for (size_t f = 0; f < faces.size(); ++f)
      for (int k = 0; k < 3; ++k) m.faces(static_cast<Eigen::Index>(f), k) = faces.at(f).at(static_cast<size_t>(k)).get<int>();
    m.parents = require(j, "parents").get<std::vector<int>>();
    const int nj = m.num_joints();
    m.shape_basis = detail::basis_from_json(require(j, "shape_basis"), nv, "shape_basis");
    if (j.contains("pose_corrective_basis"))
      m.pose_corrective_basis = detail::basis_from_json(j.at("pose_corrective_basis"), nv, "pose_corrective_basis");

    std::vector<Eigen::Triplet<double>> reg;
    for (const auto& t : require(j, "joint_regressor")) {
      const int r = t.at(0).get<int>(), c = t.at(1).get<int>();
      if (r < 0 || r >= nj || c < 0 || c >= nv) throw ValidationError("joint_regressor entry out of range");
      reg.emplace_back(r, c, t.at(2).get<double>());
    }
    m.joint_regressor.resize(nj, nv);
    m.joint_regressor.setFromTriplets(reg.begin(), reg.end());
    m.joint_regressor.makeCompressed();

    const json& weights = require(j, "skinning_weights");
    if (static_cast<int>(weights.size()) != nv) throw ValidationError("skinning_weights must have one row per vertex");
    std::vector<Eigen::Triplet<double>> wts;
    for (int v = 0; v < nv; ++v) {
      const auto row = weights.at(static_cast<size_t>(v)).get<std::vector<double>>();
      if (static_cast<int>(row.size()) != nj) throw ValidationError("skinning_weights row must have one entry per joint");
      double sum = 0;
      for (double w : row) {
        if (!(w >= 0)) throw ValidationError("skinning weights must be nonnegative");
        sum += w;
      }
      const double dev = std::abs(sum - 1.0);
      if (dev > 1e-3)
        throw ValidationError("skinning weight row " + std::to_string(v) + " sums to " + std::to_string(sum));
      const double scale = dev > 1e-6 ? 1.0 / sum : 1.0;
      for (int jj = 0; jj < nj; ++jj)
        if (row[static_cast<size_t>(jj)] != 0) wts.emplace_back(v, jj, row[static_cast<size_t>(jj)] * scale);
    }
    m.skinning_weights.resize(nv, nj);
    m.skinning_weights.setFromTriplets(wts.begin(), wts.end());
    m.skinning_weights.makeCompressed();
  } catch (const json::exception& e) {
    throw ValidationError(std::string("malformed model file: ") + e.what());
  }
  validate_template(m);
  return m;
}

inline json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open file: " + path);
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ValidationError("invalid JSON in " + path + ": " + e.what());
  }
}

/// Writes to a sibling temp file and renames it into place.
inline void write_text_atomic(const std::string& path, const std::string& text) {
  const std::filesystem::path target(path);
  if (target.has_parent_path()) std::filesystem::create_directories(target.parent_path());
  const std::filesystem::path tmp = target.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw ValidationError("cannot write file: " + tmp.string());
    out << text;
  }
  std::filesystem::rename(tmp, target);
}

inline void write_json_file(const std::string& path, const json& j) { write_text_atomic(path, j.dump(1) + "\n"); }

inline BodyTemplate load_model(const std::string& path) { return model_from_json(read_json_file(path)); }

inline void save_model(const std::string& path, const BodyTemplate& m) { write_json_file(path, model_to_json(m)); }

}  // namespace tightfit
