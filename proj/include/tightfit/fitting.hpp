#pragma once

#include "tightfit/body_model.hpp"
#include "tightfit/bvh.hpp"
#include "tightfit/kdtree.hpp"
#include "tightfit/tightness.hpp"

#include <Eigen/Cholesky>

#include <chrono>
#include <functional>
#include <numeric>
#include <optional>

namespace tightfit {

struct FitConfig {
  int top_m = 3;
  double alpha = 2.0;
  int stage1_steps = 30;
  double stage1_scale = 0.5;
  int stage1_shape_coeffs = 2;
  int stage2_steps = 50;
  double stage2_scale = 0.2;
  double lm_damping_init = 1e-3;
  double lm_damping_factor = 10.0;
  double convergence_tol = 1e-8;
};

inline void validate_fit_config(const FitConfig& c) {
  TIGHTFIT_CHECK(c.top_m >= 1, "top_m must be at least 1");
  TIGHTFIT_CHECK(c.alpha >= 0, "alpha must be nonnegative");
  TIGHTFIT_CHECK(c.stage1_steps >= 1 && c.stage2_steps >= 1, "stage step counts must be at least 1");
  TIGHTFIT_CHECK(c.stage1_scale > 0 && c.stage1_scale <= 1 && c.stage2_scale > 0 && c.stage2_scale <= 1,
                 "step scales must lie in (0, 1]");
  TIGHTFIT_CHECK(c.stage1_shape_coeffs >= 0, "stage-1 shape coefficient count must be nonnegative");
  TIGHTFIT_CHECK(c.lm_damping_init > 0 && c.lm_damping_factor > 1, "damping must be positive with factor above 1");
  TIGHTFIT_CHECK(c.convergence_tol >= 0, "convergence tolerance must be nonnegative");
}

struct FitResult {
  BodyParams params;
  BodyParams stage1_params;  // estimate handed from stage 1 to stage 2
  std::vector<double> residual_trace;  // cost of the current estimate: initial, then after every accepted step
  bool converged = false;
  int accepted_steps = 0;
  double marker_rmse = 0;
  double seconds = 0;
};

/// Damping overflowed while the gradient was still far from zero.
class NonConvergence : public NumericalError {
 public:
  NonConvergence(const std::string& what, BodyParams best) : NumericalError(what), best(std::move(best)) {}
  BodyParams best;
};

using MarkerTargets = std::vector<std::optional<Vec3>>;

/// Confidence-weighted marker estimates.
///
/// Inner points y = x + b * d vote for their label; each marker takes its top-m
/// voters by confidence (ties to the lower point index) and averages them with
/// weights c^alpha. Weights are computed as (c / c_max)^alpha, which has the same
/// ratios and does not underflow for large alpha. Labels without voters stay absent.
inline MarkerTargets aggregate_markers(const Points& scan_points, const TightnessField& field, int num_markers,
                                       const FitConfig& config) {
  TIGHTFIT_CHECK(scan_points.rows() == field.size(), "scan points and field must be aligned");
  TIGHTFIT_CHECK(config.top_m >= 1 && config.alpha >= 0, "invalid aggregation settings");
  std::vector<std::vector<int>> voters(static_cast<size_t>(num_markers));
  for (int i = 0; i < field.size(); ++i) {
    const int l = field.labels[static_cast<size_t>(i)];
    TIGHTFIT_CHECK(l >= 0 && l < num_markers, "field label out of range");
    voters[static_cast<size_t>(l)].push_back(i);
  }
  MarkerTargets out(static_cast<size_t>(num_markers));
  bool any = false;
  for (int k = 0; k < num_markers; ++k) {
    auto& v = voters[static_cast<size_t>(k)];
    if (v.empty()) continue;
    const size_t m = std::min(v.size(), static_cast<size_t>(config.top_m));
    std::partial_sort(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(m), v.end(), [&](int a, int b) {
      const double ca = field.confidences[static_cast<size_t>(a)], cb = field.confidences[static_cast<size_t>(b)];
      return ca > cb || (ca == cb && a < b);
    });
    const double cmax = field.confidences[static_cast<size_t>(v[0])];
    Vec3 sum = Vec3::Zero();
    double wsum = 0;
    for (size_t r = 0; r < m; ++r) {
      const int i = v[r];
      const double c = field.confidences[static_cast<size_t>(i)];
      // all-zero confidences degrade to the plain mean
      const double w = cmax > 0 ? std::pow(c / cmax, config.alpha) : 1.0;
      sum += w * (scan_points.row(i).transpose() + field.vector(i));
      wsum += w;
    }
    out[static_cast<size_t>(k)] = sum / wsum;
    any = true;
  }
  if (!any) throw ValidationError("every marker is absent: no point carries a valid label");
  return out;
}

namespace detail {

struct Linearization {
  Eigen::VectorXd residual;  // target - model
  Eigen::MatrixXd jacobian;  // d(model)/dx
};

struct LmOutcome {
  Eigen::VectorXd x;
  double cost = 0;
  bool converged = false;
  int accepted = 0;
};

// Levenberg-Marquardt over the parameters selected by `free`. One iteration solves
// (J^T J + mu I) delta = J^T r and tries x + scale * delta, multiplying mu by the
// damping factor after each rejected trial until a trial lowers the cost; the accepted
// step then divides mu by the factor. `steps` counts iterations, so rejected trials do
// not use up the schedule.
inline LmOutcome lm_stage(const std::function<Linearization(const Eigen::VectorXd&)>& linearize,
                          const std::function<double(const Eigen::VectorXd&)>& cost_fn, Eigen::VectorXd x,
                          const std::vector<int>& free, int steps, double scale, double& mu, const FitConfig& config,
                          std::vector<double>& trace, const std::function<BodyParams(const Eigen::VectorXd&)>& to_params) {
  LmOutcome out;
  double cost = cost_fn(x);
  out.x = x;
  out.cost = cost;
  if (!(cost > 1e-30)) {
    out.converged = true;
    return out;
  }
  const int nf = static_cast<int>(free.size());
  for (int it = 0; it < steps && !out.converged; ++it) {
    const Linearization lin = linearize(x);
    Eigen::MatrixXd jf(lin.jacobian.rows(), nf);
    for (int c = 0; c < nf; ++c) jf.col(c) = lin.jacobian.col(free[static_cast<size_t>(c)]);
    const Eigen::VectorXd g = jf.transpose() * lin.residual;
    const Eigen::MatrixXd jtj = jf.transpose() * jf;
    while (true) {
      Eigen::MatrixXd h = jtj;
      h.diagonal().array() += mu;
      const Eigen::VectorXd delta = h.ldlt().solve(g);
      Eigen::VectorXd candidate = x;
      for (int c = 0; c < nf; ++c) candidate[free[static_cast<size_t>(c)]] += scale * delta[c];
      const double next = delta.allFinite() ? cost_fn(candidate) : kInf;
      if (next < cost) {
        const double decrease = (cost - next) / cost;
        x = candidate;
        cost = next;
        mu /= config.lm_damping_factor;
        ++out.accepted;
        trace.push_back(cost);
        if (decrease < config.convergence_tol || !(cost > 1e-30)) out.converged = true;
        break;
      }
      mu *= config.lm_damping_factor;
      if (mu > 1e16) {
        if (g.norm() <= 1e-6 * jf.norm() * lin.residual.norm()) {
          out.converged = true;
          break;
        }
        throw NonConvergence("damping overflow with a non-stationary gradient", to_params(x));
      }
    }
  }
  out.x = x;
  out.cost = cost;
  return out;
}

}  // namespace detail

/// Two-stage damped Gauss-Newton fit of body parameters to marker targets.
///
/// Stage 1 frees the first `stage1_shape_coeffs` shape coefficients, the pose and the
/// translation; stage 2 frees everything. Absent targets are left out of the residual.
inline FitResult fit_body_to_markers(const BodyTemplate& model, const MarkerSet& markers, const MarkerTargets& targets,
                                     const BodyParams& init, const FitConfig& config) {
  validate_fit_config(config);
  check_params(model, init);
  check_markers(model, markers);
  TIGHTFIT_CHECK(static_cast<int>(targets.size()) == markers.size(), "need one (optional) target per marker");
  std::vector<int> present;
  for (int k = 0; k < markers.size(); ++k)
    if (targets[static_cast<size_t>(k)]) {
      TIGHTFIT_CHECK(targets[static_cast<size_t>(k)]->allFinite(), "marker targets must be finite");
      present.push_back(k);
    }
  if (present.size() < 4) throw ValidationError("fitting needs at least 4 present marker targets");

  const auto start = std::chrono::steady_clock::now();
  MarkerSet used;
  Eigen::VectorXd target(3 * static_cast<Eigen::Index>(present.size()));
  for (size_t i = 0; i < present.size(); ++i) {
    used.sites.push_back(markers.sites[static_cast<size_t>(present[i])]);
    target.segment<3>(3 * static_cast<Eigen::Index>(i)) = *targets[static_cast<size_t>(present[i])];
  }
  const int ns = model.shape_dim(), nj = model.num_joints();
  auto to_params = [&](const Eigen::VectorXd& x) { return BodyParams::unpack(x, ns, nj); };
  auto residual = [&](const Eigen::VectorXd& x) -> Eigen::VectorXd {
    return target - flatten(marker_positions(model, to_params(x), used));
  };
  auto cost_fn = [&](const Eigen::VectorXd& x) { return residual(x).squaredNorm(); };
  auto linearize = [&](const Eigen::VectorXd& x) {
    return detail::Linearization{residual(x), marker_jacobian(model, to_params(x), used)};
  };

  std::vector<int> stage1, stage2;
  for (int c = 0; c < model.num_params(); ++c) {
    stage2.push_back(c);
    if (c >= std::min(config.stage1_shape_coeffs, ns) && c < ns) continue;
    stage1.push_back(c);
  }

  FitResult result;
  Eigen::VectorXd x = init.pack();
  result.residual_trace.push_back(cost_fn(x));
  double mu = config.lm_damping_init;
  auto s1 = detail::lm_stage(linearize, cost_fn, x, stage1, config.stage1_steps, config.stage1_scale, mu, config,
                             result.residual_trace, to_params);
  result.stage1_params = to_params(s1.x);
  auto s2 = detail::lm_stage(linearize, cost_fn, s1.x, stage2, config.stage2_steps, config.stage2_scale, mu, config,
                             result.residual_trace, to_params);
  result.params = to_params(s2.x);
  result.converged = s2.converged;
  result.accepted_steps = s1.accepted + s2.accepted;
  result.marker_rmse = std::sqrt(s2.cost / static_cast<double>(present.size()));
  result.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

struct ChamferOptions {
  int body_samples = 5000;
  std::uint64_t seed = 0;
  double damping = 1e-6;
};

/// Fixed body sample sites (face + barycentric on the template) used by `chamfer_refine`.
inline MarkerSet chamfer_body_sites(const BodyTemplate& model, const ChamferOptions& options) {
  MarkerSet sites;
  sites.sites = sample_surface(model.rest_trimesh(), options.body_samples, options.seed);
  return sites;
}

/// Symmetric squared Chamfer energy between the posed body and a scan cloud.
///
/// Scan to body is point-to-surface (closest point on the posed mesh); body to scan
/// runs from the fixed sample sites to their nearest scan point. Each direction is a
/// mean, and the energy is half their sum.
class ChamferEnergy {
 public:
  ChamferEnergy(const BodyTemplate& model, const Points& scan, const ChamferOptions& options)
      : model_(model), scan_(scan), scan_tree_(scan), sites_(chamfer_body_sites(model, options)) {
    TIGHTFIT_CHECK(scan.rows() > 0, "chamfer refinement needs scan points");
  }

  // Current matches expressed as marker-like sites with their targets.
  struct Matches {
    MarkerSet sites;
    Eigen::VectorXd target;
    Eigen::VectorXd weight;  // per site
  };

  Matches match(const BodyParams& p) const {
    const TriMesh posed = posed_trimesh(model_, p);
    const MeshBvh bvh(posed);
    const Eigen::Index ns = scan_.rows(), nb = sites_.size();
    Matches m;
    m.target.resize(3 * (ns + nb));
    m.weight.resize(ns + nb);
    m.sites.sites.reserve(static_cast<size_t>(ns + nb));
    for (Eigen::Index i = 0; i < ns; ++i) {
      const auto cp = bvh.closest(scan_.row(i).transpose());
      SurfaceSample s;
      s.face = cp.face;
      s.bary = cp.bary;
      m.sites.sites.push_back(s);
      m.target.segment<3>(3 * i) = scan_.row(i).transpose();
      m.weight[i] = std::sqrt(0.5 / static_cast<double>(ns));
    }
    const Points body = marker_positions(model_, p, sites_);
    for (Eigen::Index i = 0; i < nb; ++i) {
      m.sites.sites.push_back(sites_.sites[static_cast<size_t>(i)]);
      m.target.segment<3>(3 * (ns + i)) = scan_.row(scan_tree_.nearest(body.row(i).transpose()).first).transpose();
      m.weight[ns + i] = std::sqrt(0.5 / static_cast<double>(nb));
    }
    return m;
  }

  double cost(const BodyParams& p) const { return residual(p, match(p)).squaredNorm(); }

  Eigen::VectorXd residual(const BodyParams& p, const Matches& m) const {
    Eigen::VectorXd r = m.target - flatten(marker_positions(model_, p, m.sites));
    for (Eigen::Index i = 0; i < m.weight.size(); ++i) r.segment<3>(3 * i) *= m.weight[i];
    return r;
  }

  Eigen::MatrixXd jacobian(const BodyParams& p, const Matches& m) const {
    Eigen::MatrixXd j = marker_jacobian(model_, p, m.sites);
    for (Eigen::Index i = 0; i < m.weight.size(); ++i) j.middleRows<3>(3 * i) *= m.weight[i];
    return j;
  }

  const MarkerSet& body_sites() const { return sites_; }

 private:
  const BodyTemplate& model_;
  Points scan_;
  KdTree scan_tree_;
  MarkerSet sites_;
};

/// Damped Gauss-Newton descent on the symmetric Chamfer energy, re-matching at every
/// evaluation. A step is kept only if it lowers the energy.
inline BodyParams chamfer_refine(const BodyTemplate& model, const BodyParams& params, const Points& scan_points,
                                 int steps, double step_scale, const ChamferOptions& options = {}) {
  check_params(model, params);
  TIGHTFIT_CHECK(steps >= 0, "refinement step count must be nonnegative");
  TIGHTFIT_CHECK(step_scale > 0 && step_scale <= 1, "refinement step scale must lie in (0, 1]");
  if (steps == 0) return params;
  const ChamferEnergy energy(model, scan_points, options);
  const int ns = model.shape_dim(), nj = model.num_joints();
  auto to_params = [&](const Eigen::VectorXd& x) { return BodyParams::unpack(x, ns, nj); };
  auto linearize = [&](const Eigen::VectorXd& x) {
    const BodyParams p = to_params(x);
    const auto m = energy.match(p);
    return detail::Linearization{energy.residual(p, m), energy.jacobian(p, m)};
  };
  auto cost_fn = [&](const Eigen::VectorXd& x) { return energy.cost(to_params(x)); };
  std::vector<int> all(static_cast<size_t>(model.num_params()));
  std::iota(all.begin(), all.end(), 0);
  FitConfig lm;
  lm.convergence_tol = 0;
  double mu = options.damping;
  std::vector<double> trace;
  try {
    return to_params(detail::lm_stage(linearize, cost_fn, params.pack(), all, steps, step_scale, mu, lm, trace, to_params).x);
  } catch (const NonConvergence& e) {
    return e.best;
  }
}

}  // namespace tightfit
