#pragma once

#include "tightfit/serialize.hpp"
#include "tightfit/svg.hpp"

#include <atomic>
#include <filesystem>
#include <iostream>
#include <mutex>
#include <thread>

namespace tightfit {

struct RefineConfig {
  bool enabled = false;
  int steps = 10;
  double scale = 0.5;
  int body_samples = 5000;
};

/// Everything one synthetic experiment needs. A fixed seed fixes every artifact.
struct ExperimentConfig {
  std::uint64_t seed = 0;
  std::string model_path;  // empty: procedural stick model
  StickConfig stick;
  int markers = 86;
  std::uint64_t marker_seed = 0;
  PoseSampling pose;
  ClothingProfile clothing;
  CorrespondenceConfig correspondence;
  double lambda = 50.0;
  NoiseConfig noise;
  FitConfig fit;
  RefineConfig refine;
};

// Seed streams derived from the experiment seed.
enum SeedStream : std::uint64_t { kParamsStream = 10, kClothingStream, kCorrespondenceStream, kOracleStream };

inline void validate_experiment(const ExperimentConfig& c) {
  TIGHTFIT_CHECK(c.markers >= 4, "marker count must be at least 4");
  TIGHTFIT_CHECK(c.lambda > 0, "lambda must be positive");
  TIGHTFIT_CHECK(c.pose.theta_max >= 0 && c.pose.root_yaw >= 0 && c.pose.t_range >= 0 && c.pose.beta_range >= 0,
                 "pose sampling ranges must be nonnegative");
  TIGHTFIT_CHECK(c.correspondence.n_inner >= 1 && c.correspondence.n_scatter >= 1, "sample counts must be at least 1");
  TIGHTFIT_CHECK(c.correspondence.geo_threshold >= 0, "geodesic threshold must be nonnegative");
  TIGHTFIT_CHECK(c.refine.steps >= 0 && c.refine.scale > 0 && c.refine.scale <= 1 && c.refine.body_samples >= 1,
                 "invalid refinement settings");
  validate_profile(c.clothing);
  validate_noise(c.noise);
  validate_fit_config(c.fit);
}

inline json experiment_to_json(const ExperimentConfig& c) {
  const auto& s = c.stick;
  const auto& p = c.pose;
  const auto& cl = c.clothing;
  const auto& n = c.noise;
  return {{"seed", c.seed},
          {"model", c.model_path.empty() ? json{{"height_scale", s.height_scale},
                                                {"radius_scale", s.radius_scale},
                                                {"subdivision", s.subdivision},
                                                {"shape_dim", s.shape_dim},
                                                {"blend", s.blend},
                                                {"seed", s.seed}}
                                         : json{{"path", c.model_path}}},
          {"markers", c.markers},
          {"marker_seed", c.marker_seed},
          {"pose", {{"theta_max", p.theta_max}, {"root_yaw", p.root_yaw}, {"t_range", p.t_range}, {"beta_range", p.beta_range}}},
          {"clothing",
           {{"base_offset", cl.base_offset},
            {"torso_amplitude", cl.torso_amplitude},
            {"limb_amplitude", cl.limb_amplitude},
            {"smoothness", cl.smoothness},
            {"noise_sigma", cl.noise_sigma},
            {"bumps", cl.bumps},
            {"normal_smoothing", cl.normal_smoothing}}},
          {"correspondence",
           {{"n_inner", c.correspondence.n_inner},
            {"n_scatter", c.correspondence.n_scatter},
            {"geo_threshold", c.correspondence.geo_threshold}}},
          {"lambda", c.lambda},
          {"noise",
           {{"sigma_angle", n.sigma_angle},
            {"sigma_magnitude", n.sigma_magnitude},
            {"flip_probability", n.flip_probability},
            {"sigma_confidence", n.sigma_confidence}}},
          {"fit", fit_config_to_json(c.fit)},
          {"refine",
           {{"enabled", c.refine.enabled},
            {"steps", c.refine.steps},
            {"scale", c.refine.scale},
            {"body_samples", c.refine.body_samples}}}};
}

inline ExperimentConfig experiment_from_json(const json& j) {
  using detail::check_keys;
  using detail::read_opt;
  return detail::guarded("experiment config", [&] {
    check_keys(j, {"seed", "model", "markers", "marker_seed", "pose", "clothing", "correspondence", "lambda", "noise", "fit", "refine"},
               "experiment config");
    ExperimentConfig c;
    read_opt(j, "seed", c.seed);
    if (j.contains("model")) {
      const json& m = j.at("model");
      check_keys(m, {"path", "height_scale", "radius_scale", "subdivision", "shape_dim", "blend", "seed"}, "model");
      read_opt(m, "path", c.model_path);
      read_opt(m, "height_scale", c.stick.height_scale);
      read_opt(m, "radius_scale", c.stick.radius_scale);
      read_opt(m, "subdivision", c.stick.subdivision);
      read_opt(m, "shape_dim", c.stick.shape_dim);
      read_opt(m, "blend", c.stick.blend);
      read_opt(m, "seed", c.stick.seed);
    }
    read_opt(j, "markers", c.markers);
    read_opt(j, "marker_seed", c.marker_seed);
    if (j.contains("pose")) {
      const json& p = j.at("pose");
      check_keys(p, {"theta_max", "root_yaw", "t_range", "beta_range"}, "pose");
      read_opt(p, "theta_max", c.pose.theta_max);
      read_opt(p, "root_yaw", c.pose.root_yaw);
      read_opt(p, "t_range", c.pose.t_range);
      read_opt(p, "beta_range", c.pose.beta_range);
    }
    if (j.contains("clothing")) {
      const json& p = j.at("clothing");
      check_keys(p, {"base_offset", "torso_amplitude", "limb_amplitude", "smoothness", "noise_sigma", "bumps", "normal_smoothing"},
                 "clothing");
      read_opt(p, "base_offset", c.clothing.base_offset);
      read_opt(p, "torso_amplitude", c.clothing.torso_amplitude);
      read_opt(p, "limb_amplitude", c.clothing.limb_amplitude);
      read_opt(p, "smoothness", c.clothing.smoothness);
      read_opt(p, "noise_sigma", c.clothing.noise_sigma);
      read_opt(p, "bumps", c.clothing.bumps);
      read_opt(p, "normal_smoothing", c.clothing.normal_smoothing);
    }
    if (j.contains("correspondence")) {
      const json& p = j.at("correspondence");
      check_keys(p, {"n_inner", "n_scatter", "geo_threshold"}, "correspondence");
      read_opt(p, "n_inner", c.correspondence.n_inner);
      read_opt(p, "n_scatter", c.correspondence.n_scatter);
      read_opt(p, "geo_threshold", c.correspondence.geo_threshold);
    }
    read_opt(j, "lambda", c.lambda);
    if (j.contains("noise")) {
      const json& p = j.at("noise");
      check_keys(p, {"sigma_angle", "sigma_magnitude", "flip_probability", "sigma_confidence"}, "noise");
      read_opt(p, "sigma_angle", c.noise.sigma_angle);
      read_opt(p, "sigma_magnitude", c.noise.sigma_magnitude);
      read_opt(p, "flip_probability", c.noise.flip_probability);
      read_opt(p, "sigma_confidence", c.noise.sigma_confidence);
    }
    if (j.contains("fit")) c.fit = fit_config_from_json(j.at("fit"));
    if (j.contains("refine")) {
      const json& p = j.at("refine");
      check_keys(p, {"enabled", "steps", "scale", "body_samples"}, "refine");
      read_opt(p, "enabled", c.refine.enabled);
      read_opt(p, "steps", c.refine.steps);
      read_opt(p, "scale", c.refine.scale);
      read_opt(p, "body_samples", c.refine.body_samples);
    }
    validate_experiment(c);
    return c;
  });
}

inline ExperimentConfig load_experiment(const std::string& path) { return experiment_from_json(read_json_file(path)); }

/// Shared per-process state derived from the config: the template and the marker layout.
struct ExperimentContext {
  ExperimentConfig config;
  BodyTemplate model;
  MarkerSet markers;
  std::vector<int> marker_neighbors;
};

inline ExperimentContext make_context(const ExperimentConfig& config) {
  validate_experiment(config);
  ExperimentContext ctx;
  ctx.config = config;
  ctx.model = config.model_path.empty() ? make_stick_model(config.stick) : load_model(config.model_path);
  const TriMesh rest = ctx.model.rest_trimesh();
  ctx.markers = select_markers(rest, config.markers, config.marker_seed);
  ctx.marker_neighbors = marker_neighbors(rest, ctx.markers);
  return ctx;
}

/// Standard file names inside a run directory.
namespace run_files {
inline const char* const kGtParams = "gt_params.json";
inline const char* const kBody = "body.obj";
inline const char* const kScan = "scan.obj";
inline const char* const kMarkers = "markers.json";
inline const char* const kField = "field.json";
inline const char* const kPred = "pred.json";
inline const char* const kFit = "fit.json";
inline const char* const kFitted = "fitted.obj";
inline const char* const kMetrics = "metrics.json";
inline const char* const kTracePlot = "residual_trace.svg";
inline const char* const kErrorPlot = "error_histogram.svg";
}  // namespace run_files

inline std::string in_dir(const std::string& dir, const char* name) { return (std::filesystem::path(dir) / name).string(); }

inline void write_obj(const std::string& path, const TriMesh& mesh) { write_text_atomic(path, obj_string(mesh)); }

inline MarkerSet read_markers(const std::string& path, const BodyTemplate& model) {
  return markers_from_json(read_json_file(path), model.rest_trimesh());
}

/// Draws body parameters, poses the body, dresses it and writes the ground truth.
inline SyntheticScan stage_synth(const ExperimentContext& ctx, const std::string& dir) {
  const auto& c = ctx.config;
  const BodyParams params = random_body_params(ctx.model, derive_seed(c.seed, kParamsStream), c.pose);
  const SyntheticScan scan = make_synthetic_scan(ctx.model, params, c.clothing, derive_seed(c.seed, kClothingStream));
  write_json_file(in_dir(dir, run_files::kGtParams), params_to_json(params));
  write_obj(in_dir(dir, run_files::kBody), scan.body);
  write_obj(in_dir(dir, run_files::kScan), scan.outer);
  write_json_file(in_dir(dir, run_files::kMarkers), markers_to_json(ctx.markers));
  return scan;
}

/// Ground-truth field for a body/scan pair.
inline FieldFile stage_prep(const ExperimentContext& ctx, const TriMesh& body, const TriMesh& scan, const MarkerSet& markers) {
  const auto& c = ctx.config;
  TIGHTFIT_CHECK(body.num_faces() == ctx.model.faces.rows(), "body mesh topology does not match the template");
  CorrespondenceConfig cc = c.correspondence;
  cc.seed = derive_seed(c.seed, kCorrespondenceStream);
  const auto corr = build_correspondence(body, scan, cc);
  FieldFile f;
  f.field = ground_truth_field(corr.map, body, markers, c.lambda);
  f.points = sample_positions(corr.map.scattered);
  for (const auto& e : corr.map.entries) f.provenance.push_back(e.provenance == Provenance::geodesic ? 0 : 1);
  f.lambda = c.lambda;
  f.num_markers = markers.size();
  f.seed = c.seed;
  return f;
}

inline FieldFile stage_predict(const ExperimentContext& ctx, const FieldFile& gt) {
  TIGHTFIT_CHECK(gt.num_markers == ctx.markers.size(), "field marker count does not match the layout");
  FieldFile out = gt;
  out.field = oracle_predict(gt.field, ctx.config.noise, derive_seed(ctx.config.seed, kOracleStream), ctx.marker_neighbors);
  out.provenance.clear();
  return out;
}

inline FitResult stage_fit(const ExperimentContext& ctx, const FieldFile& field, const MarkerSet& markers, bool refine) {
  TIGHTFIT_CHECK(field.num_markers == markers.size(), "field marker count does not match the layout");
  const auto& c = ctx.config;
  const auto targets = aggregate_markers(field.points, field.field, markers.size(), c.fit);
  FitResult result = fit_body_to_markers(ctx.model, markers, targets, BodyParams::zeros(ctx.model), c.fit);
  if (refine) {
    ChamferOptions opts;
    opts.body_samples = c.refine.body_samples;
    opts.seed = derive_seed(c.seed, kCorrespondenceStream + 100);
    const auto start = std::chrono::steady_clock::now();
    result.params = chamfer_refine(ctx.model, result.params, field.points, c.refine.steps, c.refine.scale, opts);
    result.seconds += std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    // marker RMSE of the refined body against the same aggregated targets
    const Points m = marker_positions(ctx.model, result.params, markers);
    double ss = 0;
    int n = 0;
    for (int k = 0; k < markers.size(); ++k)
      if (targets[static_cast<size_t>(k)]) {
        ss += (m.row(k).transpose() - *targets[static_cast<size_t>(k)]).squaredNorm();
        ++n;
      }
    result.marker_rmse = std::sqrt(ss / n);
  }
  return result;
}

struct EvalInputs {
  BodyParams fitted;
  BodyParams truth;
  const FieldFile* gt_field = nullptr;
  const FieldFile* pred_field = nullptr;
};

inline MetricReport evaluate(const BodyTemplate& model, const EvalInputs& in, std::vector<double>* vertex_errors_cm = nullptr) {
  check_params(model, in.fitted);
  check_params(model, in.truth);
  MetricReport r;
  const Points pv = pose_mesh(model, in.fitted), gv = pose_mesh(model, in.truth);
  r.v2v_cm = v2v(pv, gv);
  r.mpjpe_cm = mpjpe(posed_joints(model, in.fitted), posed_joints(model, in.truth));
  r.chamfer_cm = chamfer_bidirectional(pv, gv);
  if (in.gt_field && in.pred_field) {
    const auto a = angular_error(in.pred_field->field.directions, in.gt_field->field.directions);
    r.angular_mean = a.mean;
    r.angular_median = a.median;
  }
  r.shape_mae = shape_mae(in.fitted.beta, in.truth.beta, std::min(3, model.shape_dim()));
  if (vertex_errors_cm) {
    vertex_errors_cm->resize(static_cast<size_t>(pv.rows()));
    for (Eigen::Index v = 0; v < pv.rows(); ++v) (*vertex_errors_cm)[static_cast<size_t>(v)] = (pv.row(v) - gv.row(v)).norm() * kCentimetres;
  }
  return r;
}

/// Evaluates one run directory and writes metrics.json and the two plots into it.
inline MetricReport stage_eval(const ExperimentContext& ctx, const std::string& dir) {
  const FitResult fit = fit_result_from_json(read_json_file(in_dir(dir, run_files::kFit)));
  EvalInputs in;
  in.fitted = fit.params;
  in.truth = params_from_json(read_json_file(in_dir(dir, run_files::kGtParams)));
  std::optional<FieldFile> gt, pred;
  if (std::filesystem::exists(in_dir(dir, run_files::kField)) && std::filesystem::exists(in_dir(dir, run_files::kPred))) {
    gt = field_from_json(read_json_file(in_dir(dir, run_files::kField)));
    pred = field_from_json(read_json_file(in_dir(dir, run_files::kPred)));
    TIGHTFIT_CHECK(gt->field.size() == pred->field.size(), "ground-truth and predicted fields differ in length");
    in.gt_field = &*gt;
    in.pred_field = &*pred;
  }
  std::vector<double> errors;
  const MetricReport report = evaluate(ctx.model, in, &errors);
  write_json_file(in_dir(dir, run_files::kMetrics), metrics_to_json(report));
  std::vector<double> log_trace;
  for (double c : fit.residual_trace) log_trace.push_back(std::log10(std::max(c, 1e-30)));
  write_text_atomic(in_dir(dir, run_files::kTracePlot), svg::line_plot(log_trace, "marker residual", "iteration", "log10 sum of squares"));
  write_text_atomic(in_dir(dir, run_files::kErrorPlot), svg::histogram(errors, 30, "per-vertex error", "cm"));
  return report;
}

/// synth -> prep -> predict -> fit -> eval in one directory. Returns the metrics.
inline MetricReport run_pipeline(const ExperimentContext& ctx, const std::string& dir, bool refine) {
  const SyntheticScan scan = stage_synth(ctx, dir);
  const FieldFile gt = stage_prep(ctx, scan.body, scan.outer, ctx.markers);
  write_json_file(in_dir(dir, run_files::kField), field_to_json(gt));
  const FieldFile pred = stage_predict(ctx, gt);
  write_json_file(in_dir(dir, run_files::kPred), field_to_json(pred));
  const FitResult fit = stage_fit(ctx, pred, ctx.markers, refine);
  write_json_file(in_dir(dir, run_files::kFit), fit_result_to_json(fit));
  write_obj(in_dir(dir, run_files::kFitted), posed_trimesh(ctx.model, fit.params));
  return stage_eval(ctx, dir);
}

/// Runs `count` independent pipelines (seeds seed, seed+1, ...) on up to `jobs` threads,
/// writing run_000, run_001, ... below `dir` and a metrics.csv summary.
inline std::vector<MetricReport> run_batch(const ExperimentContext& ctx, const std::string& dir, int count, int jobs, bool refine) {
  TIGHTFIT_CHECK(count >= 1 && jobs >= 1, "batch count and job count must be at least 1");
  std::vector<MetricReport> reports(static_cast<size_t>(count));
  std::vector<std::string> names(static_cast<size_t>(count));
  std::vector<std::exception_ptr> errors(static_cast<size_t>(count));
  std::atomic<int> next{0};
  auto worker = [&] {
    for (int i = next++; i < count; i = next++) {
      char name[32];
      std::snprintf(name, sizeof(name), "run_%03d", i);
      names[static_cast<size_t>(i)] = name;
      ExperimentContext local = ctx;
      local.config.seed = ctx.config.seed + static_cast<std::uint64_t>(i);
      try {
        reports[static_cast<size_t>(i)] = run_pipeline(local, in_dir(dir, name), refine);
      } catch (...) {
        errors[static_cast<size_t>(i)] = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  for (int t = 0; t < std::min(jobs, count); ++t) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  std::string csv = metrics_csv_header();
  for (int i = 0; i < count; ++i) csv += metrics_csv_row(names[static_cast<size_t>(i)], reports[static_cast<size_t>(i)]);
  write_text_atomic(in_dir(dir, "metrics.csv"), csv);
  return reports;
}

}  // namespace tightfit
