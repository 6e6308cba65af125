// Command-line driver: synthetic scans, ground-truth fields, oracle prediction,
// marker fitting, evaluation and the group equivariance self-test.

#include "tightfit/equivtest.hpp"
#include "tightfit/pipeline.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>

using namespace tightfit;

namespace {

struct Options {
  std::string config_path;
  std::string out = "run";
  std::optional<std::uint64_t> seed;
  bool refine = false;
  int jobs = 1;
  // command specific
  std::string scan, body, markers, field;
  std::vector<std::string> runs;
  std::string csv;
  int count = 1;
  int points = 256;
  bool corrupt_group = false;
};

ExperimentConfig load_config(const Options& o) {
  ExperimentConfig c = o.config_path.empty() ? ExperimentConfig{} : load_experiment(o.config_path);
  if (o.seed) c.seed = *o.seed;
  validate_experiment(c);
  return c;
}

std::string pick(const std::string& given, const std::string& dir, const char* name) {
  return given.empty() ? in_dir(dir, name) : given;
}

int cmd_synth(const Options& o) {
  const auto ctx = make_context(load_config(o));
  const auto scan = stage_synth(ctx, o.out);
  std::printf("synth: wrote %s (offset scale %.3f)\n", o.out.c_str(), scan.offset_scale);
  return 0;
}

int cmd_prep(const Options& o) {
  const auto ctx = make_context(load_config(o));
  const TriMesh body = read_obj(pick(o.body, o.out, run_files::kBody));
  const TriMesh scan = read_obj(pick(o.scan, o.out, run_files::kScan));
  validate_mesh(body);
  validate_mesh(scan);
  const MarkerSet markers = read_markers(pick(o.markers, o.out, run_files::kMarkers), ctx.model);
  const FieldFile f = stage_prep(ctx, body, scan, markers);
  write_json_file(in_dir(o.out, run_files::kField), field_to_json(f));
  const auto euc = std::count(f.provenance.begin(), f.provenance.end(), 1);
  std::printf("prep: %d points, %ld geodesic, %ld euclidean fallback\n", f.field.size(),
              static_cast<long>(f.field.size() - euc), static_cast<long>(euc));
  return 0;
}

int cmd_predict(const Options& o) {
  const auto ctx = make_context(load_config(o));
  const FieldFile gt = field_from_json(read_json_file(pick(o.field, o.out, run_files::kField)));
  const FieldFile pred = stage_predict(ctx, gt);
  write_json_file(in_dir(o.out, run_files::kPred), field_to_json(pred));
  std::printf("predict: %d points\n", pred.field.size());
  return 0;
}

int cmd_fit(const Options& o) {
  const auto config = load_config(o);
  const FieldFile field = field_from_json(read_json_file(pick(o.field, o.out, run_files::kPred)));
  const auto ctx = make_context(config);
  const MarkerSet markers = read_markers(pick(o.markers, o.out, run_files::kMarkers), ctx.model);
  const FitResult fit = stage_fit(ctx, field, markers, o.refine || config.refine.enabled);
  write_json_file(in_dir(o.out, run_files::kFit), fit_result_to_json(fit));
  write_obj(in_dir(o.out, run_files::kFitted), posed_trimesh(ctx.model, fit.params));
  std::printf("fit: marker rmse %.6f m, %d accepted steps, %.3f s wall clock\n", fit.marker_rmse, fit.accepted_steps, fit.seconds);
  return 0;
}

int cmd_eval(const Options& o) {
  const auto ctx = make_context(load_config(o));
  const std::vector<std::string> runs = o.runs.empty() ? std::vector<std::string>{o.out} : o.runs;
  std::string csv = metrics_csv_header();
  for (const auto& dir : runs) {
    const MetricReport r = stage_eval(ctx, dir);
    csv += metrics_csv_row(dir, r);
    std::printf("eval %s: v2v %.4f cm, mpjpe %.4f cm, chamfer %.4f cm, angular %.4f / %.4f\n", dir.c_str(), r.v2v_cm,
                r.mpjpe_cm, r.chamfer_cm, r.angular_mean, r.angular_median);
  }
  if (!o.csv.empty()) write_text_atomic(o.csv, csv);
  return 0;
}

int cmd_equivtest(const Options& o) {
  RotationGroup group = icosahedral_group();
  if (o.corrupt_group) group = corrupt_group(std::move(group));
  const EquivReport report = run_equivariance_suite(group, o.points, o.seed.value_or(0));
  json elements = json::array();
  for (const auto& e : report.elements) {
    std::printf("element %2d  descriptor %.3e  pool %.3e  direction %.3e\n", e.element, e.descriptor, e.pool, e.direction);
    elements.push_back({{"element", e.element}, {"descriptor", e.descriptor}, {"pool", e.pool}, {"direction", e.direction}});
  }
  std::printf("max deviation: descriptor %.3e, pool %.3e, direction %.3e (tolerance %.0e)\n", report.max_descriptor,
              report.max_pool, report.max_direction, report.tolerance);
  if (report.skipped_points > 0)
    std::printf("%d isolated points skipped in the direction check\n", report.skipped_points);
  std::printf("equivtest: %s\n", report.pass ? "PASS" : "FAIL");
  if (!o.out.empty() && o.out != "run")
    write_json_file(in_dir(o.out, "equivtest.json"),
                    {{"pass", report.pass}, {"tolerance", report.tolerance}, {"skipped_points", report.skipped_points}, {"elements", elements}, {"group", group_to_json(group)}});
  return report.pass ? 0 : 2;
}

int cmd_pipeline(const Options& o) {
  const auto config = load_config(o);
  const auto ctx = make_context(config);
  const bool refine = o.refine || config.refine.enabled;
  if (o.count == 1) {
    const MetricReport r = run_pipeline(ctx, o.out, refine);
    std::printf("pipeline: v2v %.4f cm, mpjpe %.4f cm\n", r.v2v_cm, r.mpjpe_cm);
  } else {
    const auto reports = run_batch(ctx, o.out, o.count, o.jobs, refine);
    std::printf("pipeline: %zu runs written to %s\n", reports.size(), o.out.c_str());
  }
  write_json_file(in_dir(o.out, "config.json"), experiment_to_json(config));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Tightness-field body fitting toolkit"};
  app.require_subcommand(1);
  Options o;
  auto common = [&](CLI::App* cmd) {
    cmd->add_option("--config", o.config_path, "experiment config JSON")->check(CLI::ExistingFile);
    cmd->add_option("--out", o.out, "run directory");
    cmd->add_option("--seed", o.seed, "override the experiment seed");
  };
  auto* synth = app.add_subcommand("synth", "draw a body, dress it and write the ground truth");
  common(synth);
  auto* prep = app.add_subcommand("prep", "build the ground-truth tightness field");
  common(prep);
  prep->add_option("--scan", o.scan, "outer surface OBJ");
  prep->add_option("--body", o.body, "posed body OBJ");
  prep->add_option("--markers", o.markers, "marker layout JSON");
  auto* predict = app.add_subcommand("predict", "oracle prediction with configured noise");
  common(predict);
  predict->add_option("--field", o.field, "ground-truth field JSON");
  auto* fit = app.add_subcommand("fit", "aggregate markers and fit the body");
  common(fit);
  fit->add_option("--field", o.field, "field JSON to fit (default: pred.json)");
  fit->add_option("--markers", o.markers, "marker layout JSON");
  fit->add_flag("--refine", o.refine, "run Chamfer refinement after the marker fit");
  auto* eval = app.add_subcommand("eval", "compute metrics and plots for run directories");
  common(eval);
  eval->add_option("--runs", o.runs, "run directories (default: --out)");
  eval->add_option("--csv", o.csv, "write one CSV row per run");
  auto* equiv = app.add_subcommand("equivtest", "check the group equivariance laws");
  equiv->add_option("--points", o.points, "random cloud size")->check(CLI::PositiveNumber);
  equiv->add_option("--seed", o.seed, "cloud seed");
  equiv->add_option("--out", o.out, "directory for equivtest.json");
  equiv->add_flag("--corrupt-group", o.corrupt_group, "")->group("");
  auto* pipeline = app.add_subcommand("pipeline", "synth, prep, predict, fit and eval in one go");
  common(pipeline);
  pipeline->add_flag("--refine", o.refine, "run Chamfer refinement after the marker fit");
  pipeline->add_option("--jobs", o.jobs, "parallel runs in batch mode")->check(CLI::PositiveNumber);
  pipeline->add_option("--count", o.count, "number of runs (seeds seed, seed+1, ...)")->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }
  try {
    if (*synth) return cmd_synth(o);
    if (*prep) return cmd_prep(o);
    if (*predict) return cmd_predict(o);
    if (*fit) return cmd_fit(o);
    if (*eval) return cmd_eval(o);
    if (*equiv) return cmd_equivtest(o);
    if (*pipeline) return cmd_pipeline(o);
  } catch (const ValidationError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const NumericalError& e) {
    std::fprintf(stderr, "numerical failure: %s\n", e.what());
    return 2;
  } catch (const std::filesystem::filesystem_error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 1;
}
