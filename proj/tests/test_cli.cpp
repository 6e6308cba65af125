#include "test_support.hpp"

#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

using namespace tightfit;
using namespace tightfit::fixtures;
namespace fs = std::filesystem;

namespace {

struct RunResult {
  int exit_code = -1;
  std::string output;
};

RunResult run_cli(const std::string& args) {
  const std::string cmd = std::string(TIGHTFIT_CLI_PATH) + " " + args + " 2>&1";
  RunResult r;
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) return r;
  char buf[4096];
  while (std::fgets(buf, sizeof(buf), pipe)) r.output += buf;
  const int status = pclose(pipe);
  r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "tightfit_cli_test" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

int count_lines_starting_with(const std::string& text, const std::string& prefix) {
  std::istringstream in(text);
  std::string line;
  int n = 0;
  while (std::getline(in, line))
    if (line.rfind(prefix, 0) == 0) ++n;
  return n;
}

void write_config(const fs::path& path, const json& j) { std::ofstream(path) << j.dump(1); }

// Small experiment that keeps the CLI round trips fast.
json small_config() {
  return {{"correspondence", {{"n_inner", 20000}, {"n_scatter", 5000}}}};
}

}  // namespace

TEST(CliEquivtest, DefaultRunPassesWithSixtyElementLines) {
  const RunResult r = run_cli("equivtest --points 64 --seed 1");
  EXPECT_EQ(r.exit_code, 0) << r.output;
  EXPECT_EQ(count_lines_starting_with(r.output, "element "), 60);
  EXPECT_NE(r.output.find("equivtest: PASS"), std::string::npos);
}

TEST(CliEquivtest, CorruptedGroupFails) {
  const RunResult r = run_cli("equivtest --points 64 --corrupt-group");
  EXPECT_NE(r.exit_code, 0);
  EXPECT_NE(r.output.find("equivtest: FAIL"), std::string::npos);
}

TEST(CliErrors, MissingFilesAndBadConfigExitOne) {
  const fs::path dir = fresh_dir("errors");
  EXPECT_EQ(run_cli("fit --out " + dir.string() + " --field " + (dir / "nope.json").string()).exit_code, 1);
  write_config(dir / "typo.json", {{"lamda", 3}});
  EXPECT_EQ(run_cli("synth --config " + (dir / "typo.json").string() + " --out " + dir.string()).exit_code, 1);
  EXPECT_EQ(run_cli("no-such-command").exit_code, 1);
  EXPECT_EQ(run_cli("equivtest --points 0").exit_code, 1);
}

TEST(CliSynth, ZeroOffsetScanEqualsBody) {
  const fs::path dir = fresh_dir("zero");
  json cfg = small_config();
  cfg["clothing"] = {{"base_offset", 0.0}};
  write_config(dir / "cfg.json", cfg);
  const RunResult r = run_cli("synth --config " + (dir / "cfg.json").string() + " --out " + dir.string());
  ASSERT_EQ(r.exit_code, 0) << r.output;
  EXPECT_EQ(slurp(dir / "scan.obj"), slurp(dir / "body.obj"));
}

TEST(CliSynth, ConstantProfileHasThreeCentimetreGap) {
  const fs::path dir = fresh_dir("constant");
  ASSERT_EQ(run_cli("synth --seed 4 --out " + dir.string()).exit_code, 0);
  const TriMesh body = read_obj((dir / "body.obj").string());
  const TriMesh scan = read_obj((dir / "scan.obj").string());
  const MeshBvh bvh(body);
  const Points pts = sample_positions(sample_surface(scan, 5000, 7));
  double mean = 0;
  for (Eigen::Index i = 0; i < pts.rows(); ++i)
    mean += (bvh.closest(pts.row(i).transpose()).position - pts.row(i).transpose()).norm() / static_cast<double>(pts.rows());
  EXPECT_NEAR(mean, 0.03, 0.003);
}

TEST(CliSynth, SameSeedSameFiles) {
  const fs::path a = fresh_dir("synth_a"), b = fresh_dir("synth_b");
  ASSERT_EQ(run_cli("synth --seed 9 --out " + a.string()).exit_code, 0);
  ASSERT_EQ(run_cli("synth --seed 9 --out " + b.string()).exit_code, 0);
  for (const char* f : {"gt_params.json", "body.obj", "scan.obj", "markers.json"}) EXPECT_EQ(slurp(a / f), slurp(b / f)) << f;
}

TEST(CliPrep, DetachedPieceReportsEuclideanFallback) {
  const fs::path dir = fresh_dir("prep");
  write_config(dir / "cfg.json", small_config());
  const std::string cfg = " --config " + (dir / "cfg.json").string() + " --out " + dir.string();
  ASSERT_EQ(run_cli("synth" + cfg).exit_code, 0);
  TriMesh scan = read_obj((dir / "scan.obj").string());
  const TriMesh blob = icosphere(2, 0.1, Vec3(3.0, 0.0, 0.0));
  const Eigen::Index nv = scan.vertices.rows(), nf = scan.faces.rows();
  scan.vertices.conservativeResize(nv + blob.vertices.rows(), 3);
  scan.vertices.bottomRows(blob.vertices.rows()) = blob.vertices;
  scan.faces.conservativeResize(nf + blob.faces.rows(), 3);
  scan.faces.bottomRows(blob.faces.rows()) = blob.faces.array() + static_cast<int>(nv);
  write_obj((dir / "detached.obj").string(), scan);
  const RunResult r = run_cli("prep" + cfg + " --scan " + (dir / "detached.obj").string());
  ASSERT_EQ(r.exit_code, 0) << r.output;
  long points = 0, geo = 0, euc = 0;
  ASSERT_EQ(std::sscanf(r.output.c_str(), "prep: %ld points, %ld geodesic, %ld euclidean", &points, &geo, &euc), 3) << r.output;
  EXPECT_GT(euc, 0);
  EXPECT_EQ(geo + euc, points);
}

TEST(CliEval, ExactAndShiftedFitsGiveKnownMetrics) {
  const fs::path dir = fresh_dir("eval");
  ASSERT_EQ(run_cli("synth --seed 2 --out " + dir.string()).exit_code, 0);
  FitResult fit;
  fit.params = params_from_json(read_json_file((dir / "gt_params.json").string()));
  write_json_file((dir / "fit.json").string(), fit_result_to_json(fit));
  ASSERT_EQ(run_cli("eval --out " + dir.string()).exit_code, 0);
  json m = read_json_file((dir / "metrics.json").string());
  EXPECT_EQ(m["v2v_cm"].get<double>(), 0.0);
  EXPECT_EQ(m["mpjpe_cm"].get<double>(), 0.0);
  EXPECT_EQ(m["chamfer_cm"].get<double>(), 0.0);
  for (double v : m["shape_mae"]) EXPECT_EQ(v, 0.0);

  fit.params.t.x() += 0.01;
  write_json_file((dir / "fit.json").string(), fit_result_to_json(fit));
  ASSERT_EQ(run_cli("eval --out " + dir.string()).exit_code, 0);
  m = read_json_file((dir / "metrics.json").string());
  EXPECT_NEAR(m["v2v_cm"].get<double>(), 1.0, 1e-9);
  EXPECT_NEAR(m["mpjpe_cm"].get<double>(), 1.0, 1e-9);
  EXPECT_TRUE(fs::exists(dir / "residual_trace.svg"));
  EXPECT_TRUE(fs::exists(dir / "error_histogram.svg"));
}

TEST(CliPipeline, BatchIsDeterministicAndCsvHasOneRowPerRun) {
  const fs::path a = fresh_dir("batch_a"), b = fresh_dir("batch_b");
  write_config(a / "cfg.json", small_config());
  const std::string cfg = " --config " + (a / "cfg.json").string() + " --seed 5 --count 3";
  ASSERT_EQ(run_cli("pipeline" + cfg + " --jobs 3 --out " + a.string()).exit_code, 0);
  ASSERT_EQ(run_cli("pipeline" + cfg + " --jobs 1 --out " + b.string()).exit_code, 0);
  int compared = 0;
  for (const auto& e : fs::recursive_directory_iterator(a)) {
    if (e.path().extension() != ".json" || e.path().filename() == "cfg.json") continue;
    const fs::path rel = fs::relative(e.path(), a);
    EXPECT_EQ(slurp(e.path()), slurp(b / rel)) << rel;
    ++compared;
  }
  EXPECT_GE(compared, 3 * 6);

  const std::string runs = (a / "run_000").string() + " " + (a / "run_001").string() + " " + (a / "run_002").string();
  ASSERT_EQ(run_cli("eval --runs " + runs + " --csv " + (a / "eval.csv").string()).exit_code, 0);
  const std::string csv = slurp(a / "eval.csv");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 4);
}
