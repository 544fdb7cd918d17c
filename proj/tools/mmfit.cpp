// Command line front end: calibrate, fit, fuse, eval, stats, synth, run,
// serve and import.

#include <csignal>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <iostream>
#include <set>

#include <CLI11.hpp>

#include "mmfit/calibration.hpp"
#include "mmfit/error.hpp"
#include "mmfit/fusion.hpp"
#include "mmfit/geometry_io.hpp"
#include "mmfit/metrics.hpp"
#include "mmfit/pipeline.hpp"
#include "mmfit/review.hpp"
#include "mmfit/scene.hpp"

namespace fs = std::filesystem;
using namespace mmfit;

namespace {

struct Globals {
  std::string config;
  std::string out;
  std::uint64_t seed = 0;
  bool seed_given = false;
  int threads = 0;
};

/// Section of the --config file; {"pipeline", "fusion", "calibration",
/// "synth"}.
json config_section(const Globals &g, const std::string &name) {
  if (g.config.empty()) return json::object();
  const json j = read_json_file(g.config);
  if (!j.is_object()) throw Error(g.config + ": expected an object");
  static const std::set<std::string> known{"pipeline", "fusion", "calibration", "synth"};
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!known.count(it.key())) throw Error(g.config + ": unknown section '" + it.key() + "'");
  return j.value(name, json::object());
}

fs::path require_out(const Globals &g) {
  if (g.out.empty()) throw Error("--out is required");
  fs::create_directories(g.out);
  return g.out;
}

/// Timestamped lines for the sidecar log; also echoed to stderr.
class RunLog {
 public:
  explicit RunLog(const fs::path &path) : out_(path, std::ios::app) {}
  void operator()(const std::string &line) {
    const std::time_t t = std::time(nullptr);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char stamp[32];
    std::strftime(stamp, sizeof stamp, "%Y-%m-%dT%H:%M:%SZ", &tm);
    out_ << stamp << ' ' << line << '\n';
    out_.flush();
    std::cerr << line << '\n';
  }

 private:
  std::ofstream out_;
};

int cmd_synth(const Globals &g, const json &section, bool heatmaps) {
  SynthSpec spec = synth_spec_from_json(section);
  if (g.seed_given) spec.seed = g.seed;
  const fs::path out = require_out(g);
  const BodyModel model = make_toy_model(0, 828, 24);
  const auto prior = make_toy_pose_prior(0, model.pose_dims());
  SceneWriteOptions options;
  options.heatmaps = heatmaps;
  const SynthScene scene = write_synth_scene(out, spec, model, prior.get(), options);
  std::cout << "wrote " << scene.scene_id << " to " << (out / "manifest.json").string() << " ("
            << scene.persons.size() << " persons, " << scene.frames.size() << " frames, " << scene.cameras.size()
            << " cameras)\n";
  return 0;
}

int cmd_run(const Globals &g, const std::string &manifest_path, const std::vector<std::string> &tracks, bool fit_only) {
  PipelineConfig config = pipeline_config_from_json(config_section(g, "pipeline"));
  config.threads = g.threads;
  config.only_tracks = tracks;
  config.evaluate = !fit_only;
  const fs::path out = require_out(g);
  const SceneManifest m = load_manifest(manifest_path);
  RunLog log(out / (fit_only ? "fit.log" : "run.log"));
  const PipelineReport report = run_pipeline(m, config, out, [&](const std::string &l) { log(l); });
  int failed = 0;
  for (const auto &t : report.tracks) failed += t.status == "failed";
  if (report.metrics) std::cout << format_table({{"mmfit", "LiDAR+RGB", *report.metrics}});
  std::cout << "results in " << out.string() << "\n";
  return failed ? 3 : 0;
}

int cmd_fuse(const Globals &g, const std::string &manifest_path) {
  FusionConfig config = fusion_config_from_json(config_section(g, "fusion"));
  if (g.threads) config.threads = g.threads;
  const fs::path out = require_out(g);
  const SceneManifest m = load_manifest(manifest_path);
  const int joints = scene_body_model(m).num_joints();
  RunLog log(out / "fuse.log");
  const auto frames = fuse_scene(m, config, joints, [&](const std::string &l) { log(l); });
  write_json_file(out / "predictions.json", predictions_to_json(frames));
  std::cout << "predictions in " << (out / "predictions.json").string() << "\n";
  return 0;
}

int cmd_eval(const Globals &g, const std::string &gt_path, const std::string &pred_path, const std::string &algorithm,
             const std::string &modality) {
  const auto frames = load_annotations(read_json_file(gt_path), read_json_file(pred_path));
  const MetricReport report = evaluate(frames, g.threads);
  const std::string table = format_table({{algorithm, modality, report}});
  if (!g.out.empty()) {
    const fs::path out = require_out(g);
    write_json_file(out / "metrics.json", to_json(report));
    std::ofstream(out / "metrics.txt") << table;
  }
  for (const auto &w : report.warnings) std::cerr << "warning: " << w << "\n";
  std::cout << table;
  return 0;
}

int cmd_stats(const Globals &g, const std::string &manifest_path) {
  const SceneManifest m = load_manifest(manifest_path);
  const json stats = to_json(scene_statistics(load_stats_scene(m)));
  if (!g.out.empty()) write_json_file(require_out(g) / "stats.json", stats);
  std::cout << stats.dump(2) << "\n";
  return 0;
}

int cmd_calibrate(const Globals &g, const std::string &camera_path, const std::string &corr_path,
                  const std::string &init_path) {
  const CalibrationConfig config = calibration_config_from_json(config_section(g, "calibration"));
  const json cam_json = read_json_file(camera_path);
  const CorrespondenceSet set = load_correspondences(corr_path);
  CameraModel camera;
  camera.intrinsics = intrinsics_from_json(cam_json);
  camera.id = cam_json.contains("id") && cam_json.at("id").is_string() ? cam_json.at("id").get<std::string>()
                                                                      : set.camera_id;
  if (!set.camera_id.empty() && set.camera_id != camera.id)
    throw Error(corr_path + ": camera_id '" + set.camera_id + "' does not match the camera '" + camera.id + "'");
  std::optional<CameraExtrinsics> init;
  if (!init_path.empty()) init = load_camera(init_path).extrinsics;
  const CalibrationResult result = fit_extrinsics(camera.intrinsics, set, init, config);
  camera.extrinsics = result.extrinsics;
  const json report = calibration_report(result, camera, set, config);
  const fs::path out = require_out(g);
  save_camera(out / (camera.id + ".json"), camera);
  write_json_file(out / (camera.id + "_report.json"), report);
  for (const auto &w : result.warnings) std::cerr << "warning: " << w << "\n";
  std::cout << "camera " << camera.id << ": rmse " << result.rmse << " px"
            << (result.within_tolerance ? "" : " (above max_rmse)") << "\n";
  return result.within_tolerance ? 0 : 3;
}

ReviewHttpServer *g_server = nullptr;

void on_signal(int) {
  if (g_server) g_server->stop();
}

int cmd_serve(const Globals &g, const std::string &manifest_path, const std::string &results_dir,
              const std::string &host, int port, const std::string &static_dir) {
  const char *token = std::getenv("MMFIT_TOKEN");
  if (!token || !*token) throw Error("MMFIT_TOKEN must be set to the shared access token");
  const fs::path state_dir = g.out.empty() ? fs::path(results_dir) / "review" : fs::path(g.out);
  ReviewService service(load_review_scene(manifest_path, results_dir), token, state_dir);
  ReviewHttpServer server(service, static_dir);
  const int bound = server.bind(host, port);
  g_server = &server;
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  std::cout << "serving " << service.scene().manifest.scene_id << " on http://" << host << ":" << bound
            << " (revision " << service.revision() << ", state in " << state_dir.string() << ")" << std::endl;
  server.listen();
  g_server = nullptr;
  return 0;
}

int cmd_import(const Globals &g, const std::string &spec_path) {
  const fs::path out = require_out(g);
  const ImportResult r = import_external_scene(read_json_file(spec_path), fs::path(spec_path).parent_path(), out);
  for (const auto &w : r.warnings) std::cerr << "warning: " << w << "\n";
  std::cout << "imported " << r.manifest.scene_id << " to " << (out / "manifest.json").string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char **argv) {
  CLI::App app{"Multi-modal human pose fitting toolkit"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--config", g.config, "JSON config with pipeline/fusion/calibration/synth sections")
      ->check(CLI::ExistingFile);
  app.add_option("--out", g.out, "Output directory");
  auto *seed_opt = app.add_option("--seed", g.seed, "Random seed");
  app.add_option("--threads", g.threads, "Worker threads (0 = hardware concurrency)")->check(CLI::NonNegativeNumber);

  std::string manifest, gt, pred, algorithm = "mmfit", modality = "LiDAR+RGB", camera, corr, init, results, host = "127.0.0.1",
                                     static_dir, spec;
  std::vector<std::string> tracks;
  int port = 8080;
  bool heatmaps = false;

  auto *calibrate = app.add_subcommand("calibrate", "Fit camera extrinsics to 2D-3D correspondences");
  calibrate->add_option("--camera", camera, "Camera or intrinsics JSON")->required()->check(CLI::ExistingFile);
  calibrate->add_option("--correspondences", corr, "Correspondence JSON")->required()->check(CLI::ExistingFile);
  calibrate->add_option("--init", init, "Camera JSON whose extrinsics seed the fit")->check(CLI::ExistingFile);

  auto *fit = app.add_subcommand("fit", "Fit tracks of a scene without evaluation");
  fit->add_option("manifest", manifest, "Scene manifest")->required()->check(CLI::ExistingFile);
  fit->add_option("--track", tracks, "Only these tracks");

  auto *fuse = app.add_subcommand("fuse", "Decode poses with the heatmap/occupancy fusion");
  fuse->add_option("manifest", manifest, "Scene manifest")->required()->check(CLI::ExistingFile);

  auto *eval = app.add_subcommand("eval", "Evaluate predictions against ground truth");
  eval->add_option("--gt", gt, "Ground truth JSON")->required()->check(CLI::ExistingFile);
  eval->add_option("--pred", pred, "Prediction JSON")->required()->check(CLI::ExistingFile);
  eval->add_option("--algorithm", algorithm, "Table row name");
  eval->add_option("--modality", modality, "Table input modality");

  auto *stats = app.add_subcommand("stats", "Per-scene dataset statistics");
  stats->add_option("manifest", manifest, "Scene manifest")->required()->check(CLI::ExistingFile);

  auto *synth = app.add_subcommand("synth", "Write a synthetic scene");
  synth->add_flag("--heatmaps", heatmaps, "Also write rendered 2D heatmaps");

  auto *run = app.add_subcommand("run", "Filter, fit and evaluate a scene");
  run->add_option("manifest", manifest, "Scene manifest")->required()->check(CLI::ExistingFile);

  auto *serve = app.add_subcommand("serve", "Review service over HTTP (token from MMFIT_TOKEN)");
  serve->add_option("manifest", manifest, "Scene manifest")->required()->check(CLI::ExistingFile);
  serve->add_option("--results", results, "Output directory of run or fit")->required()->check(CLI::ExistingDirectory);
  serve->add_option("--host", host, "Bind address");
  serve->add_option("--port", port, "Port (0 = any free port)");
  serve->add_option("--static", static_dir, "Static UI bundle")->check(CLI::ExistingDirectory);

  auto *import = app.add_subcommand("import", "Convert an external scene description into the manifest layout");
  import->add_option("spec", spec, "Scene description JSON")->required()->check(CLI::ExistingFile);

  CLI11_PARSE(app, argc, argv);
  g.seed_given = seed_opt->count() > 0;

  try {
    if (*calibrate) return cmd_calibrate(g, camera, corr, init);
    if (*fit) return cmd_run(g, manifest, tracks, true);
    if (*fuse) return cmd_fuse(g, manifest);
    if (*eval) return cmd_eval(g, gt, pred, algorithm, modality);
    if (*stats) return cmd_stats(g, manifest);
    if (*synth) return cmd_synth(g, config_section(g, "synth"), heatmaps);
    if (*run) return cmd_run(g, manifest, {}, false);
    if (*serve) return cmd_serve(g, manifest, results, host, port, static_dir);
    if (*import) return cmd_import(g, spec);
  } catch (const std::exception &e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
