#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "mmfit/fitting.hpp"
#include "mmfit/fusion.hpp"
#include "mmfit/metrics.hpp"
#include "mmfit/scene.hpp"

namespace mmfit {

struct PipelineConfig {
  FitConfig fit;
  int min_points = 20;     // detections with fewer box points are dropped
  std::string eval_split;  // empty = every frame
  int threads = 0;         // tracks fitted concurrently, 0 = hardware concurrency
  std::vector<std::string> only_tracks;  // empty = every track
  bool evaluate = true;                  // compare with ground truth when present

  void validate() const;
};

/// {"min_points", "eval_split", "fit": {...}}; unknown keys are rejected.
nlohmann::json pipeline_config_to_json(const PipelineConfig &config);
PipelineConfig pipeline_config_from_json(const nlohmann::json &j);

struct TrackOutcome {
  std::string track_id;
  std::string status;  // "fitted", "skipped" or "failed"
  std::string message;
  std::vector<int> dropped_frames;
  std::optional<FitResult> result;
};

struct PipelineReport {
  std::string scene_id;
  std::vector<TrackOutcome> tracks;
  std::optional<MetricReport> metrics;
};

nlohmann::json to_json(const PipelineReport &report);

/// Progress lines; the caller decides where they go.
using LogFn = std::function<void(const std::string &)>;

/// Loads the body model and pose prior named by the manifest. Without a
/// model file the toy model (seed 0, 24 joints) is used; without a prior,
/// the fallback prior.
BodyModel scene_body_model(const SceneManifest &m);
std::shared_ptr<PosePrior> scene_pose_prior(const SceneManifest &m);

/// Filters detections, fits every track and evaluates against the ground
/// truth sidecar when there is one. A failing track is reported and the
/// others continue. With a non-empty `out_dir` writes results/<track>.json,
/// report.json and, with ground truth, metrics.json and metrics.txt.
PipelineReport run_pipeline(const SceneManifest &m, const PipelineConfig &config,
                            const std::filesystem::path &out_dir = {}, const LogFn &log = {});

/// Fitted joints as predictions (score 1) joined with ground truth frames.
std::vector<FrameAnnotations> annotations_from_results(const std::vector<FitResult> &results,
                                                       const GroundTruth &gt,
                                                       const std::vector<int> &frame_filter = {});

/// Heatmaps of one frame: loaded from the manifest when present, otherwise
/// rendered from the 2D pose files.
std::vector<Heatmap2D> frame_heatmaps(const SceneManifest &m, const FrameRef &frame,
                                      const std::vector<CameraModel> &cameras, int joints,
                                      const FusionConfig &config);

/// Decodes every frame with the fusion pipeline; predictions carry the
/// proposal score.
std::vector<FrameAnnotations> fuse_scene(const SceneManifest &m, const FusionConfig &config, int joints,
                                         const LogFn &log = {});

}  // namespace mmfit
