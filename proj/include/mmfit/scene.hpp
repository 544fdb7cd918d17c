#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "mmfit/fitting.hpp"
#include "mmfit/geometry.hpp"
#include "mmfit/metrics.hpp"
#include "mmfit/synth.hpp"

namespace mmfit {

/// Files of one camera in one frame. `image` and `heatmap` may be empty.
struct ViewRef {
  std::string camera_id;
  std::filesystem::path image;
  std::filesystem::path poses;
  std::filesystem::path heatmap;
};

struct FrameRef {
  int index = 0;
  std::filesystem::path cloud;
  std::vector<ViewRef> views;
  std::string split;  // "train", "test" or empty
};

/// Keypoint layout of the 2D pose files and its mapping to model joints.
struct Skeleton {
  std::string name;
  int keypoints = 0;
  std::vector<int> map;  // keypoint -> model joint, -1 = unused
};

/// Built-in layouts: "smpl24" (identity over 24 joints) and "coco17".
std::optional<Skeleton> builtin_skeleton(const std::string &name);
/// Identity layout over `joints` keypoints, named "identity".
Skeleton identity_skeleton(int joints);
nlohmann::json skeleton_layout_to_json(const Skeleton &s);
/// Accepts a built-in name or {"name", "keypoints", "map"}.
Skeleton skeleton_layout_from_json(const nlohmann::json &j, const std::string &where);

/// Scene description. Relative paths resolve against `root`, the directory
/// holding manifest.json.
struct SceneManifest {
  std::string scene_id;
  std::filesystem::path root;
  std::vector<std::filesystem::path> cameras;
  std::vector<FrameRef> frames;
  std::filesystem::path tracks;
  std::filesystem::path ground_truth;  // optional
  std::filesystem::path body_model;    // optional
  std::filesystem::path pose_prior;    // optional
  Skeleton skeleton = identity_skeleton(24);
  Eigen::Vector3d bounds_min = Eigen::Vector3d::Zero();
  Eigen::Vector3d bounds_max = Eigen::Vector3d::Ones();
  std::vector<Eigen::Vector3d> sensors;

  std::filesystem::path resolve(const std::filesystem::path &p) const;
  /// Referenced files exist, frame indices are contiguous and increasing,
  /// camera ids are unique and every view names a listed camera.
  void validate() const;
  const FrameRef &frame(int index) const;
};

nlohmann::json manifest_to_json(const SceneManifest &m);
SceneManifest manifest_from_json(const nlohmann::json &j, const std::filesystem::path &root);
/// Reads and validates.
SceneManifest load_manifest(const std::filesystem::path &path);
void save_manifest(const std::filesystem::path &path, const SceneManifest &m);

/// Cameras in manifest order.
std::vector<CameraModel> load_cameras(const SceneManifest &m);

struct Detection {
  int index = 0;
  BBox3D box;
};

struct Track {
  std::string track_id;
  std::vector<Detection> detections;  // increasing frame index

  const Detection *at(int index) const;
};

/// {"tracks": [{"track_id", "detections": [{"idx", "box": {"center",
/// "size", "yaw"}}]}]}
nlohmann::json tracks_to_json(const std::vector<Track> &tracks);
std::vector<Track> tracks_from_json(const nlohmann::json &j, const std::string &where);
std::vector<Track> load_tracks(const SceneManifest &m);

/// One camera's 2D poses in one frame.
struct PersonPose2D {
  std::string track_id;
  CameraPose2D pose;
};

struct PoseFile {
  std::string camera_id;
  int frame = 0;
  std::string skeleton;
  std::vector<PersonPose2D> persons;
};

/// {"camera_id", "frame", "skeleton", "persons": [{"track_id",
/// "keypoints": [[u, v], ...], "confidence": [...]}]}. Keypoints may also
/// be [u, v, c] triplets, in which case "confidence" is omitted.
nlohmann::json pose_file_to_json(const PoseFile &f);
PoseFile pose_file_from_json(const nlohmann::json &j, const std::string &where);
/// Reads a pose file and checks its layout against the manifest skeleton.
PoseFile load_pose_file(const SceneManifest &m, const ViewRef &view);

struct GroundTruthTrack {
  std::string track_id;
  std::vector<int> frame_indices;
  BodyParams params;
};

/// {"persons": [{"track_id", "beta", "frames": [{"idx", "r", "theta"}]}],
///  "frames": [{"idx", "persons": [{"id", "joints"}]}]}
struct GroundTruth {
  std::vector<GroundTruthTrack> tracks;
  std::vector<FrameAnnotations> frames;  // gts only
};

nlohmann::json ground_truth_to_json(const GroundTruth &gt);
GroundTruth ground_truth_from_json(const nlohmann::json &j, const std::string &where);

/// Builds fitting inputs. Detections whose box holds fewer than
/// `min_points` cloud points are dropped.
struct TrackInputs {
  TrackObservation observation;
  std::vector<int> dropped_frames;
};

std::vector<TrackInputs> build_track_inputs(const SceneManifest &m, const std::vector<CameraModel> &cameras,
                                            const std::vector<Track> &tracks, int min_points);

/// Clouds and detection boxes of every frame for scene_statistics.
StatsScene load_stats_scene(const SceneManifest &m);

struct SceneWriteOptions {
  bool heatmaps = false;
  int heatmap_stride = 8;
  double heatmap_sigma = 4.0;  // image px
  double train_fraction = 0.9;  // leading frames marked "train"
};

/// Synthesizes a scene and writes it under `dir`: manifest.json,
/// cameras/, clouds/, poses/, tracks.json, gt.json, model.bin and, when a
/// prior is given, prior.json. Output bytes depend only on the inputs.
SynthScene write_synth_scene(const std::filesystem::path &dir, const SynthSpec &spec, const BodyModel &model,
                             const LinearPosePrior *prior = nullptr, const SceneWriteOptions &options = {});

struct ImportResult {
  SceneManifest manifest;
  std::vector<std::string> warnings;
};

/// Converts a scene description into the manifest layout under `out_dir`.
/// The description uses the manifest schema with paths relative to
/// `spec_dir`; "bounds" may be omitted and is then derived from the clouds.
/// Every camera must see part of the scene bounds.
ImportResult import_external_scene(const nlohmann::json &spec, const std::filesystem::path &spec_dir,
                                   const std::filesystem::path &out_dir);

}  // namespace mmfit
