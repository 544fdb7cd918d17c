#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "mmfit/body_model.hpp"
#include "mmfit/fitting.hpp"
#include "mmfit/geometry.hpp"

namespace mmfit {

struct SynthSpec {
  std::uint64_t seed = 0;
  int persons = 1;
  int frames = 10;
  int cameras = 3;
  double camera_radius = 8.0;  // m, cameras on a circle around the origin
  double camera_height = 2.5;
  double focal = 1000.0;
  int image_width = 1920;
  int image_height = 1080;
  int points_per_person = 400;
  double pixel_noise = 0.0;  // px
  double point_noise = 0.0;  // m
  double motion_amplitude = 1.0;
  double area_radius = 2.0;    // persons start inside this disk
  double min_separation = 1.5;  // m between starting positions
  int clutter_points = 0;      // ground points outside every person box

  void validate() const;
};

/// Missing keys keep their defaults; unknown keys are rejected.
SynthSpec synth_spec_from_json(const nlohmann::json &j, SynthSpec base = {});
nlohmann::json synth_spec_to_json(const SynthSpec &spec);

struct SynthPerson {
  std::string track_id;
  BodyParams params;
  std::vector<Points3> joints;    // per frame
  std::vector<BBox3D> boxes;      // per frame detection box
};

/// One camera's 2D pose for one person in one frame.
struct SynthPose {
  std::string track_id;
  CameraPose2D pose;
};

struct SynthFrame {
  int index = 0;
  PointCloud cloud;
  std::vector<std::vector<SynthPose>> poses;  // per camera
};

struct SynthScene {
  std::string scene_id;
  std::vector<CameraModel> cameras;
  std::vector<Eigen::Vector3d> sensors;  // LiDAR positions
  std::vector<SynthPerson> persons;
  std::vector<SynthFrame> frames;
  Eigen::Vector3d bounds_min, bounds_max;

  /// Assembles a fitting input for one person: detection centers, its 2D
  /// poses, and the frame cloud cropped to its detection box.
  TrackObservation track(int person) const;
};

/// Deterministic synthetic scene. Surface points are drawn by uniform
/// area sampling of sensor-facing faces and placed at the nearest corner
/// vertex of the drawn face before noise, so a noiseless scene has zero
/// chamfer loss at the true parameters.
SynthScene synthesize(const SynthSpec &spec, const BodyModel &model);

}  // namespace mmfit
