#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "mmfit/geometry.hpp"
#include "mmfit/optimize.hpp"

namespace mmfit {

struct Correspondence {
  Eigen::Vector3d world;
  Eigen::Vector2d pixel;
};

struct CorrespondenceSet {
  std::string camera_id;
  std::vector<Correspondence> pairs;

  std::vector<Eigen::Vector3d> world_points() const;
  void validate() const;
};

/// {camera_id, pairs: [{world: [x,y,z], pixel: [u,v]}]}
CorrespondenceSet correspondences_from_json(const nlohmann::json &j);
nlohmann::json correspondences_to_json(const CorrespondenceSet &set);
CorrespondenceSet load_correspondences(const std::filesystem::path &path);

/// Ratio of smallest to largest singular value of the centered point
/// matrix; 0 for coplanar (or collinear) sets. Requires at least 4 points.
double coplanarity_score(std::span<const Eigen::Vector3d> points);

enum class CalibrationMethod { kGradientDescent, kLbfgs };

struct CalibrationConfig {
  CalibrationMethod method = CalibrationMethod::kGradientDescent;
  int num_starts = 8;
  double max_rmse = 5.0;
  double coplanarity_threshold = 0.02;
  bool reject_coplanar = false;
  double invalid_penalty = 1e4;
  /// Depth below which the smooth hinge penalty engages during fitting.
  double hinge_depth = 0.05;
  double hinge_weight = 1e6;
  int max_iterations = 200000;
  double gradient_tolerance = 1e-12;
  std::size_t min_pairs = 6;
};

/// Missing keys keep their defaults; unknown keys are rejected. "method"
/// is "gradient_descent" or "lbfgs".
CalibrationConfig calibration_config_from_json(const nlohmann::json &j);
nlohmann::json calibration_config_to_json(const CalibrationConfig &config);

struct CalibrationResult {
  CameraExtrinsics extrinsics;
  double rmse = 0.0;
  /// False when the best RMSE exceeds config.max_rmse (soft failure).
  bool within_tolerance = false;
  int best_start = 0;
  int iterations = 0;
  OptimizerStatus status = OptimizerStatus::kMaxIterations;
  double coplanarity = 0.0;
  std::vector<double> start_rmse;
  std::vector<std::string> warnings;
};

/// Root mean squared pixel residual. Pairs whose projection is invalid count
/// as a residual of `invalid_penalty` pixels.
double reprojection_rmse(const CameraModel &camera, const CorrespondenceSet &set,
                         double invalid_penalty = 1e4);

/// Mean squared reprojection error plus a hinge on small depths, as a
/// function of x = (axis-angle rotation, translation).
double calibration_objective(const CameraIntrinsics &intrinsics, const CorrespondenceSet &set,
                             const CalibrationConfig &config, const Eigen::VectorXd &x,
                             Eigen::VectorXd *grad);

/// The deterministic multi-start poses: cameras at the estimated viewing
/// distance around the centroid of the world points, looking at it.
std::vector<CameraExtrinsics> calibration_seeds(const CameraIntrinsics &intrinsics,
                                                const CorrespondenceSet &set, int count);

CalibrationResult fit_extrinsics(const CameraIntrinsics &intrinsics, const CorrespondenceSet &set,
                                 const std::optional<CameraExtrinsics> &init = std::nullopt,
                                 const CalibrationConfig &config = {});

nlohmann::json calibration_report(const CalibrationResult &result, const CameraModel &camera,
                                  const CorrespondenceSet &set, const CalibrationConfig &config);

}  // namespace mmfit
