#include "mmfit/calibration.hpp"

#include <cmath>

#include <Eigen/SVD>

#include "mmfit/error.hpp"
#include "mmfit/geometry_io.hpp"
#include "mmfit/rotation.hpp"

namespace mmfit {

std::vector<Eigen::Vector3d> CorrespondenceSet::world_points() const {
  std::vector<Eigen::Vector3d> out;
  out.reserve(pairs.size());
  for (const auto &p : pairs) out.push_back(p.world);
  return out;
}

void CorrespondenceSet::validate() const {
  if (pairs.empty()) throw Error("correspondences: empty set");
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    if (!pairs[i].world.allFinite() || !pairs[i].pixel.allFinite()) {
      throw Error("correspondences: pair " + std::to_string(i) + " is not finite");
    }
  }
}

CorrespondenceSet correspondences_from_json(const nlohmann::json &j) {
  CorrespondenceSet set;
  if (!j.is_object()) throw Error("correspondences: expected an object");
  if (!j.contains("camera_id") || !j.at("camera_id").is_string()) {
    throw Error("correspondences: missing string field 'camera_id'");
  }
  set.camera_id = j.at("camera_id").get<std::string>();
  if (!j.contains("pairs") || !j.at("pairs").is_array()) {
    throw Error("correspondences: missing array field 'pairs'");
  }
  std::size_t i = 0;
  for (const auto &p : j.at("pairs")) {
    const std::string where = "correspondences: pairs[" + std::to_string(i++) + "]";
    if (!p.contains("world") || !p.contains("pixel")) throw Error(where + ": needs 'world' and 'pixel'");
    Correspondence c;
    c.world = vec3_from_json(p.at("world"), where + ".world");
    const auto &px = p.at("pixel");
    if (!px.is_array() || px.size() != 2 || !px[0].is_number() || !px[1].is_number()) {
      throw Error(where + ".pixel: expected an array of 2 numbers");
    }
    c.pixel = Eigen::Vector2d(px[0].get<double>(), px[1].get<double>());
    set.pairs.push_back(c);
  }
  return set;
}

nlohmann::json correspondences_to_json(const CorrespondenceSet &set) {
  nlohmann::json pairs = nlohmann::json::array();
  for (const auto &p : set.pairs) {
    pairs.push_back({{"world", vec_to_json(p.world)}, {"pixel", {p.pixel.x(), p.pixel.y()}}});
  }
  return {{"camera_id", set.camera_id}, {"pairs", pairs}};
}

CorrespondenceSet load_correspondences(const std::filesystem::path &path) {
  return correspondences_from_json(read_json_file(path));
}

double coplanarity_score(std::span<const Eigen::Vector3d> points) {
  if (points.size() < 4) throw Error("coplanarity_score: needs at least 4 points");
  Eigen::Vector3d mean = Eigen::Vector3d::Zero();
  for (const auto &p : points) mean += p;
  mean /= static_cast<double>(points.size());
  Eigen::MatrixXd A(points.size(), 3);
  for (std::size_t i = 0; i < points.size(); ++i) A.row(i) = (points[i] - mean).transpose();
  const Eigen::JacobiSVD<Eigen::MatrixXd> svd(A);
  const auto &s = svd.singularValues();
  if (s[0] <= 0.0) return 0.0;
  const double ratio = s[2] / s[0];
  // Round-off on exactly planar input leaves ~1e-17; report it as zero.
  return ratio < 1e-12 ? 0.0 : ratio;
}

double reprojection_rmse(const CameraModel &camera, const CorrespondenceSet &set,
                         double invalid_penalty) {
  if (set.pairs.empty()) throw Error("reprojection_rmse: empty set");
  double sum = 0.0;
  for (const auto &p : set.pairs) {
    if (auto px = project(camera, p.world)) {
      sum += (*px - p.pixel).squaredNorm();
    } else {
      sum += invalid_penalty * invalid_penalty;
    }
  }
  return std::sqrt(sum / static_cast<double>(set.pairs.size()));
}

double calibration_objective(const CameraIntrinsics &K, const CorrespondenceSet &set,
                             const CalibrationConfig &config, const Eigen::VectorXd &x,
                             Eigen::VectorXd *grad) {
  const Eigen::Vector3d aa = x.head<3>();
  const Eigen::Vector3d t = x.tail<3>();
  const Eigen::Matrix3d R = axis_angle_to_matrix(aa);
  std::array<Eigen::Matrix3d, 3> dR;
  if (grad) {
    dR = axis_angle_jacobian(aa);
    grad->setZero(6);
  }
  const double inv_n = 1.0 / static_cast<double>(set.pairs.size());
  double loss = 0.0;
  for (const auto &p : set.pairs) {
    const Eigen::Vector3d pc = R * p.world + t;
    Eigen::Vector3d g_pc = Eigen::Vector3d::Zero();
    double z = pc.z();
    bool clamped = false;
    if (z < config.hinge_depth) {
      const double gap = config.hinge_depth - z;
      loss += config.hinge_weight * gap * gap * inv_n;
      g_pc.z() -= 2.0 * config.hinge_weight * gap * inv_n;
      z = config.hinge_depth;
      clamped = true;
    }
    const double u = K.fx * pc.x() / z + K.cx;
    const double v = K.fy * pc.y() / z + K.cy;
    const double eu = u - p.pixel.x();
    const double ev = v - p.pixel.y();
    loss += (eu * eu + ev * ev) * inv_n;
    if (grad) {
      g_pc.x() += 2.0 * inv_n * eu * K.fx / z;
      g_pc.y() += 2.0 * inv_n * ev * K.fy / z;
      if (!clamped) {
        g_pc.z() -= 2.0 * inv_n * (eu * K.fx * pc.x() + ev * K.fy * pc.y()) / (z * z);
      }
      grad->tail<3>() += g_pc;
      for (int k = 0; k < 3; ++k) (*grad)[k] += g_pc.dot(dR[k] * p.world);
    }
  }
  return loss;
}

std::vector<CameraExtrinsics> calibration_seeds(const CameraIntrinsics &K,
                                                const CorrespondenceSet &set, int count) {
  Eigen::Vector3d centroid = Eigen::Vector3d::Zero();
  Eigen::Vector2d pix_centroid = Eigen::Vector2d::Zero();
  for (const auto &p : set.pairs) {
    centroid += p.world;
    pix_centroid += p.pixel;
  }
  const double n = static_cast<double>(set.pairs.size());
  centroid /= n;
  pix_centroid /= n;
  double world_spread = 0.0, pixel_spread = 0.0;
  for (const auto &p : set.pairs) {
    world_spread += (p.world - centroid).squaredNorm();
    pixel_spread += (p.pixel - pix_centroid).squaredNorm();
  }
  world_spread = std::sqrt(world_spread / n);
  pixel_spread = std::sqrt(pixel_spread / n);
  const double focal = 0.5 * (K.fx + K.fy);
  double distance = pixel_spread > 1e-9 ? focal * world_spread / pixel_spread : 10.0;
  if (!std::isfinite(distance) || distance < 1e-3) distance = 10.0;

  std::vector<CameraExtrinsics> seeds;
  const double elevation = 20.0 * M_PI / 180.0;
  for (int k = 0; k < count; ++k) {
    const double az = 2.0 * M_PI * k / count;
    const Eigen::Vector3d dir(std::cos(az) * std::cos(elevation),
                              std::sin(az) * std::cos(elevation), std::sin(elevation));
    seeds.push_back(CameraExtrinsics::look_at(centroid + distance * dir, centroid));
  }
  return seeds;
}

namespace {

OptimizerResult run_single(const CameraIntrinsics &K, const CorrespondenceSet &set,
                           const CalibrationConfig &config, const CameraExtrinsics &start) {
  Eigen::VectorXd x0(6);
  x0.head<3>() = matrix_to_axis_angle(start.rotation);
  x0.tail<3>() = start.translation;
  const Objective f = [&](const Eigen::VectorXd &x, Eigen::VectorXd *g) {
    return calibration_objective(K, set, config, x, g);
  };
  if (config.method == CalibrationMethod::kLbfgs) {
    LbfgsOptions opt;
    opt.max_iterations = config.max_iterations;
    opt.gradient_tolerance = config.gradient_tolerance;
    opt.function_tolerance = 0.0;
    return minimize_lbfgs(f, x0, opt);
  }
  GradientDescentOptions opt;
  opt.max_iterations = config.max_iterations;
  opt.gradient_tolerance = config.gradient_tolerance;
  opt.function_tolerance = 0.0;
  opt.initial_step = 1e-8;
  return minimize_gradient_descent(f, x0, opt);
}

}  // namespace

CalibrationResult fit_extrinsics(const CameraIntrinsics &K, const CorrespondenceSet &set,
                                 const std::optional<CameraExtrinsics> &init,
                                 const CalibrationConfig &config) {
  K.validate();
  set.validate();
  CalibrationResult result;
  if (set.pairs.size() < config.min_pairs) {
    result.warnings.push_back("only " + std::to_string(set.pairs.size()) + " pairs; at least " +
                              std::to_string(config.min_pairs) + " recommended");
  }
  if (set.pairs.size() >= 4) {
    const auto pts = set.world_points();
    result.coplanarity = coplanarity_score(pts);
    if (result.coplanarity < config.coplanarity_threshold) {
      const std::string msg = "world points are near-coplanar (score " +
                              std::to_string(result.coplanarity) + " < " +
                              std::to_string(config.coplanarity_threshold) + ")";
      if (config.reject_coplanar) throw Error("fit_extrinsics: " + msg);
      result.warnings.push_back(msg);
    }
  }

  const std::vector<CameraExtrinsics> starts =
      init ? std::vector<CameraExtrinsics>{*init} : calibration_seeds(K, set, config.num_starts);

  double best = std::numeric_limits<double>::infinity();
  for (std::size_t s = 0; s < starts.size(); ++s) {
    const OptimizerResult run = run_single(K, set, config, starts[s]);
    CameraModel cam{set.camera_id, K,
                    CameraExtrinsics::from_axis_angle(run.x.head<3>(), run.x.tail<3>())};
    if (init && run.iterations == 0) cam.extrinsics = *init;
    const double rmse = reprojection_rmse(cam, set, config.invalid_penalty);
    result.start_rmse.push_back(rmse);
    if (rmse < best) {
      best = rmse;
      result.extrinsics = cam.extrinsics;
      result.rmse = rmse;
      result.best_start = static_cast<int>(s);
      result.iterations = run.iterations;
      result.status = run.status;
    }
  }
  result.within_tolerance = result.rmse <= config.max_rmse;
  if (!result.within_tolerance) {
    result.warnings.push_back("best RMSE " + std::to_string(result.rmse) + " px exceeds max_rmse " +
                              std::to_string(config.max_rmse) + " px");
  }
  return result;
}

nlohmann::json calibration_report(const CalibrationResult &result, const CameraModel &camera,
                                  const CorrespondenceSet &set, const CalibrationConfig &config) {
  nlohmann::json residuals = nlohmann::json::array();
  for (const auto &p : set.pairs) {
    if (auto px = project(camera, p.world)) {
      residuals.push_back({{"pixel", {p.pixel.x(), p.pixel.y()}},
                           {"projected", {px->x(), px->y()}},
                           {"error", (*px - p.pixel).norm()}});
    } else {
      residuals.push_back({{"pixel", {p.pixel.x(), p.pixel.y()}},
                           {"projected", nullptr},
                           {"error", config.invalid_penalty}});
    }
  }
  return {{"camera_id", camera.id},
          {"rmse", result.rmse},
          {"within_tolerance", result.within_tolerance},
          {"max_rmse", config.max_rmse},
          {"coplanarity", result.coplanarity},
          {"best_start", result.best_start},
          {"start_rmse", result.start_rmse},
          {"iterations", result.iterations},
          {"status", to_string(result.status)},
          {"warnings", result.warnings},
          {"residuals", residuals}};
}

CalibrationConfig calibration_config_from_json(const nlohmann::json &j) {
  if (!j.is_object()) throw Error("calibration config: expected an object");
  CalibrationConfig c;
  auto number = [&](const std::string &key, const nlohmann::json &v) {
    if (!v.is_number()) throw Error("calibration config: " + key + ": expected a number");
    return v.get<double>();
  };
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string &k = it.key();
    const nlohmann::json &v = *it;
    if (k == "method") {
      const std::string m = v.is_string() ? v.get<std::string>() : "";
      if (m == "gradient_descent") c.method = CalibrationMethod::kGradientDescent;
      else if (m == "lbfgs") c.method = CalibrationMethod::kLbfgs;
      else throw Error("calibration config: method: expected \"gradient_descent\" or \"lbfgs\"");
    } else if (k == "num_starts") {
      c.num_starts = static_cast<int>(number(k, v));
    } else if (k == "max_rmse") {
      c.max_rmse = number(k, v);
    } else if (k == "coplanarity_threshold") {
      c.coplanarity_threshold = number(k, v);
    } else if (k == "reject_coplanar") {
      if (!v.is_boolean()) throw Error("calibration config: reject_coplanar: expected a boolean");
      c.reject_coplanar = v.get<bool>();
    } else if (k == "invalid_penalty") {
      c.invalid_penalty = number(k, v);
    } else if (k == "hinge_depth") {
      c.hinge_depth = number(k, v);
    } else if (k == "hinge_weight") {
      c.hinge_weight = number(k, v);
    } else if (k == "max_iterations") {
      c.max_iterations = static_cast<int>(number(k, v));
    } else if (k == "gradient_tolerance") {
      c.gradient_tolerance = number(k, v);
    } else if (k == "min_pairs") {
      const double n = number(k, v);
      if (n < 1) throw Error("calibration config: min_pairs must be positive");
      c.min_pairs = static_cast<std::size_t>(n);
    } else {
      throw Error("calibration config: unknown key '" + k + "'");
    }
  }
  if (c.num_starts < 1 || c.max_iterations < 1) throw Error("calibration config: counts must be positive");
  return c;
}

nlohmann::json calibration_config_to_json(const CalibrationConfig &c) {
  return {{"method", c.method == CalibrationMethod::kLbfgs ? "lbfgs" : "gradient_descent"},
          {"num_starts", c.num_starts},
          {"max_rmse", c.max_rmse},
          {"coplanarity_threshold", c.coplanarity_threshold},
          {"reject_coplanar", c.reject_coplanar},
          {"invalid_penalty", c.invalid_penalty},
          {"hinge_depth", c.hinge_depth},
          {"hinge_weight", c.hinge_weight},
          {"max_iterations", c.max_iterations},
          {"gradient_tolerance", c.gradient_tolerance},
          {"min_pairs", c.min_pairs}};
}

}  // namespace mmfit
