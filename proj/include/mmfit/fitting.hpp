#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

#include "mmfit/body_model.hpp"
#include "mmfit/geometry.hpp"
#include "mmfit/optimize.hpp"

namespace mmfit {

using Points2 = Eigen::Matrix<double, Eigen::Dynamic, 2, Eigen::RowMajor>;

/// 2D keypoints of one person seen by one camera.
struct CameraPose2D {
  std::string camera_id;
  Points2 keypoints;               // K x 2 pixels
  std::vector<double> confidence;  // K values in [0, 1]
};

struct FrameObservation {
  int index = 0;
  Eigen::Vector3d center = Eigen::Vector3d::Zero();  // detection center R_f
  std::vector<CameraPose2D> poses;                   // cameras may be absent
  PointCloud cloud;                                  // local points Q_f
};

struct TrackObservation {
  std::string track_id;
  std::vector<FrameObservation> frames;

  int num_frames() const { return static_cast<int>(frames.size()); }
  /// Throws mmfit::Error on non-increasing frame indices, inconsistent
  /// keypoint counts or non-finite values.
  void validate() const;
};

/// Per-track optimization variables: shared beta, per-frame r and theta.
struct BodyParams {
  Eigen::VectorXd beta;  // 10
  Points3 r;             // t x 3
  Eigen::MatrixXd theta;  // t x 3J

  int num_frames() const { return static_cast<int>(r.rows()); }
  static BodyParams zeros(int frames, int pose_dims);
};

/// Flat layout used by the optimizer: [beta, r_0, theta_0, r_1, theta_1, ...].
Eigen::VectorXd pack(const BodyParams &params);
BodyParams unpack(const Eigen::VectorXd &x, int frames, int pose_dims);

class PosePrior {
 public:
  virtual ~PosePrior() = default;
  virtual Eigen::VectorXd encode(const Eigen::VectorXd &theta) const = 0;
  /// Squared norm of the latent code; adds its gradient into *grad.
  virtual double penalty(const Eigen::VectorXd &theta, Eigen::VectorXd *grad) const = 0;
};

/// encode(theta) = E * theta for a stored latent x pose matrix.
class LinearPosePrior : public PosePrior {
 public:
  explicit LinearPosePrior(Eigen::MatrixXd encoder);
  Eigen::VectorXd encode(const Eigen::VectorXd &theta) const override;
  double penalty(const Eigen::VectorXd &theta, Eigen::VectorXd *grad) const override;
  const Eigen::MatrixXd &encoder() const { return encoder_; }

 private:
  Eigen::MatrixXd encoder_;
};

/// Used when no encoder is available: the code is every non-root pose entry.
class FallbackPosePrior : public PosePrior {
 public:
  Eigen::VectorXd encode(const Eigen::VectorXd &theta) const override;
  double penalty(const Eigen::VectorXd &theta, Eigen::VectorXd *grad) const override;
};

/// 32 x 3J PCA-style encoder for toy models: orthonormal directions over the
/// non-root pose entries scaled by decreasing inverse standard deviations.
std::shared_ptr<LinearPosePrior> make_toy_pose_prior(std::uint64_t seed, int pose_dims,
                                                    int latent_dims = 32);
/// JSON {"encoder": [[...], ...]}; a missing path gives the fallback prior.
std::shared_ptr<PosePrior> load_pose_prior(const std::filesystem::path &path);
void save_pose_prior(const std::filesystem::path &path, const LinearPosePrior &prior);

enum class ExpMode { kClamp, kPaperLiteral };
enum class ReprojectionWeighting { kConfidence, kUniform };

struct LossWeights {
  double reprojection = 1e-2;
  double chamfer = 1.0;
  double shape_prior = 1e-1;
  double pose_prior = 1e-2;
  double motion = 1.0;
};

struct FitConfig {
  LossWeights weights;
  // Thresholds for squared frame-to-frame differences.
  double threshold_pose = 0.1;    // rad^2 over the full pose vector
  double threshold_joints = 0.5;  // m^2 summed over joints
  double threshold_orient = 0.02; // rad^2
  double exp_upper = 20.0;
  ExpMode exp_mode = ExpMode::kClamp;
  double confidence_floor = 0.3;
  ReprojectionWeighting weighting = ReprojectionWeighting::kConfidence;
  bool bidirectional_chamfer = false;
  int max_iterations = 2000;
  double gradient_tolerance = 1e-7;
  double function_tolerance = 1e-14;
  int max_restarts = 3;
  /// 2D keypoint index -> model joint index (-1 = unused). Empty means the
  /// identity mapping.
  std::vector<int> keypoint_map;

  void validate() const;
};

nlohmann::json fit_config_to_json(const FitConfig &config);
/// Missing keys keep their defaults; unknown keys are rejected.
FitConfig fit_config_from_json(const nlohmann::json &j);

/// Unweighted loss terms.
struct LossBreakdown {
  double reprojection = 0.0;
  double chamfer = 0.0;
  double shape_prior = 0.0;
  double pose_prior = 0.0;
  double motion = 0.0;

  double weighted(const LossWeights &w) const {
    return w.reprojection * reprojection + w.chamfer * chamfer + w.shape_prior * shape_prior +
           w.pose_prior * pose_prior + w.motion * motion;
  }
  LossBreakdown &operator+=(const LossBreakdown &o);
};

nlohmann::json to_json(const LossBreakdown &b);

/// Exponential smoothness penalty: 0 below y, exp(x/y - 1) - 1 up to
/// upper*y, then clamped (or 0 in paper-literal mode).
double f_exp(double x, double y, double upper = 20.0, ExpMode mode = ExpMode::kClamp);
/// Derivative with respect to x (one-sided conventions at the breakpoints).
double f_exp_derivative(double x, double y, double upper = 20.0, ExpMode mode = ExpMode::kClamp);

/// Everything a loss evaluation needs besides the parameters.
struct FitProblem {
  const BodyModel *model = nullptr;
  std::vector<CameraModel> cameras;
  const TrackObservation *track = nullptr;
  const PosePrior *prior = nullptr;
  FitConfig config;
};

double loss_reprojection(const BodyParams &params, const FitProblem &problem);
double loss_chamfer(const BodyParams &params, const FitProblem &problem);
double loss_shape_prior(const Eigen::VectorXd &beta);
double loss_pose_prior(const Eigen::MatrixXd &theta, const PosePrior &prior);
double loss_motion(const BodyParams &params, const FitProblem &problem);

struct LossEvaluation {
  double total = 0.0;
  LossBreakdown terms;
  std::vector<LossBreakdown> per_frame;  // motion term of frame f covers (f-1, f)
};

LossEvaluation total_loss(const BodyParams &params, const FitProblem &problem);
/// Loss and gradient with respect to pack(params).
LossEvaluation total_loss_gradient(const BodyParams &params, const FitProblem &problem,
                                   Eigen::VectorXd *grad);

struct FitDiagnostics {
  std::string status;
  int iterations = 0;
  int evaluations = 0;
  int restarts = 0;
  double initial_loss = 0.0;
  double final_loss = 0.0;
  double gradient_norm = 0.0;
  std::vector<int> degenerate_frames;  // no camera and no points
  std::vector<int> interpolated_frames;
  std::vector<int> removed_frames;
};

struct FitResult {
  std::string track_id;
  std::vector<int> frame_indices;
  BodyParams params;
  std::vector<PoseSkeleton3D> joints;
  std::vector<LossBreakdown> frame_losses;
  LossBreakdown losses;
  LossWeights weights;
  FitDiagnostics diagnostics;

  int num_frames() const { return static_cast<int>(frame_indices.size()); }
};

/// {track_id, beta, frames: [{idx, r, theta, joints, losses}], losses,
///  weights, diagnostics}
nlohmann::json fit_result_to_json(const FitResult &result);
FitResult fit_result_from_json(const nlohmann::json &j);

/// Fits one track with L-BFGS. Without `init`, r_f starts at the detection
/// center and beta, theta at zero.
FitResult fit_track(const TrackObservation &track, const BodyModel &model,
                    const std::vector<CameraModel> &cameras, const PosePrior &prior,
                    const FitConfig &config, const BodyParams *init = nullptr);

/// Repairs invalid frames (given by frame index). Interior runs are
/// interpolated between their valid neighbours: r linearly, every joint
/// rotation by shortest-arc slerp. Runs touching either end are removed.
FitResult interpolate_frames(const FitResult &result, const BodyModel &model,
                             const std::set<int> &invalid_frames);

}  // namespace mmfit
