#include "mmfit/fitting.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "mmfit/error.hpp"
#include "mmfit/rotation.hpp"

namespace mmfit {

void TrackObservation::validate() const {
  int keypoints = -1;
  for (std::size_t i = 0; i < frames.size(); ++i) {
    const auto &f = frames[i];
    if (i > 0 && f.index <= frames[i - 1].index) {
      throw Error("track " + track_id + ": frame indices must be strictly increasing");
    }
    if (!f.center.allFinite()) throw Error("track " + track_id + ": non-finite detection center");
    for (const auto &p : f.poses) {
      if (static_cast<int>(p.confidence.size()) != p.keypoints.rows()) {
        throw Error("track " + track_id + ": keypoint and confidence counts differ");
      }
      if (keypoints >= 0 && p.keypoints.rows() != keypoints) {
        throw Error("track " + track_id + ": keypoint count differs between poses");
      }
      keypoints = static_cast<int>(p.keypoints.rows());
      if (!p.keypoints.allFinite()) throw Error("track " + track_id + ": non-finite keypoint");
      for (double c : p.confidence) {
        if (!(c >= 0.0 && c <= 1.0)) throw Error("track " + track_id + ": confidence outside [0, 1]");
      }
    }
    f.cloud.validate();
  }
}

void FitConfig::validate() const {
  const LossWeights &w = weights;
  for (double v : {w.reprojection, w.chamfer, w.shape_prior, w.pose_prior, w.motion}) {
    if (!(v >= 0.0)) throw Error("fit config: loss weights must be non-negative");
  }
  for (double v : {threshold_pose, threshold_joints, threshold_orient}) {
    if (!(v > 0.0)) throw Error("fit config: smoothness thresholds must be positive");
  }
  if (!(exp_upper >= 1.0)) throw Error("fit config: exp_upper must be >= 1");
  if (!(confidence_floor >= 0.0 && confidence_floor <= 1.0)) {
    throw Error("fit config: confidence_floor must lie in [0, 1]");
  }
  if (max_iterations < 0 || max_restarts < 0) throw Error("fit config: negative iteration limit");
  if (!(gradient_tolerance >= 0.0) || !(function_tolerance >= 0.0)) {
    throw Error("fit config: tolerances must be non-negative");
  }
}

namespace {

void check_finite_terms(const LossEvaluation &ev) {
  const LossBreakdown &b = ev.terms;
  const std::pair<const char *, double> terms[] = {{"reprojection", b.reprojection},
                                                   {"chamfer", b.chamfer},
                                                   {"shape_prior", b.shape_prior},
                                                   {"pose_prior", b.pose_prior},
                                                   {"motion", b.motion}};
  for (const auto &[name, v] : terms) {
    if (!std::isfinite(v)) throw Error(std::string("fit_track: non-finite ") + name + " loss at initialization");
  }
}

bool frame_is_degenerate(const FrameObservation &f, const FitConfig &cfg) {
  if (!f.cloud.empty()) return false;
  for (const auto &p : f.poses)
    for (double c : p.confidence)
      if (c > 0.0 && c >= cfg.confidence_floor) return false;
  return true;
}

void fill_outputs(FitResult &res, const BodyModel &model) {
  res.joints.resize(res.params.num_frames());
  for (int f = 0; f < res.params.num_frames(); ++f) {
    res.joints[f].joints = forward(model, res.params.beta, res.params.theta.row(f).transpose(),
                                   res.params.r.row(f).transpose())
                               .joints;
    res.joints[f].confidence.clear();
  }
}

}  // namespace

FitResult fit_track(const TrackObservation &track, const BodyModel &model,
                    const std::vector<CameraModel> &cameras, const PosePrior &prior,
                    const FitConfig &config, const BodyParams *init) {
  if (track.frames.empty()) throw Error("fit_track: track " + track.track_id + " has no frames");
  track.validate();
  config.validate();
  for (int k : config.keypoint_map) {
    if (k >= model.num_joints()) throw Error("fit config: keypoint_map refers to a missing joint");
  }

  FitProblem problem{&model, cameras, &track, &prior, config};
  const int t = track.num_frames();
  const int P = model.pose_dims();

  BodyParams start;
  if (init) {
    start = *init;
  } else {
    start = BodyParams::zeros(t, P);
    for (int f = 0; f < t; ++f) start.r.row(f) = track.frames[f].center.transpose();
  }

  FitResult res;
  res.track_id = track.track_id;
  res.weights = config.weights;
  for (const auto &f : track.frames) res.frame_indices.push_back(f.index);
  for (const auto &f : track.frames)
    if (frame_is_degenerate(f, config)) res.diagnostics.degenerate_frames.push_back(f.index);

  const LossEvaluation initial = total_loss(start, problem);
  check_finite_terms(initial);
  res.diagnostics.initial_loss = initial.total;

  const Objective objective = [&](const Eigen::VectorXd &x, Eigen::VectorXd *g) {
    const BodyParams p = unpack(x, t, P);
    if (g) return total_loss_gradient(p, problem, g).total;
    return total_loss(p, problem).total;
  };

  Eigen::VectorXd x = pack(start);
  double value = initial.total;
  LbfgsOptions opt;
  opt.gradient_tolerance = config.gradient_tolerance;
  opt.function_tolerance = config.function_tolerance;
  int remaining = config.max_iterations;
  OptimizerResult run;
  for (int attempt = 0;; ++attempt) {
    opt.max_iterations = remaining;
    run = minimize_lbfgs(objective, x, opt);
    res.diagnostics.iterations += run.iterations;
    res.diagnostics.evaluations += run.evaluations;
    if (run.value > value) {
      throw Error("fit_track: track " + track.track_id + " diverged (loss increased across restarts)");
    }
    x = run.x;
    value = run.value;
    remaining -= run.iterations;
    // A failed line search or a stall far from stationarity usually means
    // stale curvature pairs; retry with a fresh history.
    const bool stalled = run.status == OptimizerStatus::kLineSearchFailed ||
                         run.status == OptimizerStatus::kFunctionConverged;
    if (!stalled || attempt >= config.max_restarts || remaining <= 0) break;
    ++res.diagnostics.restarts;
  }
  if (run.status == OptimizerStatus::kNonFinite) {
    throw Error("fit_track: track " + track.track_id + " produced a non-finite loss");
  }

  res.params = unpack(x, t, P);
  const LossEvaluation final_eval = total_loss(res.params, problem);
  res.frame_losses = final_eval.per_frame;
  res.losses = final_eval.terms;
  res.diagnostics.status = to_string(run.status);
  res.diagnostics.final_loss = final_eval.total;
  res.diagnostics.gradient_norm = run.gradient_norm;
  fill_outputs(res, model);
  return res;
}

FitResult interpolate_frames(const FitResult &result, const BodyModel &model,
                             const std::set<int> &invalid_frames) {
  const int n = result.num_frames();
  std::vector<bool> bad(n, false);
  int bad_count = 0;
  for (int i = 0; i < n; ++i) {
    bad[i] = invalid_frames.count(result.frame_indices[i]) > 0;
    bad_count += bad[i];
  }
  if (n > 0 && bad_count == n) throw Error("interpolate_frames: every frame is invalid");

  FitResult out = result;
  out.frame_losses.resize(n);
  std::set<int> interpolated(out.diagnostics.interpolated_frames.begin(),
                             out.diagnostics.interpolated_frames.end());
  std::set<int> removed(out.diagnostics.removed_frames.begin(), out.diagnostics.removed_frames.end());
  std::vector<bool> keep(n, true);
  const int J = model.num_joints();

  for (int i = 0; i < n;) {
    if (!bad[i]) {
      ++i;
      continue;
    }
    int end = i;
    while (end < n && bad[end]) ++end;
    const int lo = i - 1, hi = end;  // valid neighbours, if any
    if (lo < 0 || hi >= n) {
      for (int k = i; k < end; ++k) {
        keep[k] = false;
        removed.insert(result.frame_indices[k]);
      }
    } else {
      const double span = result.frame_indices[hi] - result.frame_indices[lo];
      for (int k = i; k < end; ++k) {
        const double s = (result.frame_indices[k] - result.frame_indices[lo]) / span;
        out.params.r.row(k) = (1.0 - s) * result.params.r.row(lo) + s * result.params.r.row(hi);
        for (int j = 0; j < J; ++j) {
          const Eigen::Vector3d a = result.params.theta.row(lo).segment<3>(3 * j).transpose();
          const Eigen::Vector3d b = result.params.theta.row(hi).segment<3>(3 * j).transpose();
          out.params.theta.row(k).segment<3>(3 * j) = slerp_axis_angle(a, b, s).transpose();
        }
        out.frame_losses[k] = LossBreakdown{};
        interpolated.insert(result.frame_indices[k]);
      }
    }
    i = end;
  }

  if (bad_count > 0) {
    int m = 0;
    for (int k = 0; k < n; ++k) m += keep[k];
    FitResult packed = out;
    packed.frame_indices.clear();
    packed.frame_losses.clear();
    packed.params.r.resize(m, 3);
    packed.params.theta.resize(m, out.params.theta.cols());
    for (int k = 0, row = 0; k < n; ++k) {
      if (!keep[k]) continue;
      packed.frame_indices.push_back(out.frame_indices[k]);
      packed.frame_losses.push_back(out.frame_losses[k]);
      packed.params.r.row(row) = out.params.r.row(k);
      packed.params.theta.row(row) = out.params.theta.row(k);
      ++row;
    }
    out = std::move(packed);
  }
  out.diagnostics.interpolated_frames.assign(interpolated.begin(), interpolated.end());
  out.diagnostics.removed_frames.assign(removed.begin(), removed.end());
  fill_outputs(out, model);
  return out;
}

}  // namespace mmfit
