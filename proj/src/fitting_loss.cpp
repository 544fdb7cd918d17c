#include <cmath>
#include <random>
#include <string>
#include <unordered_map>

#include <Eigen/QR>

#include "mmfit/error.hpp"
#include "mmfit/fitting.hpp"
#include "mmfit/nearest.hpp"

namespace mmfit {

BodyParams BodyParams::zeros(int frames, int pose_dims) {
  BodyParams p;
  p.beta = Eigen::VectorXd::Zero(BodyModel::kShapeDims);
  p.r = Points3::Zero(frames, 3);
  p.theta = Eigen::MatrixXd::Zero(frames, pose_dims);
  return p;
}

Eigen::VectorXd pack(const BodyParams &params) {
  const int t = params.num_frames();
  const int P = static_cast<int>(params.theta.cols());
  const int stride = 3 + P;
  Eigen::VectorXd x(BodyModel::kShapeDims + t * stride);
  x.head(BodyModel::kShapeDims) = params.beta;
  for (int f = 0; f < t; ++f) {
    const int o = BodyModel::kShapeDims + f * stride;
    x.segment<3>(o) = params.r.row(f).transpose();
    x.segment(o + 3, P) = params.theta.row(f).transpose();
  }
  return x;
}

BodyParams unpack(const Eigen::VectorXd &x, int frames, int pose_dims) {
  const int stride = 3 + pose_dims;
  if (x.size() != BodyModel::kShapeDims + frames * stride) throw Error("unpack: size mismatch");
  BodyParams p = BodyParams::zeros(frames, pose_dims);
  p.beta = x.head(BodyModel::kShapeDims);
  for (int f = 0; f < frames; ++f) {
    const int o = BodyModel::kShapeDims + f * stride;
    p.r.row(f) = x.segment<3>(o).transpose();
    p.theta.row(f) = x.segment(o + 3, pose_dims).transpose();
  }
  return p;
}

LinearPosePrior::LinearPosePrior(Eigen::MatrixXd encoder) : encoder_(std::move(encoder)) {
  if (encoder_.size() == 0 || !encoder_.allFinite()) throw Error("pose prior: invalid encoder");
}

Eigen::VectorXd LinearPosePrior::encode(const Eigen::VectorXd &theta) const {
  if (theta.size() != encoder_.cols()) throw Error("pose prior: pose dimension mismatch");
  return encoder_ * theta;
}

double LinearPosePrior::penalty(const Eigen::VectorXd &theta, Eigen::VectorXd *grad) const {
  const Eigen::VectorXd z = encode(theta);
  if (grad) *grad += 2.0 * encoder_.transpose() * z;
  return z.squaredNorm();
}

Eigen::VectorXd FallbackPosePrior::encode(const Eigen::VectorXd &theta) const {
  return theta.tail(theta.size() - 3);
}

double FallbackPosePrior::penalty(const Eigen::VectorXd &theta, Eigen::VectorXd *grad) const {
  const auto body = theta.tail(theta.size() - 3);
  if (grad) grad->tail(theta.size() - 3) += 2.0 * body;
  return body.squaredNorm();
}

std::shared_ptr<LinearPosePrior> make_toy_pose_prior(std::uint64_t seed, int pose_dims,
                                                    int latent_dims) {
  const int body = pose_dims - 3;
  if (latent_dims < 1 || latent_dims > body) throw Error("make_toy_pose_prior: bad latent size");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::MatrixXd G(body, latent_dims);
  for (Eigen::Index k = 0; k < G.size(); ++k) G.data()[k] = normal(rng);
  const Eigen::MatrixXd Q = Eigen::HouseholderQR<Eigen::MatrixXd>(G).householderQ() *
                            Eigen::MatrixXd::Identity(body, latent_dims);
  Eigen::MatrixXd E = Eigen::MatrixXd::Zero(latent_dims, pose_dims);
  for (int i = 0; i < latent_dims; ++i) {
    const double sd = 0.6 / (1.0 + 0.1 * i);
    E.row(i).tail(body) = Q.col(i).transpose() / sd;
  }
  return std::make_shared<LinearPosePrior>(E);
}

LossBreakdown &LossBreakdown::operator+=(const LossBreakdown &o) {
  reprojection += o.reprojection;
  chamfer += o.chamfer;
  shape_prior += o.shape_prior;
  pose_prior += o.pose_prior;
  motion += o.motion;
  return *this;
}

double f_exp(double x, double y, double upper, ExpMode mode) {
  if (!(y > 0.0)) throw Error("f_exp: threshold must be positive");
  if (x < y) return 0.0;
  if (x <= upper * y) return std::exp(x / y - 1.0) - 1.0;
  return mode == ExpMode::kClamp ? std::exp(upper - 1.0) - 1.0 : 0.0;
}

double f_exp_derivative(double x, double y, double upper, ExpMode mode) {
  (void)mode;
  if (!(y > 0.0)) throw Error("f_exp: threshold must be positive");
  if (x < y || x > upper * y) return 0.0;
  return std::exp(x / y - 1.0) / y;
}

namespace {

// Camera lookup and validated keypoint mapping shared by every evaluation.
struct Prepared {
  const BodyModel &model;
  const TrackObservation &track;
  const FitConfig &cfg;
  std::unordered_map<std::string, int> camera_index;

  explicit Prepared(const FitProblem &p)
      : model(*require(p.model, "model")), track(*require(p.track, "track")), cfg(p.config) {
    for (int c = 0; c < static_cast<int>(p.cameras.size()); ++c) camera_index[p.cameras[c].id] = c;
  }

  template <class T>
  static const T *require(const T *ptr, const char *what) {
    if (!ptr) throw Error(std::string("fit problem: missing ") + what);
    return ptr;
  }

  int joint_for(int k) const {
    if (cfg.keypoint_map.empty()) return k < model.num_joints() ? k : -1;
    return k < static_cast<int>(cfg.keypoint_map.size()) ? cfg.keypoint_map[k] : -1;
  }

  int camera(const std::string &id) const {
    const auto it = camera_index.find(id);
    if (it == camera_index.end()) throw Error("fit problem: unknown camera '" + id + "'");
    return it->second;
  }
};

void check_params(const BodyParams &p, const Prepared &pp) {
  if (p.beta.size() != BodyModel::kShapeDims || p.num_frames() != pp.track.num_frames() ||
      p.theta.rows() != p.num_frames() || p.theta.cols() != pp.model.pose_dims()) {
    throw Error("body params do not match the track and model");
  }
}

double keypoint_weight(double confidence, const FitConfig &cfg) {
  if (!(confidence > 0.0) || confidence < cfg.confidence_floor) return 0.0;
  return cfg.weighting == ReprojectionWeighting::kConfidence ? confidence : 1.0;
}

// Sum of weighted squared pixel residuals for one frame. Adds
// scale * d/djoints into *grad when given.
double reprojection_frame(const Prepared &pp, const std::vector<CameraModel> &cameras,
                          const FrameObservation &frame, const Points3 &joints, double scale,
                          Points3 *grad) {
  double loss = 0.0;
  for (const auto &pose : frame.poses) {
    const CameraModel &cam = cameras[pp.camera(pose.camera_id)];
    const auto &K = cam.intrinsics;
    const Eigen::Matrix3d &R = cam.extrinsics.rotation;
    if (static_cast<int>(pose.confidence.size()) != pose.keypoints.rows()) {
      throw Error("track: keypoint and confidence counts differ");
    }
    for (int k = 0; k < pose.keypoints.rows(); ++k) {
      const int j = pp.joint_for(k);
      if (j < 0) continue;
      const double w = keypoint_weight(pose.confidence[k], pp.cfg);
      if (w == 0.0) continue;
      const Eigen::Vector3d pc = cam.extrinsics.to_camera(joints.row(j).transpose());
      if (!(pc.z() > kMinProjectionDepth)) continue;
      const double iz = 1.0 / pc.z();
      const Eigen::Vector2d px(K.fx * pc.x() / pc.z() + K.cx, K.fy * pc.y() / pc.z() + K.cy);
      const Eigen::Vector2d e = px - pose.keypoints.row(k).transpose();
      loss += w * e.squaredNorm();
      if (grad) {
        Eigen::Matrix<double, 2, 3> Jc;
        Jc << K.fx * iz, 0.0, -K.fx * pc.x() * iz * iz, 0.0, K.fy * iz, -K.fy * pc.y() * iz * iz;
        grad->row(j) += (scale * 2.0 * w) * (R.transpose() * (Jc.transpose() * e)).transpose();
      }
    }
  }
  return loss;
}

double chamfer_frame(const FrameObservation &frame, const Points3 &vertices, bool bidirectional,
                     double scale, Points3 *grad) {
  const auto &Q = frame.cloud.points;
  if (Q.empty()) return 0.0;
  std::vector<Eigen::Vector3d> verts(vertices.rows());
  for (int i = 0; i < vertices.rows(); ++i) verts[i] = vertices.row(i).transpose();
  const NearestNeighbors mesh_index(verts);
  double forward_sum = 0.0;
  const double inv_n = 1.0 / static_cast<double>(Q.size());
  for (const auto &q : Q) {
    const auto hit = mesh_index.query(q);
    forward_sum += hit.squared_distance;
    if (grad) grad->row(hit.index) += (scale * 2.0 * inv_n) * (verts[hit.index] - q).transpose();
  }
  double loss = forward_sum * inv_n;
  if (bidirectional) {
    const NearestNeighbors cloud_index(Q);
    const double inv_v = 1.0 / static_cast<double>(verts.size());
    double backward_sum = 0.0;
    for (int i = 0; i < static_cast<int>(verts.size()); ++i) {
      const auto hit = cloud_index.query(verts[i]);
      backward_sum += hit.squared_distance;
      if (grad) grad->row(i) += (scale * 2.0 * inv_v) * (verts[i] - Q[hit.index]).transpose();
    }
    loss += backward_sum * inv_v;
  }
  return loss;
}

struct MotionParts {
  double pose = 0.0, joints = 0.0, orient = 0.0;
  double total() const { return pose + joints + orient; }
};

// Smoothness between frames f-1 and f. Gradients (scaled) are added into the
// pose rows and joint matrices of both frames when given.
MotionParts motion_pair(const FitConfig &cfg, const Eigen::VectorXd &th_prev,
                        const Eigen::VectorXd &th_cur, const Points3 &j_prev, const Points3 &j_cur,
                        double scale, Eigen::VectorXd *gth_prev, Eigen::VectorXd *gth_cur,
                        Points3 *gj_prev, Points3 *gj_cur) {
  MotionParts m;
  const Eigen::VectorXd dth = th_cur - th_prev;
  const double xp = dth.squaredNorm();
  m.pose = f_exp(xp, cfg.threshold_pose, cfg.exp_upper, cfg.exp_mode);

  const Points3 dj = j_cur - j_prev;
  const double xj = dj.squaredNorm();
  m.joints = f_exp(xj, cfg.threshold_joints, cfg.exp_upper, cfg.exp_mode);

  const Eigen::Vector3d dro = dth.head<3>();
  const double xo = dro.squaredNorm();
  m.orient = f_exp(xo, cfg.threshold_orient, cfg.exp_upper, cfg.exp_mode);

  if (gth_cur) {
    const double dp = scale * 2.0 * f_exp_derivative(xp, cfg.threshold_pose, cfg.exp_upper, cfg.exp_mode);
    const double dq = scale * 2.0 * f_exp_derivative(xo, cfg.threshold_orient, cfg.exp_upper, cfg.exp_mode);
    Eigen::VectorXd g = dp * dth;
    g.head<3>() += dq * dro;
    *gth_cur += g;
    *gth_prev -= g;
    const double dj_scale =
        scale * 2.0 * f_exp_derivative(xj, cfg.threshold_joints, cfg.exp_upper, cfg.exp_mode);
    if (dj_scale != 0.0) {
      *gj_cur += dj_scale * dj;
      *gj_prev -= dj_scale * dj;
    }
  }
  return m;
}

std::vector<PosedBody> forward_all(const BodyParams &p, const BodyModel &model,
                                   std::vector<ForwardCache> *caches) {
  const int t = p.num_frames();
  std::vector<PosedBody> out(t);
  if (caches) caches->resize(t);
  for (int f = 0; f < t; ++f) {
    out[f] = forward(model, p.beta, p.theta.row(f).transpose(), p.r.row(f).transpose(),
                     caches ? &(*caches)[f] : nullptr);
  }
  return out;
}

LossEvaluation evaluate(const BodyParams &params, const FitProblem &problem, Eigen::VectorXd *grad) {
  const Prepared pp(problem);
  check_params(params, pp);
  if (!problem.prior) throw Error("fit problem: missing pose prior");
  const FitConfig &cfg = problem.config;
  const LossWeights &w = cfg.weights;
  const BodyModel &model = pp.model;
  const int t = params.num_frames();
  const int J = model.num_joints(), V = model.num_vertices(), P = model.pose_dims();

  std::vector<ForwardCache> caches;
  const auto bodies = forward_all(params, model, grad ? &caches : nullptr);

  LossEvaluation ev;
  ev.per_frame.resize(t);
  std::vector<Points3> gj, gv;
  std::vector<Eigen::VectorXd> gth;
  if (grad) {
    gj.assign(t, Points3::Zero(J, 3));
    gv.assign(t, Points3::Zero(V, 3));
    gth.assign(t, Eigen::VectorXd::Zero(P));
  }

  for (int f = 0; f < t; ++f) {
    const auto &frame = pp.track.frames[f];
    auto &lf = ev.per_frame[f];
    lf.reprojection = reprojection_frame(pp, problem.cameras, frame, bodies[f].joints, w.reprojection,
                                         grad ? &gj[f] : nullptr);
    lf.chamfer = chamfer_frame(frame, bodies[f].vertices, cfg.bidirectional_chamfer, w.chamfer,
                               grad ? &gv[f] : nullptr);
    Eigen::VectorXd gprior;
    if (grad) gprior = Eigen::VectorXd::Zero(P);
    lf.pose_prior = problem.prior->penalty(params.theta.row(f).transpose(), grad ? &gprior : nullptr);
    if (grad) gth[f] += w.pose_prior * gprior;
    if (f > 0) {
      lf.motion = motion_pair(cfg, params.theta.row(f - 1).transpose(), params.theta.row(f).transpose(),
                              bodies[f - 1].joints, bodies[f].joints, w.motion,
                              grad ? &gth[f - 1] : nullptr, grad ? &gth[f] : nullptr,
                              grad ? &gj[f - 1] : nullptr, grad ? &gj[f] : nullptr)
                      .total();
    }
    ev.terms += lf;
  }
  ev.terms.shape_prior = loss_shape_prior(params.beta);
  ev.total = ev.terms.weighted(w);

  if (grad) {
    const int stride = 3 + P;
    grad->setZero(BodyModel::kShapeDims + t * stride);
    grad->head(BodyModel::kShapeDims) = 2.0 * w.shape_prior * params.beta;
    for (int f = 0; f < t; ++f) {
      const ParamGradient g = backprop(model, params.theta.row(f).transpose(), caches[f], gj[f], gv[f]);
      const int o = BodyModel::kShapeDims + f * stride;
      grad->head(BodyModel::kShapeDims) += g.beta;
      grad->segment<3>(o) = g.r;
      grad->segment(o + 3, P) = g.theta + gth[f];
    }
  }
  return ev;
}

}  // namespace

double loss_reprojection(const BodyParams &params, const FitProblem &problem) {
  const Prepared pp(problem);
  check_params(params, pp);
  const auto bodies = forward_all(params, pp.model, nullptr);
  double loss = 0.0;
  for (int f = 0; f < params.num_frames(); ++f)
    loss += reprojection_frame(pp, problem.cameras, pp.track.frames[f], bodies[f].joints, 0.0, nullptr);
  return loss;
}

double loss_chamfer(const BodyParams &params, const FitProblem &problem) {
  const Prepared pp(problem);
  check_params(params, pp);
  const auto bodies = forward_all(params, pp.model, nullptr);
  double loss = 0.0;
  for (int f = 0; f < params.num_frames(); ++f)
    loss += chamfer_frame(pp.track.frames[f], bodies[f].vertices, problem.config.bidirectional_chamfer,
                          0.0, nullptr);
  return loss;
}

double loss_shape_prior(const Eigen::VectorXd &beta) { return beta.squaredNorm(); }

double loss_pose_prior(const Eigen::MatrixXd &theta, const PosePrior &prior) {
  double loss = 0.0;
  for (int f = 0; f < theta.rows(); ++f) loss += prior.penalty(theta.row(f).transpose(), nullptr);
  return loss;
}

double loss_motion(const BodyParams &params, const FitProblem &problem) {
  const Prepared pp(problem);
  check_params(params, pp);
  if (params.num_frames() < 2) return 0.0;
  const auto bodies = forward_all(params, pp.model, nullptr);
  double loss = 0.0;
  for (int f = 1; f < params.num_frames(); ++f) {
    loss += motion_pair(problem.config, params.theta.row(f - 1).transpose(), params.theta.row(f).transpose(),
                        bodies[f - 1].joints, bodies[f].joints, 0.0, nullptr, nullptr, nullptr, nullptr)
                .total();
  }
  return loss;
}

LossEvaluation total_loss(const BodyParams &params, const FitProblem &problem) {
  return evaluate(params, problem, nullptr);
}

LossEvaluation total_loss_gradient(const BodyParams &params, const FitProblem &problem,
                                   Eigen::VectorXd *grad) {
  if (!grad) throw Error("total_loss_gradient: null gradient output");
  return evaluate(params, problem, grad);
}

}  // namespace mmfit
