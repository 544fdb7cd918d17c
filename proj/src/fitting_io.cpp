#include <set>

#include "mmfit/error.hpp"
#include "mmfit/fitting.hpp"
#include "mmfit/geometry_io.hpp"

namespace mmfit {

namespace {

void reject_unknown(const json &j, const std::set<std::string> &known, const std::string &where) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!known.count(it.key())) throw Error(where + ": unknown key '" + it.key() + "'");
  }
}

template <class T>
void read(const json &j, const char *key, T &out, const std::string &where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception &) {
    throw Error(where + ": field '" + key + "' has the wrong type");
  }
}

json row_to_json(const Eigen::Ref<const Eigen::RowVectorXd> &row) {
  return json(std::vector<double>(row.data(), row.data() + row.size()));
}

Eigen::RowVectorXd row_from_json(const json &j, const std::string &what) {
  if (!j.is_array()) throw Error(what + ": expected an array");
  Eigen::RowVectorXd v(j.size());
  for (std::size_t i = 0; i < j.size(); ++i) {
    if (!j[i].is_number()) throw Error(what + ": expected numbers");
    v[static_cast<Eigen::Index>(i)] = j[i].get<double>();
  }
  return v;
}

LossBreakdown breakdown_from_json(const json &j) {
  LossBreakdown b;
  const std::string where = "losses";
  read(j, "reprojection", b.reprojection, where);
  read(j, "chamfer", b.chamfer, where);
  read(j, "shape_prior", b.shape_prior, where);
  read(j, "pose_prior", b.pose_prior, where);
  read(j, "motion", b.motion, where);
  return b;
}

json weights_to_json(const LossWeights &w) {
  return json{{"reprojection", w.reprojection},
              {"chamfer", w.chamfer},
              {"shape_prior", w.shape_prior},
              {"pose_prior", w.pose_prior},
              {"motion", w.motion}};
}

LossWeights weights_from_json(const json &j) {
  const std::string where = "fit config weights";
  reject_unknown(j, {"reprojection", "chamfer", "shape_prior", "pose_prior", "motion"}, where);
  LossWeights w;
  read(j, "reprojection", w.reprojection, where);
  read(j, "chamfer", w.chamfer, where);
  read(j, "shape_prior", w.shape_prior, where);
  read(j, "pose_prior", w.pose_prior, where);
  read(j, "motion", w.motion, where);
  return w;
}

}  // namespace

json to_json(const LossBreakdown &b) {
  return json{{"reprojection", b.reprojection},
              {"chamfer", b.chamfer},
              {"shape_prior", b.shape_prior},
              {"pose_prior", b.pose_prior},
              {"motion", b.motion}};
}

json fit_config_to_json(const FitConfig &c) {
  return json{{"weights", weights_to_json(c.weights)},
              {"threshold_pose", c.threshold_pose},
              {"threshold_joints", c.threshold_joints},
              {"threshold_orient", c.threshold_orient},
              {"exp_upper", c.exp_upper},
              {"exp_mode", c.exp_mode == ExpMode::kClamp ? "clamp" : "paper"},
              {"confidence_floor", c.confidence_floor},
              {"weighting", c.weighting == ReprojectionWeighting::kConfidence ? "confidence" : "uniform"},
              {"bidirectional_chamfer", c.bidirectional_chamfer},
              {"max_iterations", c.max_iterations},
              {"gradient_tolerance", c.gradient_tolerance},
              {"function_tolerance", c.function_tolerance},
              {"max_restarts", c.max_restarts},
              {"keypoint_map", c.keypoint_map}};
}

FitConfig fit_config_from_json(const json &j) {
  const std::string where = "fit config";
  if (!j.is_object()) throw Error(where + ": expected an object");
  reject_unknown(j,
                 {"weights", "threshold_pose", "threshold_joints", "threshold_orient", "exp_upper",
                  "exp_mode", "confidence_floor", "weighting", "bidirectional_chamfer",
                  "max_iterations", "gradient_tolerance", "function_tolerance", "max_restarts",
                  "keypoint_map"},
                 where);
  FitConfig c;
  if (j.contains("weights")) c.weights = weights_from_json(j.at("weights"));
  read(j, "threshold_pose", c.threshold_pose, where);
  read(j, "threshold_joints", c.threshold_joints, where);
  read(j, "threshold_orient", c.threshold_orient, where);
  read(j, "exp_upper", c.exp_upper, where);
  if (j.contains("exp_mode")) {
    std::string mode;
    read(j, "exp_mode", mode, where);
    if (mode == "clamp") c.exp_mode = ExpMode::kClamp;
    else if (mode == "paper") c.exp_mode = ExpMode::kPaperLiteral;
    else throw Error(where + ": exp_mode must be 'clamp' or 'paper'");
  }
  read(j, "confidence_floor", c.confidence_floor, where);
  if (j.contains("weighting")) {
    std::string mode;
    read(j, "weighting", mode, where);
    if (mode == "confidence") c.weighting = ReprojectionWeighting::kConfidence;
    else if (mode == "uniform") c.weighting = ReprojectionWeighting::kUniform;
    else throw Error(where + ": weighting must be 'confidence' or 'uniform'");
  }
  read(j, "bidirectional_chamfer", c.bidirectional_chamfer, where);
  read(j, "max_iterations", c.max_iterations, where);
  read(j, "gradient_tolerance", c.gradient_tolerance, where);
  read(j, "function_tolerance", c.function_tolerance, where);
  read(j, "max_restarts", c.max_restarts, where);
  read(j, "keypoint_map", c.keypoint_map, where);
  c.validate();
  return c;
}

json fit_result_to_json(const FitResult &r) {
  json frames = json::array();
  for (int f = 0; f < r.num_frames(); ++f) {
    json joints = json::array();
    for (int k = 0; k < r.joints[f].joints.rows(); ++k) joints.push_back(row_to_json(r.joints[f].joints.row(k)));
    frames.push_back({{"idx", r.frame_indices[f]},
                      {"r", row_to_json(r.params.r.row(f))},
                      {"theta", row_to_json(r.params.theta.row(f))},
                      {"joints", joints},
                      {"losses", to_json(r.frame_losses[f])}});
  }
  const FitDiagnostics &d = r.diagnostics;
  return json{{"track_id", r.track_id},
              {"beta", row_to_json(r.params.beta.transpose())},
              {"frames", frames},
              {"losses", to_json(r.losses)},
              {"weights", weights_to_json(r.weights)},
              {"diagnostics",
               {{"status", d.status},
                {"iterations", d.iterations},
                {"evaluations", d.evaluations},
                {"restarts", d.restarts},
                {"initial_loss", d.initial_loss},
                {"final_loss", d.final_loss},
                {"gradient_norm", d.gradient_norm},
                {"degenerate_frames", d.degenerate_frames},
                {"interpolated_frames", d.interpolated_frames},
                {"removed_frames", d.removed_frames}}}};
}

FitResult fit_result_from_json(const json &j) {
  const std::string where = "fit result";
  FitResult r;
  try {
    r.track_id = j.at("track_id").get<std::string>();
    r.params.beta = row_from_json(j.at("beta"), "beta").transpose();
    const json &frames = j.at("frames");
    const int t = static_cast<int>(frames.size());
    int P = t > 0 ? static_cast<int>(frames[0].at("theta").size()) : 0;
    r.params.r.resize(t, 3);
    r.params.theta.resize(t, P);
    for (int f = 0; f < t; ++f) {
      const json &fr = frames[f];
      r.frame_indices.push_back(fr.at("idx").get<int>());
      r.params.r.row(f) = vec3_from_json(fr.at("r"), "frame r").transpose();
      const Eigen::RowVectorXd th = row_from_json(fr.at("theta"), "frame theta");
      if (th.size() != P) throw Error(where + ": theta length differs between frames");
      r.params.theta.row(f) = th;
      PoseSkeleton3D sk;
      const json &js = fr.at("joints");
      sk.joints.resize(static_cast<Eigen::Index>(js.size()), 3);
      for (std::size_t k = 0; k < js.size(); ++k)
        sk.joints.row(static_cast<Eigen::Index>(k)) = vec3_from_json(js[k], "joint").transpose();
      r.joints.push_back(sk);
      r.frame_losses.push_back(fr.contains("losses") ? breakdown_from_json(fr.at("losses")) : LossBreakdown{});
    }
    if (j.contains("losses")) r.losses = breakdown_from_json(j.at("losses"));
    if (j.contains("weights")) r.weights = weights_from_json(j.at("weights"));
    if (j.contains("diagnostics")) {
      const json &d = j.at("diagnostics");
      const std::string dw = "fit result diagnostics";
      read(d, "status", r.diagnostics.status, dw);
      read(d, "iterations", r.diagnostics.iterations, dw);
      read(d, "evaluations", r.diagnostics.evaluations, dw);
      read(d, "restarts", r.diagnostics.restarts, dw);
      read(d, "initial_loss", r.diagnostics.initial_loss, dw);
      read(d, "final_loss", r.diagnostics.final_loss, dw);
      read(d, "gradient_norm", r.diagnostics.gradient_norm, dw);
      read(d, "degenerate_frames", r.diagnostics.degenerate_frames, dw);
      read(d, "interpolated_frames", r.diagnostics.interpolated_frames, dw);
      read(d, "removed_frames", r.diagnostics.removed_frames, dw);
    }
  } catch (const json::exception &e) {
    throw Error(where + ": " + e.what());
  }
  return r;
}

std::shared_ptr<PosePrior> load_pose_prior(const std::filesystem::path &path) {
  if (path.empty()) return std::make_shared<FallbackPosePrior>();
  const json j = read_json_file(path);
  if (!j.contains("encoder") || !j.at("encoder").is_array() || j.at("encoder").empty()) {
    throw Error("pose prior " + path.string() + ": missing 'encoder' rows");
  }
  const json &rows = j.at("encoder");
  Eigen::MatrixXd E(rows.size(), rows[0].size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const Eigen::RowVectorXd row = row_from_json(rows[i], "pose prior encoder row");
    if (row.size() != E.cols()) throw Error("pose prior " + path.string() + ": ragged encoder rows");
    E.row(static_cast<Eigen::Index>(i)) = row;
  }
  return std::make_shared<LinearPosePrior>(E);
}

void save_pose_prior(const std::filesystem::path &path, const LinearPosePrior &prior) {
  json rows = json::array();
  for (int i = 0; i < prior.encoder().rows(); ++i) rows.push_back(row_to_json(prior.encoder().row(i)));
  write_json_file(path, json{{"encoder", rows}});
}

}  // namespace mmfit
