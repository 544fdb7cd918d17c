#include "mmfit/pipeline.hpp"

#include <algorithm>
#include <fstream>
#include <set>

#include "mmfit/error.hpp"
#include "mmfit/geometry_io.hpp"
#include "parallel.hpp"

namespace mmfit {

namespace fs = std::filesystem;

void PipelineConfig::validate() const {
  fit.validate();
  if (min_points < 0) throw Error("pipeline config: min_points must be >= 0");
  if (!eval_split.empty() && eval_split != "train" && eval_split != "test")
    throw Error("pipeline config: eval_split must be \"train\", \"test\" or empty");
}

json pipeline_config_to_json(const PipelineConfig &c) {
  return json{{"min_points", c.min_points}, {"eval_split", c.eval_split}, {"fit", fit_config_to_json(c.fit)}};
}

PipelineConfig pipeline_config_from_json(const json &j) {
  if (!j.is_object()) throw Error("pipeline config: expected an object");
  PipelineConfig c;
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string &key = it.key();
    if (key == "min_points") {
      if (!it->is_number_integer()) throw Error("pipeline config: min_points: expected an integer");
      c.min_points = it->get<int>();
    } else if (key == "eval_split") {
      if (!it->is_string()) throw Error("pipeline config: eval_split: expected a string");
      c.eval_split = it->get<std::string>();
    } else if (key == "fit") {
      c.fit = fit_config_from_json(*it);
    } else {
      throw Error("pipeline config: unknown key '" + key + "'");
    }
  }
  c.validate();
  return c;
}

json to_json(const PipelineReport &report) {
  json tracks = json::array();
  int fitted = 0, skipped = 0, failed = 0;
  for (const auto &t : report.tracks) {
    json jt{{"track_id", t.track_id}, {"status", t.status}, {"dropped_frames", t.dropped_frames}};
    if (!t.message.empty()) jt["message"] = t.message;
    if (t.result) {
      jt["frames"] = t.result->num_frames();
      jt["final_loss"] = t.result->diagnostics.final_loss;
      jt["optimizer_status"] = t.result->diagnostics.status;
    }
    tracks.push_back(jt);
    fitted += t.status == "fitted";
    skipped += t.status == "skipped";
    failed += t.status == "failed";
  }
  json j{{"scene_id", report.scene_id},
         {"tracks", tracks},
         {"summary", {{"fitted", fitted}, {"skipped", skipped}, {"failed", failed}}}};
  if (report.metrics) j["metrics"] = to_json(*report.metrics);
  return j;
}

BodyModel scene_body_model(const SceneManifest &m) {
  if (m.body_model.empty()) return make_toy_model(0, 828, 24);
  return load_body_model(m.resolve(m.body_model));
}

std::shared_ptr<PosePrior> scene_pose_prior(const SceneManifest &m) {
  return load_pose_prior(m.pose_prior.empty() ? fs::path() : m.resolve(m.pose_prior));
}

std::vector<FrameAnnotations> annotations_from_results(const std::vector<FitResult> &results, const GroundTruth &gt,
                                                       const std::vector<int> &frame_filter) {
  const std::set<int> keep(frame_filter.begin(), frame_filter.end());
  std::vector<FrameAnnotations> frames;
  for (const FrameAnnotations &g : gt.frames) {
    if (!keep.empty() && !keep.count(g.index)) continue;
    FrameAnnotations fa;
    fa.index = g.index;
    fa.gts = g.gts;
    for (const FitResult &r : results)
      for (int f = 0; f < r.num_frames(); ++f)
        if (r.frame_indices[f] == g.index) fa.preds.push_back({r.joints[f], 1.0});
    frames.push_back(std::move(fa));
  }
  return frames;
}

PipelineReport run_pipeline(const SceneManifest &m, const PipelineConfig &config, const fs::path &out_dir,
                            const LogFn &log) {
  config.validate();
  auto say = [&](const std::string &line) {
    if (log) log(line);
  };
  const std::vector<CameraModel> cameras = load_cameras(m);
  std::vector<Track> tracks = load_tracks(m);
  if (!config.only_tracks.empty()) {
    for (const auto &id : config.only_tracks)
      if (std::none_of(tracks.begin(), tracks.end(), [&](const Track &t) { return t.track_id == id; }))
        throw Error("unknown track '" + id + "'");
    std::erase_if(tracks, [&](const Track &t) {
      return std::find(config.only_tracks.begin(), config.only_tracks.end(), t.track_id) == config.only_tracks.end();
    });
  }
  const BodyModel model = scene_body_model(m);
  const auto prior = scene_pose_prior(m);
  FitConfig fit = config.fit;
  if (fit.keypoint_map.empty()) fit.keypoint_map = m.skeleton.map;
  for (int k : fit.keypoint_map)
    if (k >= model.num_joints())
      throw Error("keypoint map names joint " + std::to_string(k) + " but the model has " +
                  std::to_string(model.num_joints()));

  say("scene " + m.scene_id + ": " + std::to_string(tracks.size()) + " tracks, " +
      std::to_string(m.frames.size()) + " frames");
  const std::vector<TrackInputs> inputs = build_track_inputs(m, cameras, tracks, config.min_points);

  PipelineReport report;
  report.scene_id = m.scene_id;
  report.tracks.resize(inputs.size());
  detail::parallel_for(0, static_cast<int>(inputs.size()), config.threads, [&](int i) {
    const TrackInputs &in = inputs[i];
    TrackOutcome &out = report.tracks[i];
    out.track_id = in.observation.track_id;
    out.dropped_frames = in.dropped_frames;
    if (in.observation.frames.empty()) {
      out.status = "skipped";
      out.message = "no detection with at least " + std::to_string(config.min_points) + " points";
      return;
    }
    try {
      out.result = fit_track(in.observation, model, cameras, *prior, fit);
      out.status = "fitted";
    } catch (const std::exception &e) {
      out.status = "failed";
      out.message = e.what();
    }
  });
  for (const auto &t : report.tracks) {
    std::string line = "track " + t.track_id + ": " + t.status;
    if (t.result) line += " (" + std::to_string(t.result->num_frames()) + " frames, " + t.result->diagnostics.status + ")";
    if (!t.dropped_frames.empty()) line += ", " + std::to_string(t.dropped_frames.size()) + " detections dropped";
    if (!t.message.empty()) line += ": " + t.message;
    say(line);
  }

  if (config.evaluate && !m.ground_truth.empty()) {
    const GroundTruth gt =
        ground_truth_from_json(read_json_file(m.resolve(m.ground_truth)), m.ground_truth.generic_string());
    std::vector<int> filter;
    if (!config.eval_split.empty()) {
      for (const FrameRef &f : m.frames)
        if (f.split == config.eval_split) filter.push_back(f.index);
      if (filter.empty()) throw Error("no frame in split '" + config.eval_split + "'");
    }
    std::vector<FitResult> results;
    for (const auto &t : report.tracks)
      if (t.result) results.push_back(*t.result);
    report.metrics = evaluate(annotations_from_results(results, gt, filter), config.threads);
    for (const auto &w : report.metrics->warnings) say("evaluation: " + w);
  }

  if (!out_dir.empty()) {
    fs::create_directories(out_dir / "results");
    for (const auto &t : report.tracks)
      if (t.result) write_json_file(out_dir / "results" / (t.track_id + ".json"), fit_result_to_json(*t.result));
    write_json_file(out_dir / "report.json", to_json(report));
    if (report.metrics) {
      write_json_file(out_dir / "metrics.json", to_json(*report.metrics));
      std::ofstream(out_dir / "metrics.txt") << format_table({{"mmfit", "LiDAR+RGB", *report.metrics}});
    }
  }
  return report;
}

std::vector<Heatmap2D> frame_heatmaps(const SceneManifest &m, const FrameRef &frame,
                                      const std::vector<CameraModel> &cameras, int joints,
                                      const FusionConfig &config) {
  std::vector<Heatmap2D> out;
  for (const ViewRef &view : frame.views) {
    const CameraModel *cam = nullptr;
    for (const auto &c : cameras)
      if (c.id == view.camera_id) cam = &c;
    if (!cam) throw Error("frame " + std::to_string(frame.index) + ": no calibration for camera '" + view.camera_id + "'");
    if (!view.heatmap.empty()) {
      Heatmap2D h = load_heatmap(m.resolve(view.heatmap));
      h.check_image(cam->intrinsics);
      if (h.joints != joints)
        throw Error(view.heatmap.generic_string() + ": " + std::to_string(h.joints) + " joint channels, expected " +
                    std::to_string(joints));
      out.push_back(std::move(h));
      continue;
    }
    const PoseFile pf = load_pose_file(m, view);
    std::vector<CameraPose2D> poses;
    for (const auto &p : pf.persons) poses.push_back(p.pose);
    out.push_back(render_heatmap(*cam, poses, joints, config.heatmap_stride, config.heatmap_sigma, m.skeleton.map));
  }
  return out;
}

std::vector<FrameAnnotations> fuse_scene(const SceneManifest &m, const FusionConfig &config, int joints,
                                         const LogFn &log) {
  config.validate();
  const std::vector<CameraModel> cameras = load_cameras(m);
  std::vector<FrameAnnotations> out;
  for (const FrameRef &frame : m.frames) {
    const auto heatmaps = frame_heatmaps(m, frame, cameras, joints, config);
    const PointCloud cloud = load_point_cloud(m.resolve(frame.cloud));
    FrameAnnotations fa;
    fa.index = frame.index;
    for (auto &person : fuse_and_decode(heatmaps, cameras, cloud, m.bounds_min, m.bounds_max, config))
      fa.preds.push_back({std::move(person.pose), person.proposal.score});
    if (log) log("frame " + std::to_string(frame.index) + ": " + std::to_string(fa.preds.size()) + " persons");
    out.push_back(std::move(fa));
  }
  return out;
}

}  // namespace mmfit
