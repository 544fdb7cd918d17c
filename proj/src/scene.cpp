#include "mmfit/scene.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cctype>
#include <fstream>
#include <limits>
#include <map>
#include <set>

#include "mmfit/error.hpp"
#include "mmfit/fusion.hpp"
#include "mmfit/geometry_io.hpp"

namespace mmfit {

namespace fs = std::filesystem;

namespace {

const json &field(const json &j, const std::string &key, const std::string &where) {
  if (!j.is_object()) throw Error(where + ": expected an object");
  auto it = j.find(key);
  if (it == j.end()) throw Error(where + ": missing field '" + key + "'");
  return *it;
}

std::string get_string(const json &j, const std::string &key, const std::string &where) {
  const json &v = field(j, key, where);
  if (!v.is_string()) throw Error(where + "." + key + ": expected a string");
  return v.get<std::string>();
}

int get_int(const json &j, const std::string &key, const std::string &where) {
  const json &v = field(j, key, where);
  if (!v.is_number_integer()) throw Error(where + "." + key + ": expected an integer");
  return v.get<int>();
}

double get_number(const json &j, const std::string &key, const std::string &where) {
  const json &v = field(j, key, where);
  if (!v.is_number()) throw Error(where + "." + key + ": expected a number");
  const double x = v.get<double>();
  if (!std::isfinite(x)) throw Error(where + "." + key + ": not finite");
  return x;
}

const json &get_array(const json &j, const std::string &key, const std::string &where) {
  const json &v = field(j, key, where);
  if (!v.is_array()) throw Error(where + "." + key + ": expected an array");
  return v;
}

std::string optional_string(const json &j, const std::string &key, const std::string &where) {
  if (!j.contains(key) || j.at(key).is_null()) return {};
  return get_string(j, key, where);
}

void reject_unknown(const json &j, const std::set<std::string> &known, const std::string &where) {
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!known.count(it.key())) throw Error(where + ": unknown field '" + it.key() + "'");
}

Eigen::VectorXd vector_from_json(const json &j, const std::string &where) {
  if (!j.is_array()) throw Error(where + ": expected an array of numbers");
  Eigen::VectorXd v(j.size());
  for (std::size_t i = 0; i < j.size(); ++i) {
    if (!j[i].is_number()) throw Error(where + "[" + std::to_string(i) + "]: expected a number");
    v[static_cast<Eigen::Index>(i)] = j[i].get<double>();
    if (!std::isfinite(v[static_cast<Eigen::Index>(i)]))
      throw Error(where + "[" + std::to_string(i) + "]: not finite");
  }
  return v;
}

json vector_to_json(const Eigen::Ref<const Eigen::VectorXd> &v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

/// Ids end up in file names.
void check_id(const std::string &id, const std::string &where) {
  if (id.empty() || id[0] == '.') throw Error(where + ": invalid id '" + id + "'");
  for (char c : id)
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-' || c == '.'))
      throw Error(where + ": invalid id '" + id + "' (allowed: letters, digits, '_', '-', '.')");
}

std::string frame_name(int index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%06d", index);
  return buf;
}

void require_file(const SceneManifest &m, const fs::path &p, const std::string &where) {
  if (p.empty()) throw Error("manifest: " + where + ": empty path");
  if (!fs::is_regular_file(m.resolve(p))) throw Error("manifest: " + where + ": file not found: " + m.resolve(p).string());
}

json box_to_json(const BBox3D &b) {
  return json{{"center", vec_to_json(b.center)}, {"size", vec_to_json(b.size)}, {"yaw", b.yaw}};
}

BBox3D box_from_json(const json &j, const std::string &where) {
  BBox3D b;
  b.center = vec3_from_json(field(j, "center", where), where + ".center");
  b.size = vec3_from_json(field(j, "size", where), where + ".size");
  b.yaw = j.contains("yaw") ? get_number(j, "yaw", where) : 0.0;
  try {
    b.validate();
  } catch (const Error &e) {
    throw Error(where + ": " + e.what());
  }
  return b;
}

SceneManifest parse_manifest(const json &j, const fs::path &root, bool require_bounds) {
  const std::string w = "manifest";
  reject_unknown(j,
                 {"scene_id", "version", "cameras", "frames", "tracks", "ground_truth", "body_model",
                  "pose_prior", "skeleton", "bounds", "sensors"},
                 w);
  if (j.contains("version") && get_int(j, "version", w) != 1) throw Error(w + ".version: unsupported version");
  SceneManifest m;
  m.root = root;
  m.scene_id = get_string(j, "scene_id", w);
  const json &cams = get_array(j, "cameras", w);
  for (std::size_t i = 0; i < cams.size(); ++i) {
    if (!cams[i].is_string()) throw Error(w + ".cameras[" + std::to_string(i) + "]: expected a path");
    m.cameras.emplace_back(cams[i].get<std::string>());
  }
  const json &frames = get_array(j, "frames", w);
  for (std::size_t i = 0; i < frames.size(); ++i) {
    const std::string fw = w + ".frames[" + std::to_string(i) + "]";
    reject_unknown(frames[i], {"idx", "cloud", "views", "split"}, fw);
    FrameRef f;
    f.index = get_int(frames[i], "idx", fw);
    f.cloud = get_string(frames[i], "cloud", fw);
    f.split = optional_string(frames[i], "split", fw);
    if (!f.split.empty() && f.split != "train" && f.split != "test")
      throw Error(fw + ".split: expected \"train\" or \"test\"");
    const json &views = get_array(frames[i], "views", fw);
    for (std::size_t v = 0; v < views.size(); ++v) {
      const std::string vw = fw + ".views[" + std::to_string(v) + "]";
      reject_unknown(views[v], {"camera_id", "image", "poses", "heatmap"}, vw);
      ViewRef view;
      view.camera_id = get_string(views[v], "camera_id", vw);
      view.poses = get_string(views[v], "poses", vw);
      view.image = optional_string(views[v], "image", vw);
      view.heatmap = optional_string(views[v], "heatmap", vw);
      f.views.push_back(std::move(view));
    }
    m.frames.push_back(std::move(f));
  }
  m.tracks = get_string(j, "tracks", w);
  m.ground_truth = optional_string(j, "ground_truth", w);
  m.body_model = optional_string(j, "body_model", w);
  m.pose_prior = optional_string(j, "pose_prior", w);
  if (j.contains("skeleton")) m.skeleton = skeleton_layout_from_json(j.at("skeleton"), w + ".skeleton");
  if (j.contains("bounds") || require_bounds) {
    const json &b = field(j, "bounds", w);
    m.bounds_min = vec3_from_json(field(b, "min", w + ".bounds"), w + ".bounds.min");
    m.bounds_max = vec3_from_json(field(b, "max", w + ".bounds"), w + ".bounds.max");
  } else {
    m.bounds_min = Eigen::Vector3d::Constant(std::nan(""));
  }
  if (j.contains("sensors")) {
    const json &s = get_array(j, "sensors", w);
    for (std::size_t i = 0; i < s.size(); ++i)
      m.sensors.push_back(vec3_from_json(s[i], w + ".sensors[" + std::to_string(i) + "]"));
  }
  return m;
}

void check_pose_layout(const PoseFile &pf, const Skeleton &skeleton, const std::string &where) {
  if (pf.skeleton != skeleton.name) {
    if (!builtin_skeleton(pf.skeleton) && pf.skeleton != "identity")
      throw Error(where + ": field 'skeleton': unknown skeleton '" + pf.skeleton + "'");
    throw Error(where + ": field 'skeleton': '" + pf.skeleton + "' does not match the scene skeleton '" +
                skeleton.name + "'");
  }
  for (std::size_t p = 0; p < pf.persons.size(); ++p) {
    if (pf.persons[p].pose.keypoints.rows() != skeleton.keypoints)
      throw Error(where + ".persons[" + std::to_string(p) + "].keypoints: expected " +
                  std::to_string(skeleton.keypoints) + " keypoints for skeleton '" + skeleton.name + "'");
  }
}

}  // namespace

std::optional<Skeleton> builtin_skeleton(const std::string &name) {
  if (name == "smpl24") {
    Skeleton s = identity_skeleton(24);
    s.name = "smpl24";
    return s;
  }
  if (name == "coco17") {
    // nose, eyes, ears, shoulders, elbows, wrists, hips, knees, ankles
    return Skeleton{"coco17", 17, {15, -1, -1, -1, -1, 16, 17, 18, 19, 20, 21, 1, 2, 4, 5, 7, 8}};
  }
  return std::nullopt;
}

Skeleton identity_skeleton(int joints) {
  Skeleton s{"identity", joints, {}};
  for (int k = 0; k < joints; ++k) s.map.push_back(k);
  return s;
}

json skeleton_layout_to_json(const Skeleton &s) {
  if (builtin_skeleton(s.name)) return s.name;
  return json{{"name", s.name}, {"keypoints", s.keypoints}, {"map", s.map}};
}

Skeleton skeleton_layout_from_json(const json &j, const std::string &where) {
  if (j.is_string()) {
    auto s = builtin_skeleton(j.get<std::string>());
    if (!s) throw Error(where + ": unknown skeleton '" + j.get<std::string>() + "'");
    return *s;
  }
  reject_unknown(j, {"name", "keypoints", "map"}, where);
  Skeleton s;
  s.name = get_string(j, "name", where);
  if (builtin_skeleton(s.name)) throw Error(where + ".name: '" + s.name + "' is a built-in skeleton name");
  s.keypoints = get_int(j, "keypoints", where);
  if (s.keypoints < 1) throw Error(where + ".keypoints: must be positive");
  const json &map = get_array(j, "map", where);
  if (static_cast<int>(map.size()) != s.keypoints)
    throw Error(where + ".map: expected " + std::to_string(s.keypoints) + " entries");
  for (std::size_t k = 0; k < map.size(); ++k) {
    if (!map[k].is_number_integer() || map[k].get<int>() < -1)
      throw Error(where + ".map[" + std::to_string(k) + "]: expected a joint index or -1");
    s.map.push_back(map[k].get<int>());
  }
  return s;
}

fs::path SceneManifest::resolve(const fs::path &p) const {
  if (p.empty() || p.is_absolute()) return p;
  return root / p;
}

void SceneManifest::validate() const {
  if (scene_id.empty()) throw Error("manifest: empty scene_id");
  if (cameras.empty()) throw Error("manifest: no cameras");
  std::set<std::string> ids;
  for (std::size_t i = 0; i < cameras.size(); ++i) {
    require_file(*this, cameras[i], "cameras[" + std::to_string(i) + "]");
    const CameraModel cam = load_camera(resolve(cameras[i]));
    if (!ids.insert(cam.id).second) throw Error("manifest: cameras[" + std::to_string(i) + "]: duplicate camera id '" + cam.id + "'");
  }
  if (frames.empty()) throw Error("manifest: no frames");
  for (std::size_t i = 0; i < frames.size(); ++i) {
    const FrameRef &f = frames[i];
    const std::string fw = "frames[" + std::to_string(i) + "]";
    if (i > 0 && f.index != frames[i - 1].index + 1)
      throw Error("manifest: " + fw + ".idx: frame indices must be contiguous (got " + std::to_string(f.index) +
                  " after " + std::to_string(frames[i - 1].index) + ")");
    require_file(*this, f.cloud, fw + ".cloud");
    std::set<std::string> seen;
    for (std::size_t v = 0; v < f.views.size(); ++v) {
      const ViewRef &view = f.views[v];
      const std::string vw = fw + ".views[" + std::to_string(v) + "]";
      if (!ids.count(view.camera_id)) throw Error("manifest: " + vw + ".camera_id: unknown camera '" + view.camera_id + "'");
      if (!seen.insert(view.camera_id).second) throw Error("manifest: " + vw + ".camera_id: duplicate view");
      require_file(*this, view.poses, vw + ".poses");
      if (!view.image.empty()) require_file(*this, view.image, vw + ".image");
      if (!view.heatmap.empty()) require_file(*this, view.heatmap, vw + ".heatmap");
    }
  }
  require_file(*this, tracks, "tracks");
  if (!ground_truth.empty()) require_file(*this, ground_truth, "ground_truth");
  if (!body_model.empty()) require_file(*this, body_model, "body_model");
  if (!pose_prior.empty()) require_file(*this, pose_prior, "pose_prior");
  if (!bounds_min.allFinite() || !bounds_max.allFinite() || (bounds_max.array() <= bounds_min.array()).any())
    throw Error("manifest: bounds: max must exceed min on every axis");
  if (static_cast<int>(skeleton.map.size()) != skeleton.keypoints) throw Error("manifest: skeleton: map size mismatch");
}

const FrameRef &SceneManifest::frame(int index) const {
  if (frames.empty() || index < frames.front().index || index > frames.back().index)
    throw Error("unknown frame " + std::to_string(index));
  return frames[index - frames.front().index];
}

json manifest_to_json(const SceneManifest &m) {
  json j;
  j["scene_id"] = m.scene_id;
  j["version"] = 1;
  json cams = json::array();
  for (const auto &c : m.cameras) cams.push_back(c.generic_string());
  j["cameras"] = cams;
  json frames = json::array();
  for (const auto &f : m.frames) {
    json views = json::array();
    for (const auto &v : f.views) {
      json jv{{"camera_id", v.camera_id}, {"poses", v.poses.generic_string()}};
      if (!v.image.empty()) jv["image"] = v.image.generic_string();
      if (!v.heatmap.empty()) jv["heatmap"] = v.heatmap.generic_string();
      views.push_back(jv);
    }
    json jf{{"idx", f.index}, {"cloud", f.cloud.generic_string()}, {"views", views}};
    if (!f.split.empty()) jf["split"] = f.split;
    frames.push_back(jf);
  }
  j["frames"] = frames;
  j["tracks"] = m.tracks.generic_string();
  if (!m.ground_truth.empty()) j["ground_truth"] = m.ground_truth.generic_string();
  if (!m.body_model.empty()) j["body_model"] = m.body_model.generic_string();
  if (!m.pose_prior.empty()) j["pose_prior"] = m.pose_prior.generic_string();
  j["skeleton"] = skeleton_layout_to_json(m.skeleton);
  j["bounds"] = {{"min", vec_to_json(m.bounds_min)}, {"max", vec_to_json(m.bounds_max)}};
  json sensors = json::array();
  for (const auto &s : m.sensors) sensors.push_back(vec_to_json(s));
  j["sensors"] = sensors;
  return j;
}

SceneManifest manifest_from_json(const json &j, const fs::path &root) { return parse_manifest(j, root, true); }

SceneManifest load_manifest(const fs::path &path) {
  SceneManifest m = manifest_from_json(read_json_file(path), path.parent_path());
  m.validate();
  return m;
}

void save_manifest(const fs::path &path, const SceneManifest &m) { write_json_file(path, manifest_to_json(m)); }

std::vector<CameraModel> load_cameras(const SceneManifest &m) {
  std::vector<CameraModel> cams;
  for (const auto &p : m.cameras) cams.push_back(load_camera(m.resolve(p)));
  return cams;
}

const Detection *Track::at(int index) const {
  auto it = std::lower_bound(detections.begin(), detections.end(), index,
                             [](const Detection &d, int i) { return d.index < i; });
  return it != detections.end() && it->index == index ? &*it : nullptr;
}

json tracks_to_json(const std::vector<Track> &tracks) {
  json arr = json::array();
  for (const auto &t : tracks) {
    json dets = json::array();
    for (const auto &d : t.detections) dets.push_back({{"idx", d.index}, {"box", box_to_json(d.box)}});
    arr.push_back({{"track_id", t.track_id}, {"detections", dets}});
  }
  return json{{"tracks", arr}};
}

std::vector<Track> tracks_from_json(const json &j, const std::string &where) {
  const json &arr = get_array(j, "tracks", where);
  std::vector<Track> tracks;
  std::set<std::string> ids;
  for (std::size_t i = 0; i < arr.size(); ++i) {
    const std::string tw = where + ".tracks[" + std::to_string(i) + "]";
    Track t;
    t.track_id = get_string(arr[i], "track_id", tw);
    check_id(t.track_id, tw + ".track_id");
    if (!ids.insert(t.track_id).second) throw Error(tw + ".track_id: duplicate track '" + t.track_id + "'");
    const json &dets = get_array(arr[i], "detections", tw);
    for (std::size_t d = 0; d < dets.size(); ++d) {
      const std::string dw = tw + ".detections[" + std::to_string(d) + "]";
      Detection det{get_int(dets[d], "idx", dw), box_from_json(field(dets[d], "box", dw), dw + ".box")};
      if (!t.detections.empty() && det.index <= t.detections.back().index)
        throw Error(dw + ".idx: frame indices must increase");
      t.detections.push_back(det);
    }
    tracks.push_back(std::move(t));
  }
  return tracks;
}

std::vector<Track> load_tracks(const SceneManifest &m) {
  return tracks_from_json(read_json_file(m.resolve(m.tracks)), m.tracks.generic_string());
}

json pose_file_to_json(const PoseFile &f) {
  json persons = json::array();
  for (const auto &p : f.persons) {
    json kps = json::array();
    for (Eigen::Index k = 0; k < p.pose.keypoints.rows(); ++k)
      kps.push_back({p.pose.keypoints(k, 0), p.pose.keypoints(k, 1)});
    persons.push_back({{"track_id", p.track_id}, {"keypoints", kps}, {"confidence", p.pose.confidence}});
  }
  return json{{"camera_id", f.camera_id}, {"frame", f.frame}, {"skeleton", f.skeleton}, {"persons", persons}};
}

PoseFile pose_file_from_json(const json &j, const std::string &where) {
  reject_unknown(j, {"camera_id", "frame", "skeleton", "persons"}, where);
  PoseFile f;
  f.camera_id = get_string(j, "camera_id", where);
  f.frame = get_int(j, "frame", where);
  f.skeleton = get_string(j, "skeleton", where);
  const json &persons = get_array(j, "persons", where);
  for (std::size_t p = 0; p < persons.size(); ++p) {
    const std::string pw = where + ".persons[" + std::to_string(p) + "]";
    PersonPose2D person;
    person.track_id = get_string(persons[p], "track_id", pw);
    person.pose.camera_id = f.camera_id;
    const json &kps = get_array(persons[p], "keypoints", pw);
    person.pose.keypoints.resize(static_cast<Eigen::Index>(kps.size()), 2);
    bool triplets = false;
    for (std::size_t k = 0; k < kps.size(); ++k) {
      const std::string kw = pw + ".keypoints[" + std::to_string(k) + "]";
      const Eigen::VectorXd v = vector_from_json(kps[k], kw);
      if (v.size() != 2 && v.size() != 3) throw Error(kw + ": expected [u, v] or [u, v, confidence]");
      if (k > 0 && triplets != (v.size() == 3)) throw Error(kw + ": mixed pairs and triplets");
      triplets = v.size() == 3;
      person.pose.keypoints.row(static_cast<Eigen::Index>(k)) = v.head<2>().transpose();
      if (triplets) person.pose.confidence.push_back(v[2]);
    }
    if (persons[p].contains("confidence")) {
      if (triplets) throw Error(pw + ".confidence: given twice (keypoint triplets already carry it)");
      const Eigen::VectorXd c = vector_from_json(persons[p].at("confidence"), pw + ".confidence");
      if (c.size() != static_cast<Eigen::Index>(kps.size()))
        throw Error(pw + ".confidence: expected " + std::to_string(kps.size()) + " values");
      person.pose.confidence.assign(c.data(), c.data() + c.size());
    } else if (!triplets) {
      person.pose.confidence.assign(kps.size(), 1.0);
    }
    for (std::size_t k = 0; k < person.pose.confidence.size(); ++k) {
      const double c = person.pose.confidence[k];
      if (c < 0.0 || c > 1.0) throw Error(pw + ".confidence[" + std::to_string(k) + "]: outside [0, 1]");
    }
    f.persons.push_back(std::move(person));
  }
  return f;
}

PoseFile load_pose_file(const SceneManifest &m, const ViewRef &view) {
  const std::string where = view.poses.generic_string();
  PoseFile f = pose_file_from_json(read_json_file(m.resolve(view.poses)), where);
  if (f.camera_id != view.camera_id)
    throw Error(where + ".camera_id: '" + f.camera_id + "' but the manifest lists '" + view.camera_id + "'");
  check_pose_layout(f, m.skeleton, where);
  return f;
}

json ground_truth_to_json(const GroundTruth &gt) {
  json persons = json::array();
  for (const auto &t : gt.tracks) {
    json frames = json::array();
    for (int f = 0; f < t.params.num_frames(); ++f)
      frames.push_back({{"idx", t.frame_indices[f]},
                        {"r", vector_to_json(t.params.r.row(f).transpose())},
                        {"theta", vector_to_json(t.params.theta.row(f).transpose())}});
    persons.push_back({{"track_id", t.track_id}, {"beta", vector_to_json(t.params.beta)}, {"frames", frames}});
  }
  json j = gt_to_json(gt.frames);
  j["persons"] = persons;
  return j;
}

GroundTruth ground_truth_from_json(const json &j, const std::string &where) {
  GroundTruth gt;
  if (j.contains("persons")) {
    const json &persons = get_array(j, "persons", where);
    for (std::size_t p = 0; p < persons.size(); ++p) {
      const std::string pw = where + ".persons[" + std::to_string(p) + "]";
      GroundTruthTrack t;
      t.track_id = get_string(persons[p], "track_id", pw);
      t.params.beta = vector_from_json(field(persons[p], "beta", pw), pw + ".beta");
      const json &frames = get_array(persons[p], "frames", pw);
      t.params.r.resize(static_cast<Eigen::Index>(frames.size()), 3);
      for (std::size_t f = 0; f < frames.size(); ++f) {
        const std::string fw = pw + ".frames[" + std::to_string(f) + "]";
        t.frame_indices.push_back(get_int(frames[f], "idx", fw));
        t.params.r.row(static_cast<Eigen::Index>(f)) = vec3_from_json(field(frames[f], "r", fw), fw + ".r").transpose();
        const Eigen::VectorXd theta = vector_from_json(field(frames[f], "theta", fw), fw + ".theta");
        if (f == 0) t.params.theta.resize(static_cast<Eigen::Index>(frames.size()), theta.size());
        if (theta.size() != t.params.theta.cols()) throw Error(fw + ".theta: inconsistent length");
        t.params.theta.row(static_cast<Eigen::Index>(f)) = theta.transpose();
      }
      gt.tracks.push_back(std::move(t));
    }
  }
  gt.frames = load_annotations(j, json{{"frames", json::array()}});
  return gt;
}

std::vector<TrackInputs> build_track_inputs(const SceneManifest &m, const std::vector<CameraModel> &cameras,
                                            const std::vector<Track> &tracks, int min_points) {
  (void)cameras;
  std::vector<TrackInputs> out(tracks.size());
  for (std::size_t t = 0; t < tracks.size(); ++t) out[t].observation.track_id = tracks[t].track_id;
  for (const FrameRef &frame : m.frames) {
    std::vector<std::size_t> present;
    for (std::size_t t = 0; t < tracks.size(); ++t)
      if (tracks[t].at(frame.index)) present.push_back(t);
    if (present.empty()) continue;
    const PointCloud cloud = load_point_cloud(m.resolve(frame.cloud));
    std::vector<PoseFile> poses;
    for (const ViewRef &view : frame.views) poses.push_back(load_pose_file(m, view));
    for (std::size_t t : present) {
      const Detection &det = *tracks[t].at(frame.index);
      const auto inside = points_in_box(cloud, det.box);
      if (static_cast<int>(inside.size()) < min_points) {
        out[t].dropped_frames.push_back(frame.index);
        continue;
      }
      FrameObservation fo;
      fo.index = frame.index;
      fo.center = det.box.center;
      for (std::size_t i : inside) fo.cloud.points.push_back(cloud.points[i]);
      for (const PoseFile &pf : poses)
        for (const PersonPose2D &p : pf.persons)
          if (p.track_id == tracks[t].track_id) fo.poses.push_back(p.pose);
      out[t].observation.frames.push_back(std::move(fo));
    }
  }
  return out;
}

StatsScene load_stats_scene(const SceneManifest &m) {
  StatsScene s;
  s.scene_id = m.scene_id;
  s.cameras = load_cameras(m);
  s.sensors = m.sensors;
  const std::vector<Track> tracks = load_tracks(m);
  for (const FrameRef &frame : m.frames) {
    StatsFrame sf;
    sf.cloud = load_point_cloud(m.resolve(frame.cloud));
    for (const Track &t : tracks)
      if (const Detection *d = t.at(frame.index)) sf.persons.push_back(d->box);
    s.frames.push_back(std::move(sf));
  }
  return s;
}

SynthScene write_synth_scene(const fs::path &dir, const SynthSpec &spec, const BodyModel &model,
                             const LinearPosePrior *prior, const SceneWriteOptions &options) {
  SynthScene scene = synthesize(spec, model);
  fs::create_directories(dir);
  SceneManifest m;
  m.scene_id = scene.scene_id;
  m.root = dir;
  const int J = model.num_joints();
  m.skeleton = J == 24 ? *builtin_skeleton("smpl24") : identity_skeleton(J);
  m.bounds_min = scene.bounds_min;
  m.bounds_max = scene.bounds_max;
  m.sensors = scene.sensors;

  fs::create_directories(dir / "cameras");
  for (const auto &cam : scene.cameras) {
    const fs::path rel = fs::path("cameras") / (cam.id + ".json");
    save_camera(dir / rel, cam);
    m.cameras.push_back(rel);
  }
  fs::create_directories(dir / "clouds");
  const int t = static_cast<int>(scene.frames.size());
  const int train = static_cast<int>(std::floor(options.train_fraction * t + 1e-9));
  for (int f = 0; f < t; ++f) {
    const SynthFrame &frame = scene.frames[f];
    FrameRef ref;
    ref.index = frame.index;
    ref.split = f < train ? "train" : "test";
    ref.cloud = fs::path("clouds") / (frame_name(frame.index) + ".bin");
    save_point_cloud(dir / ref.cloud, frame.cloud);
    for (std::size_t c = 0; c < scene.cameras.size(); ++c) {
      const CameraModel &cam = scene.cameras[c];
      ViewRef view;
      view.camera_id = cam.id;
      view.poses = fs::path("poses") / cam.id / (frame_name(frame.index) + ".json");
      PoseFile pf{cam.id, frame.index, m.skeleton.name, {}};
      std::vector<CameraPose2D> all;
      for (const auto &p : frame.poses[c]) {
        pf.persons.push_back({p.track_id, p.pose});
        all.push_back(p.pose);
      }
      fs::create_directories((dir / view.poses).parent_path());
      write_json_file(dir / view.poses, pose_file_to_json(pf));
      if (options.heatmaps) {
        view.heatmap = fs::path("heatmaps") / cam.id / (frame_name(frame.index) + ".bin");
        fs::create_directories((dir / view.heatmap).parent_path());
        save_heatmap(dir / view.heatmap,
                     render_heatmap(cam, all, J, options.heatmap_stride, options.heatmap_sigma, m.skeleton.map));
      }
      ref.views.push_back(std::move(view));
    }
    m.frames.push_back(std::move(ref));
  }

  std::vector<Track> tracks;
  GroundTruth gt;
  for (const auto &person : scene.persons) {
    Track tr{person.track_id, {}};
    GroundTruthTrack gtt{person.track_id, {}, person.params};
    for (int f = 0; f < t; ++f) {
      tr.detections.push_back({scene.frames[f].index, person.boxes[f]});
      gtt.frame_indices.push_back(scene.frames[f].index);
    }
    tracks.push_back(std::move(tr));
    gt.tracks.push_back(std::move(gtt));
  }
  for (int f = 0; f < t; ++f) {
    FrameAnnotations fa;
    fa.index = scene.frames[f].index;
    for (const auto &person : scene.persons) fa.gts.push_back({person.track_id, PoseSkeleton3D{person.joints[f], {}}});
    gt.frames.push_back(std::move(fa));
  }
  m.tracks = "tracks.json";
  write_json_file(dir / m.tracks, tracks_to_json(tracks));
  m.ground_truth = "gt.json";
  write_json_file(dir / m.ground_truth, ground_truth_to_json(gt));
  m.body_model = "model.bin";
  save_body_model(dir / m.body_model, model);
  if (prior) {
    m.pose_prior = "prior.json";
    save_pose_prior(dir / m.pose_prior, *prior);
  }
  save_manifest(dir / "manifest.json", m);
  return scene;
}

ImportResult import_external_scene(const json &spec, const fs::path &spec_dir, const fs::path &out_dir) {
  SceneManifest src = parse_manifest(spec, spec_dir, false);
  const bool derive_bounds = !src.bounds_min.allFinite();
  if (derive_bounds) {
    src.bounds_min = Eigen::Vector3d::Zero();
    src.bounds_max = Eigen::Vector3d::Ones();
  }
  src.validate();

  ImportResult result;
  SceneManifest &m = result.manifest;
  m.scene_id = src.scene_id;
  m.root = out_dir;
  m.skeleton = src.skeleton;
  m.sensors = src.sensors;
  fs::create_directories(out_dir / "cameras");
  fs::create_directories(out_dir / "clouds");

  std::vector<CameraModel> cameras;
  for (std::size_t i = 0; i < src.cameras.size(); ++i) {
    CameraModel cam;
    try {
      cam = load_camera(src.resolve(src.cameras[i]));
      check_id(cam.id, "id");
    } catch (const Error &e) {
      throw Error(src.cameras[i].generic_string() + ": " + e.what());
    }
    const fs::path rel = fs::path("cameras") / (cam.id + ".json");
    save_camera(out_dir / rel, cam);
    m.cameras.push_back(rel);
    cameras.push_back(cam);
  }
  auto camera_of = [&](const std::string &id) -> const CameraModel & {
    for (const auto &c : cameras)
      if (c.id == id) return c;
    throw Error("unknown camera '" + id + "'");
  };

  const std::vector<Track> tracks = load_tracks(src);
  std::set<std::string> track_ids;
  for (const auto &t : tracks) track_ids.insert(t.track_id);
  m.tracks = "tracks.json";
  write_json_file(out_dir / m.tracks, tracks_to_json(tracks));

  Eigen::Vector3d lo = Eigen::Vector3d::Constant(std::numeric_limits<double>::infinity());
  Eigen::Vector3d hi = -lo;
  for (std::size_t i = 0; i < src.frames.size(); ++i) {
    const FrameRef &f = src.frames[i];
    FrameRef out;
    out.index = f.index;
    out.split = f.split;
    out.cloud = fs::path("clouds") / (frame_name(f.index) + ".bin");
    PointCloud cloud;
    try {
      cloud = load_point_cloud(src.resolve(f.cloud));
    } catch (const Error &e) {
      throw Error(f.cloud.generic_string() + ": " + e.what());
    }
    save_point_cloud(out_dir / out.cloud, cloud);
    Eigen::Vector3d clo = Eigen::Vector3d::Constant(std::numeric_limits<double>::infinity()), chi = -clo;
    for (const auto &p : cloud.points) {
      clo = clo.cwiseMin(p);
      chi = chi.cwiseMax(p);
    }
    lo = lo.cwiseMin(clo);
    hi = hi.cwiseMax(chi);
    bool cloud_seen = cloud.empty();
    for (const ViewRef &v : f.views) {
      const CameraModel &cam = camera_of(v.camera_id);
      if (!cloud.empty()) {
        BBox3D box;
        box.center = 0.5 * (clo + chi);
        box.size = (chi - clo).cwiseMax(Eigen::Vector3d::Constant(1e-3));
        cloud_seen = cloud_seen || project_bbox3(cam, box).has_value();
      }
      ViewRef ov;
      ov.camera_id = v.camera_id;
      ov.poses = fs::path("poses") / v.camera_id / (frame_name(f.index) + ".json");
      const std::string where = v.poses.generic_string();
      PoseFile pf = pose_file_from_json(read_json_file(src.resolve(v.poses)), where);
      if (pf.camera_id != v.camera_id) throw Error(where + ".camera_id: '" + pf.camera_id + "' but the view lists '" + v.camera_id + "'");
      if (pf.frame != f.index) throw Error(where + ".frame: " + std::to_string(pf.frame) + " but the view belongs to frame " + std::to_string(f.index));
      check_pose_layout(pf, src.skeleton, where);
      int outside = 0;
      for (const auto &p : pf.persons) {
        if (!track_ids.count(p.track_id))
          result.warnings.push_back(where + ": person with unknown track '" + p.track_id + "'");
        for (Eigen::Index k = 0; k < p.pose.keypoints.rows(); ++k) {
          const double u = p.pose.keypoints(k, 0), w = p.pose.keypoints(k, 1);
          if (p.pose.confidence[k] > 0 &&
              (u < 0 || w < 0 || u > cam.intrinsics.width || w > cam.intrinsics.height))
            ++outside;
        }
      }
      if (outside > 0)
        result.warnings.push_back(where + ": " + std::to_string(outside) + " keypoints outside the image");
      fs::create_directories((out_dir / ov.poses).parent_path());
      write_json_file(out_dir / ov.poses, pose_file_to_json(pf));
      if (!v.image.empty()) {
        ov.image = fs::path("images") / v.camera_id / (frame_name(f.index) + v.image.extension().string());
        fs::create_directories((out_dir / ov.image).parent_path());
        fs::copy_file(src.resolve(v.image), out_dir / ov.image, fs::copy_options::overwrite_existing);
      }
      if (!v.heatmap.empty()) {
        Heatmap2D hm;
        try {
          hm = load_heatmap(src.resolve(v.heatmap));
          hm.check_image(cam.intrinsics);
        } catch (const Error &e) {
          throw Error(v.heatmap.generic_string() + ": " + e.what());
        }
        if (hm.camera_id != v.camera_id)
          throw Error(v.heatmap.generic_string() + ": camera id '" + hm.camera_id + "' but the view lists '" + v.camera_id + "'");
        ov.heatmap = fs::path("heatmaps") / v.camera_id / (frame_name(f.index) + ".bin");
        fs::create_directories((out_dir / ov.heatmap).parent_path());
        save_heatmap(out_dir / ov.heatmap, hm);
      }
      out.views.push_back(std::move(ov));
    }
    if (!cloud_seen) result.warnings.push_back("frame " + std::to_string(f.index) + ": point cloud outside every camera view");
    m.frames.push_back(std::move(out));
  }

  if (derive_bounds) {
    if (!lo.allFinite()) throw Error("bounds: cannot be derived, every point cloud is empty");
    m.bounds_min = (lo.array() - 0.5).floor().matrix();
    m.bounds_max = (hi.array() + 0.5).ceil().matrix();
  } else {
    m.bounds_min = src.bounds_min;
    m.bounds_max = src.bounds_max;
  }
  BBox3D bounds;
  bounds.center = 0.5 * (m.bounds_min + m.bounds_max);
  bounds.size = m.bounds_max - m.bounds_min;
  for (std::size_t i = 0; i < cameras.size(); ++i)
    if (!project_bbox3(cameras[i], bounds))
      throw Error("cameras[" + std::to_string(i) + "] ('" + cameras[i].id + "'): the scene bounds do not project into the image");

  if (!src.ground_truth.empty()) {
    m.ground_truth = "gt.json";
    const GroundTruth gt = ground_truth_from_json(read_json_file(src.resolve(src.ground_truth)),
                                                  src.ground_truth.generic_string());
    write_json_file(out_dir / m.ground_truth, ground_truth_to_json(gt));
  }
  if (!src.body_model.empty()) {
    m.body_model = "model.bin";
    save_body_model(out_dir / m.body_model, load_body_model(src.resolve(src.body_model)));
  }
  if (!src.pose_prior.empty()) {
    m.pose_prior = "prior.json";
    auto prior = load_pose_prior(src.resolve(src.pose_prior));
    save_pose_prior(out_dir / m.pose_prior, dynamic_cast<const LinearPosePrior &>(*prior));
  }
  save_manifest(out_dir / "manifest.json", m);
  m.validate();
  return result;
}

}  // namespace mmfit
