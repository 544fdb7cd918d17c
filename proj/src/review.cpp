#include "mmfit/review.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <set>
#include <sstream>

#include "mmfit/geometry_io.hpp"
#include "mmfit/metrics.hpp"

namespace mmfit {

namespace fs = std::filesystem;

namespace {

const char *kStatusNames[] = {"unreviewed", "valid", "invalid", "interpolated", "removed"};

std::string now_iso8601() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

/// Drops frames from a result, keeping joints and losses aligned.
void drop_frames(FitResult &r, const std::set<int> &drop) {
  FitResult out = r;
  out.frame_indices.clear();
  out.frame_losses.clear();
  out.joints.clear();
  int m = 0;
  for (int idx : r.frame_indices) m += !drop.count(idx);
  out.params.r.resize(m, 3);
  out.params.theta.resize(m, r.params.theta.cols());
  for (int k = 0, row = 0; k < r.num_frames(); ++k) {
    if (drop.count(r.frame_indices[k])) continue;
    out.frame_indices.push_back(r.frame_indices[k]);
    if (k < static_cast<int>(r.frame_losses.size())) out.frame_losses.push_back(r.frame_losses[k]);
    if (k < static_cast<int>(r.joints.size())) out.joints.push_back(r.joints[k]);
    out.params.r.row(row) = r.params.r.row(k);
    out.params.theta.row(row) = r.params.theta.row(k);
    ++row;
  }
  std::set<int> removed(r.diagnostics.removed_frames.begin(), r.diagnostics.removed_frames.end());
  removed.insert(drop.begin(), drop.end());
  out.diagnostics.removed_frames.assign(removed.begin(), removed.end());
  r = std::move(out);
}

int frame_row(const FitResult &r, int index) {
  for (int k = 0; k < r.num_frames(); ++k)
    if (r.frame_indices[k] == index) return k;
  return -1;
}

json row_json(const Eigen::Ref<const Eigen::RowVectorXd> &row) {
  json a = json::array();
  for (Eigen::Index i = 0; i < row.size(); ++i) a.push_back(row[i]);
  return a;
}

std::vector<std::string> split_path(const std::string &path) {
  std::vector<std::string> parts;
  std::stringstream ss(path);
  std::string item;
  while (std::getline(ss, item, '/'))
    if (!item.empty()) parts.push_back(item);
  return parts;
}

std::map<std::string, std::string> parse_query(const std::string &q) {
  std::map<std::string, std::string> out;
  std::stringstream ss(q);
  std::string item;
  while (std::getline(ss, item, '&')) {
    if (item.empty()) continue;
    const auto eq = item.find('=');
    if (eq == std::string::npos) out[item] = "";
    else out[item.substr(0, eq)] = item.substr(eq + 1);
  }
  return out;
}

int parse_int(const std::string &s, const std::string &what) {
  std::size_t used = 0;
  int v = 0;
  try {
    v = std::stoi(s, &used);
  } catch (const std::exception &) {
    used = 0;
  }
  if (used == 0 || used != s.size()) throw ReviewError(400, "bad_request", what + ": expected an integer, got '" + s + "'");
  return v;
}

bool same_token(const std::string &a, const std::string &b) {
  if (a.size() != b.size()) return false;
  unsigned char diff = 0;
  for (std::size_t i = 0; i < a.size(); ++i) diff |= static_cast<unsigned char>(a[i] ^ b[i]);
  return diff == 0;
}

json error_body(const std::string &code, const std::string &message) {
  return json{{"error", code}, {"message", message}};
}

int body_revision(const json &body) {
  if (!body.is_object() || !body.contains("revision") || !body.at("revision").is_number_integer())
    throw ReviewError(400, "bad_request", "request body must carry an integer 'revision'");
  return body.at("revision").get<int>();
}

}  // namespace

std::string to_string(FrameStatus s) { return kStatusNames[static_cast<int>(s)]; }

FrameStatus frame_status_from_string(const std::string &s) {
  for (int i = 0; i < 5; ++i)
    if (s == kStatusNames[i]) return static_cast<FrameStatus>(i);
  throw ReviewError(400, "bad_request", "unknown status '" + s + "'");
}

bool transition_allowed(FrameStatus from, FrameStatus to) {
  switch (from) {
    case FrameStatus::kUnreviewed:
      return to == FrameStatus::kValid || to == FrameStatus::kInvalid;
    case FrameStatus::kInvalid:
      return to == FrameStatus::kInterpolated || to == FrameStatus::kRemoved;
    default:
      return false;
  }
}

json to_json(const AuditEntry &e) {
  json j{{"revision", e.revision}, {"who", e.who},     {"when", e.when},
         {"action", e.action},     {"track_id", e.track_id}, {"frames", e.frames}};
  if (!e.status.empty()) j["status"] = e.status;
  return j;
}

AuditEntry audit_entry_from_json(const json &j) {
  AuditEntry e;
  try {
    e.revision = j.at("revision").get<int>();
    e.who = j.at("who").get<std::string>();
    e.when = j.value("when", "");
    e.action = j.at("action").get<std::string>();
    e.track_id = j.at("track_id").get<std::string>();
    e.frames = j.at("frames").get<std::vector<int>>();
    e.status = j.value("status", "");
  } catch (const json::exception &ex) {
    throw Error(std::string("audit entry: ") + ex.what());
  }
  return e;
}

ReviewState::ReviewState(const std::vector<FitResult> &results) {
  for (const auto &r : results) {
    TrackReview tr{r, {}};
    for (int idx : r.frame_indices) tr.status[idx] = FrameStatus::kUnreviewed;
    if (!tracks_.emplace(r.track_id, std::move(tr)).second) throw Error("duplicate track '" + r.track_id + "'");
  }
}

const TrackReview &ReviewState::track(const std::string &id) const {
  auto it = tracks_.find(id);
  if (it == tracks_.end()) throw ReviewError(404, "unknown_track", "unknown track '" + id + "'");
  return it->second;
}

TrackReview &ReviewState::mutable_track(const std::string &id) { return const_cast<TrackReview &>(track(id)); }

void ReviewState::check_revision(int base_revision) const {
  if (base_revision != revision_)
    throw ReviewError(409, "stale_revision",
                      "revision " + std::to_string(base_revision) + " is stale, current is " + std::to_string(revision_));
}

const AuditEntry &ReviewState::commit(AuditEntry entry) {
  entry.revision = ++revision_;
  log_.push_back(std::move(entry));
  return log_.back();
}

const AuditEntry &ReviewState::set_status(const std::string &track_id, const std::vector<int> &frames,
                                          FrameStatus status, int base_revision, const std::string &who,
                                          const std::string &when) {
  check_revision(base_revision);
  TrackReview &tr = mutable_track(track_id);
  if (frames.empty()) throw ReviewError(400, "bad_request", "no frames given");
  if (status == FrameStatus::kInterpolated)
    throw ReviewError(422, "illegal_transition", "frames become interpolated through the interpolate request");
  const std::set<int> unique(frames.begin(), frames.end());
  for (int idx : unique) {
    auto it = tr.status.find(idx);
    if (it == tr.status.end())
      throw ReviewError(404, "unknown_frame", "track '" + track_id + "' has no frame " + std::to_string(idx));
    if (!transition_allowed(it->second, status))
      throw ReviewError(422, "illegal_transition",
                        "frame " + std::to_string(idx) + ": " + to_string(it->second) + " -> " + to_string(status) +
                            " is not allowed");
  }
  for (int idx : unique) tr.status[idx] = status;
  if (status == FrameStatus::kRemoved) drop_frames(tr.result, unique);
  return commit({0, who, when, "status", track_id, std::vector<int>(unique.begin(), unique.end()), to_string(status)});
}

const AuditEntry &ReviewState::interpolate(const std::string &track_id, const BodyModel &model, int base_revision,
                                           const std::string &who, const std::string &when) {
  check_revision(base_revision);
  TrackReview &tr = mutable_track(track_id);
  std::set<int> invalid;
  for (const auto &[idx, s] : tr.status)
    if (s == FrameStatus::kInvalid) invalid.insert(idx);
  if (invalid.empty()) throw ReviewError(422, "nothing_to_do", "track '" + track_id + "' has no invalid frames");
  FitResult repaired;
  try {
    repaired = interpolate_frames(tr.result, model, invalid);
  } catch (const Error &e) {
    throw ReviewError(422, "interpolation_failed", e.what());
  }
  tr.result = std::move(repaired);
  for (int idx : invalid)
    tr.status[idx] = frame_row(tr.result, idx) >= 0 ? FrameStatus::kInterpolated : FrameStatus::kRemoved;
  return commit({0, who, when, "interpolate", track_id, std::vector<int>(invalid.begin(), invalid.end()), ""});
}

ReviewState ReviewState::replay(const ReviewState &initial, const std::vector<AuditEntry> &log,
                                const BodyModel &model) {
  ReviewState s = initial;
  for (const AuditEntry &e : log) {
    const int base = e.revision - 1;
    if (e.action == "status") {
      s.set_status(e.track_id, e.frames, frame_status_from_string(e.status), base, e.who, e.when);
    } else if (e.action == "interpolate") {
      s.interpolate(e.track_id, model, base, e.who, e.when);
    } else {
      throw Error("audit entry " + std::to_string(e.revision) + ": unknown action '" + e.action + "'");
    }
  }
  return s;
}

json ReviewState::export_annotations(const std::string &scene_id) const {
  std::vector<std::string> pending;
  int total = 0, removed = 0;
  for (const auto &[id, tr] : tracks_) {
    for (const auto &[idx, s] : tr.status) {
      ++total;
      removed += s == FrameStatus::kRemoved;
      if (s == FrameStatus::kInvalid) pending.push_back(id + ":" + std::to_string(idx));
    }
  }
  if (!pending.empty()) {
    std::string list;
    for (std::size_t i = 0; i < pending.size() && i < 20; ++i) list += (i ? ", " : "") + pending[i];
    throw ReviewError(409, "invalid_frames",
                      std::to_string(pending.size()) + " frames are still invalid (" + list + ")");
  }
  json tracks = json::array();
  for (const auto &[id, tr] : tracks_) {
    json frames = json::array();
    for (int k = 0; k < tr.result.num_frames(); ++k) {
      const int idx = tr.result.frame_indices[k];
      json f{{"idx", idx},
             {"status", to_string(tr.status.at(idx))},
             {"r", row_json(tr.result.params.r.row(k))},
             {"theta", row_json(tr.result.params.theta.row(k))}};
      if (k < static_cast<int>(tr.result.joints.size())) f["joints"] = skeleton_to_json(tr.result.joints[k])["joints"];
      frames.push_back(f);
    }
    tracks.push_back({{"track_id", id}, {"beta", row_json(tr.result.params.beta.transpose())}, {"frames", frames}});
  }
  const double percent = total ? 100.0 * removed / total : 0.0;
  char summary[128];
  std::snprintf(summary, sizeof summary, "removed %d human poses (%.2f%% of total detected humans)", removed, percent);
  return json{{"scene_id", scene_id},
              {"revision", revision_},
              {"tracks", tracks},
              {"removal", {{"removed", removed}, {"total", total}, {"percent", percent}, {"summary", summary}}}};
}

json ReviewState::status_json() const {
  json tracks = json::object();
  for (const auto &[id, tr] : tracks_) {
    json frames = json::array();
    for (const auto &[idx, s] : tr.status) frames.push_back({{"idx", idx}, {"status", to_string(s)}});
    tracks[id] = frames;
  }
  return json{{"revision", revision_}, {"tracks", tracks}};
}

std::vector<std::pair<int, int>> skeleton_bones(const BodyModel &model) {
  std::vector<std::pair<int, int>> bones;
  for (int j = 1; j < model.num_joints(); ++j) bones.emplace_back(model.parents[j], j);
  return bones;
}

ReviewScene load_review_scene(const fs::path &manifest, const fs::path &run_dir) {
  ReviewScene s;
  s.manifest = load_manifest(manifest);
  s.cameras = load_cameras(s.manifest);
  s.tracks = load_tracks(s.manifest);
  s.model = s.manifest.body_model.empty() ? make_toy_model(0, 828, 24)
                                          : load_body_model(s.manifest.resolve(s.manifest.body_model));
  for (const auto &t : s.tracks) {
    const fs::path p = run_dir / "results" / (t.track_id + ".json");
    if (fs::exists(p)) s.results.push_back(fit_result_from_json(read_json_file(p)));
  }
  if (s.results.empty()) throw Error(run_dir.string() + ": no fitted tracks under results/");
  return s;
}

ReviewService::ReviewService(ReviewScene scene, std::string token, fs::path state_dir)
    : scene_(std::move(scene)), token_(std::move(token)), state_dir_(std::move(state_dir)), state_(scene_.results) {
  if (token_.empty()) throw Error("review service: an access token is required");
  if (state_dir_.empty()) return;
  fs::create_directories(state_dir_);
  std::ifstream in(state_dir_ / "review_audit.jsonl");
  std::vector<AuditEntry> log;
  std::string line;
  for (int n = 1; std::getline(in, line); ++n) {
    if (line.empty()) continue;
    try {
      log.push_back(audit_entry_from_json(json::parse(line)));
    } catch (const std::exception &e) {
      throw Error((state_dir_ / "review_audit.jsonl").string() + ":" + std::to_string(n) + ": " + e.what());
    }
  }
  state_ = ReviewState::replay(state_, log, scene_.model);
}

int ReviewService::revision() const {
  std::shared_lock lock(mutex_);
  return state_.revision();
}

fs::path ReviewService::image_file(const std::string &relative) const {
  for (const auto &f : scene_.manifest.frames)
    for (const auto &v : f.views)
      if (!v.image.empty() && v.image.generic_string() == relative) return scene_.manifest.resolve(v.image);
  return {};
}

void ReviewService::persist(const AuditEntry &entry) {
  if (state_dir_.empty()) return;
  std::ofstream out(state_dir_ / "review_audit.jsonl", std::ios::app);
  out << to_json(entry).dump() << '\n';
  write_json_file(state_dir_ / "review_state.json", state_.status_json());
}

std::shared_ptr<const PointCloud> ReviewService::frame_cloud(int index) const {
  std::lock_guard lock(cloud_mutex_);
  auto it = clouds_.find(index);
  if (it != clouds_.end()) return it->second;
  const auto &frames = scene_.manifest.frames;
  if (frames.empty() || index < frames.front().index || index > frames.back().index)
    throw ReviewError(404, "unknown_frame", "scene has no frame " + std::to_string(index));
  const FrameRef &f = scene_.manifest.frame(index);
  auto cloud = std::make_shared<const PointCloud>(load_point_cloud(scene_.manifest.resolve(f.cloud)));
  if (clouds_.size() >= 32) clouds_.clear();
  clouds_[index] = cloud;
  return cloud;
}

ReviewResponse ReviewService::handle(const std::string &method, const std::string &path, const std::string &token,
                                     const std::string &body, const std::string &who) {
  try {
    if (!same_token(token, token_)) throw ReviewError(401, "unauthorized", "missing or wrong access token");
    const auto q = path.find('?');
    const auto parts = split_path(path.substr(0, q));
    const auto query = q == std::string::npos ? std::map<std::string, std::string>{} : parse_query(path.substr(q + 1));
    return route(method, parts, query, body, who);
  } catch (const ReviewError &e) {
    return {e.status(), error_body(e.code(), e.what())};
  } catch (const json::exception &e) {
    return {400, error_body("bad_request", e.what())};
  } catch (const std::exception &e) {
    return {500, error_body("internal", e.what())};
  }
}

ReviewResponse ReviewService::route(const std::string &method, const std::vector<std::string> &parts,
                                    const std::map<std::string, std::string> &query, const std::string &body,
                                    const std::string &who) {
  const std::size_t n = parts.size();
  if (method == "GET") {
    std::shared_lock lock(mutex_);
    if (n == 1 && parts[0] == "tracks") return {200, list_tracks()};
    if (n == 3 && parts[0] == "tracks" && parts[2] == "frames") return {200, list_frames(parts[1])};
    if (n == 4 && parts[0] == "frames" && parts[3] == "bundle")
      return {200, frame_bundle(parts[1], parse_int(parts[2], "frame index"))};
    if (n == 3 && parts[0] == "frames" && parts[2] == "cloud")
      return {200, cloud_preview(parse_int(parts[1], "frame index"), query)};
    throw ReviewError(404, "not_found", "no such endpoint");
  }
  if (method != "POST") throw ReviewError(405, "method_not_allowed", "method " + method + " not allowed");
  const json request = body.empty() ? json::object() : json::parse(body);
  std::unique_lock lock(mutex_);
  if (n == 4 && parts[0] == "frames" && parts[3] == "status") {
    const int base = body_revision(request);
    if (!request.contains("status") || !request.at("status").is_string())
      throw ReviewError(400, "bad_request", "request body must carry a 'status' string");
    std::vector<int> frames{parse_int(parts[2], "frame index")};
    if (request.contains("frames")) {
      if (!request.at("frames").is_array()) throw ReviewError(400, "bad_request", "'frames' must be an array");
      for (const auto &f : request.at("frames")) {
        if (!f.is_number_integer()) throw ReviewError(400, "bad_request", "'frames' must hold integers");
        frames.push_back(f.get<int>());
      }
    }
    const AuditEntry &e = state_.set_status(parts[1], frames, frame_status_from_string(request.at("status")), base,
                                            who, now_iso8601());
    persist(e);
    json out = list_frames(parts[1]);
    out["changed"] = e.frames;
    return {200, out};
  }
  if (n == 3 && parts[0] == "tracks" && parts[2] == "interpolate") {
    const int base = body_revision(request);
    const AuditEntry &e = state_.interpolate(parts[1], scene_.model, base, who, now_iso8601());
    persist(e);
    json out = list_frames(parts[1]);
    out["changed"] = e.frames;
    return {200, out};
  }
  if (n == 1 && parts[0] == "export") {
    const int base = body_revision(request);
    if (base != state_.revision())
      throw ReviewError(409, "stale_revision",
                        "revision " + std::to_string(base) + " is stale, current is " + std::to_string(state_.revision()));
    json out = state_.export_annotations(scene_.manifest.scene_id);
    if (!state_dir_.empty()) write_json_file(state_dir_ / "export.json", out);
    return {200, out};
  }
  throw ReviewError(404, "not_found", "no such endpoint");
}

json ReviewService::list_tracks() const {
  json tracks = json::array();
  for (const auto &[id, tr] : state_.tracks()) {
    json counts = json::object();
    for (const char *name : kStatusNames) counts[name] = 0;
    for (const auto &[idx, s] : tr.status) counts[to_string(s)] = counts[to_string(s)].get<int>() + 1;
    tracks.push_back({{"track_id", id},
                      {"frames", tr.status.size()},
                      {"first", tr.status.empty() ? 0 : tr.status.begin()->first},
                      {"last", tr.status.empty() ? 0 : tr.status.rbegin()->first},
                      {"counts", counts}});
  }
  return json{{"scene_id", scene_.manifest.scene_id}, {"revision", state_.revision()}, {"tracks", tracks}};
}

json ReviewService::list_frames(const std::string &track) const {
  const TrackReview &tr = state_.track(track);
  json frames = json::array();
  for (const auto &[idx, s] : tr.status) frames.push_back({{"idx", idx}, {"status", to_string(s)}});
  return json{{"track_id", track}, {"revision", state_.revision()}, {"frames", frames}};
}

json ReviewService::frame_bundle(const std::string &track, int index) const {
  const TrackReview &tr = state_.track(track);
  auto st = tr.status.find(index);
  if (st == tr.status.end())
    throw ReviewError(404, "unknown_frame", "track '" + track + "' has no frame " + std::to_string(index));
  const int row = frame_row(tr.result, index);
  const auto bones = skeleton_bones(scene_.model);
  json bone_list = json::array();
  for (const auto &[a, b] : bones) bone_list.push_back({a, b});

  // Points near the person: the detection box, or 1.2 m around the root.
  std::vector<Eigen::Vector3d> near;
  const FrameRef &frame = scene_.manifest.frame(index);
  const auto cloud = frame_cloud(index);
  const Detection *det = nullptr;
  for (const auto &t : scene_.tracks)
    if (t.track_id == track) det = t.at(index);
  if (det) {
    for (std::size_t i : points_in_box(*cloud, det->box)) near.push_back(cloud->points[i]);
  } else if (row >= 0 && row < static_cast<int>(tr.result.joints.size())) {
    const Eigen::Vector3d root = tr.result.joints[row].joints.row(0).transpose();
    for (const auto &p : cloud->points)
      if ((p - root).norm() < 1.2) near.push_back(p);
  }
  const std::size_t max_points = 500;
  const std::size_t step = near.size() > max_points ? (near.size() + max_points - 1) / max_points : 1;

  json cameras = json::array();
  for (const CameraModel &cam : scene_.cameras) {
    json jc{{"camera_id", cam.id}, {"width", cam.intrinsics.width}, {"height", cam.intrinsics.height}};
    jc["image"] = nullptr;
    for (const auto &v : frame.views)
      if (v.camera_id == cam.id && !v.image.empty()) jc["image"] = "/files/" + v.image.generic_string();
    json joints = json::array(), polylines = json::array();
    if (row >= 0 && row < static_cast<int>(tr.result.joints.size())) {
      const PoseSkeleton3D &sk = tr.result.joints[row];
      std::vector<std::optional<Eigen::Vector2d>> px;
      for (int j = 0; j < sk.num_joints(); ++j) {
        px.push_back(project(cam, sk.joints.row(j).transpose()));
        joints.push_back(px.back() ? json{px.back()->x(), px.back()->y()} : json(nullptr));
      }
      for (const auto &[a, b] : bones)
        if (px[a] && px[b]) polylines.push_back({{px[a]->x(), px[a]->y()}, {px[b]->x(), px[b]->y()}});
    }
    json points = json::array();
    for (std::size_t i = 0; i < near.size(); i += step) {
      const auto p = project(cam, near[i]);
      if (p && p->x() >= 0 && p->y() >= 0 && p->x() < cam.intrinsics.width && p->y() < cam.intrinsics.height)
        points.push_back({p->x(), p->y()});
    }
    jc["skeleton"] = {{"joints", joints}, {"polylines", polylines}};
    jc["points"] = points;
    cameras.push_back(jc);
  }
  json out{{"track_id", track}, {"idx", index},      {"status", to_string(st->second)},
           {"revision", state_.revision()}, {"bones", bone_list}, {"cameras", cameras}};
  out["joints3d"] = row >= 0 && row < static_cast<int>(tr.result.joints.size())
                        ? skeleton_to_json(tr.result.joints[row])["joints"]
                        : json(nullptr);
  return out;
}

json ReviewService::cloud_preview(int index, const std::map<std::string, std::string> &query) const {
  const auto cloud = frame_cloud(index);
  std::size_t max_points = 2000;
  if (auto it = query.find("max"); it != query.end()) {
    const int m = parse_int(it->second, "max");
    if (m < 1) throw ReviewError(400, "bad_request", "max must be positive");
    max_points = static_cast<std::size_t>(m);
  }
  const CameraModel *cam = nullptr;
  if (auto it = query.find("camera"); it != query.end()) {
    for (const auto &c : scene_.cameras)
      if (c.id == it->second) cam = &c;
    if (!cam) throw ReviewError(404, "unknown_camera", "unknown camera '" + it->second + "'");
  }
  const std::size_t step = cloud->size() > max_points ? (cloud->size() + max_points - 1) / max_points : 1;
  json points = json::array();
  for (std::size_t i = 0; i < cloud->size(); i += step) {
    const Eigen::Vector3d &p = cloud->points[i];
    json jp{{"id", i}, {"world", {p.x(), p.y(), p.z()}}};
    if (cam) {
      const auto px = project(*cam, p);
      if (px && px->x() >= 0 && px->y() >= 0 && px->x() < cam->intrinsics.width && px->y() < cam->intrinsics.height)
        jp["pixel"] = {px->x(), px->y()};
      else
        jp["pixel"] = nullptr;
    }
    points.push_back(jp);
  }
  return json{{"idx", index}, {"total", cloud->size()}, {"points", points}};
}

}  // namespace mmfit
