#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <vector>

#include <json.hpp>

#include "mmfit/body_model.hpp"
#include "mmfit/error.hpp"
#include "mmfit/fitting.hpp"
#include "mmfit/scene.hpp"

namespace mmfit {

enum class FrameStatus { kUnreviewed, kValid, kInvalid, kInterpolated, kRemoved };

std::string to_string(FrameStatus s);
FrameStatus frame_status_from_string(const std::string &s);
/// unreviewed -> valid | invalid, invalid -> interpolated | removed.
bool transition_allowed(FrameStatus from, FrameStatus to);

/// Review failure with the HTTP status it maps to.
class ReviewError : public Error {
 public:
  ReviewError(int status, std::string code, const std::string &message)
      : Error(message), status_(status), code_(std::move(code)) {}
  int status() const { return status_; }
  const std::string &code() const { return code_; }

 private:
  int status_;
  std::string code_;
};

struct AuditEntry {
  int revision = 0;  // revision after the mutation
  std::string who;
  std::string when;  // ISO 8601, informational
  std::string action;  // "status" or "interpolate"
  std::string track_id;
  std::vector<int> frames;
  std::string status;  // target status for "status"
};

nlohmann::json to_json(const AuditEntry &e);
AuditEntry audit_entry_from_json(const nlohmann::json &j);

struct TrackReview {
  FitResult result;  // removed frames are dropped from it
  std::map<int, FrameStatus> status;
};

/// Review state of a scene. Mutations require the current revision and
/// bump it by one.
class ReviewState {
 public:
  ReviewState() = default;
  explicit ReviewState(const std::vector<FitResult> &results);

  int revision() const { return revision_; }
  const std::map<std::string, TrackReview> &tracks() const { return tracks_; }
  const TrackReview &track(const std::string &id) const;
  const std::vector<AuditEntry> &audit_log() const { return log_; }

  /// Sets the status of every listed frame; all or nothing.
  const AuditEntry &set_status(const std::string &track_id, const std::vector<int> &frames, FrameStatus status,
                               int base_revision, const std::string &who, const std::string &when = {});
  /// Repairs every invalid frame of the track: interior runs become
  /// interpolated, runs at either end removed.
  const AuditEntry &interpolate(const std::string &track_id, const BodyModel &model, int base_revision,
                                const std::string &who, const std::string &when = {});

  /// Applies logged mutations in order to `initial`.
  static ReviewState replay(const ReviewState &initial, const std::vector<AuditEntry> &log, const BodyModel &model);

  /// Final annotations without removed frames, plus the removal tally.
  /// Fails while any frame is still invalid.
  nlohmann::json export_annotations(const std::string &scene_id) const;

  /// Statuses and revision; results are not included.
  nlohmann::json status_json() const;

 private:
  void check_revision(int base_revision) const;
  TrackReview &mutable_track(const std::string &id);
  const AuditEntry &commit(AuditEntry entry);

  std::map<std::string, TrackReview> tracks_;
  int revision_ = 0;
  std::vector<AuditEntry> log_;
};

struct ReviewResponse {
  int status = 200;
  nlohmann::json body;
};

/// Everything the review endpoints need about a scene.
struct ReviewScene {
  SceneManifest manifest;
  std::vector<CameraModel> cameras;
  std::vector<Track> tracks;
  BodyModel model;
  std::vector<FitResult> results;
};

/// Loads the manifest, its model and results/<track>.json from a run
/// output directory.
ReviewScene load_review_scene(const std::filesystem::path &manifest, const std::filesystem::path &run_dir);

/// JSON-over-HTTP review API independent of the transport. Reads run
/// concurrently; mutations are serialized. With a non-empty `state_dir`
/// accepted mutations are appended to review_audit.jsonl there and the
/// log found at construction is replayed.
class ReviewService {
 public:
  ReviewService(ReviewScene scene, std::string token, std::filesystem::path state_dir = {});

  /// `path` may carry a query string. `token` is the presented credential.
  ReviewResponse handle(const std::string &method, const std::string &path, const std::string &token,
                        const std::string &body, const std::string &who = "annotator");

  int revision() const;
  const ReviewScene &scene() const { return scene_; }
  /// Absolute path of a file the bundles reference, or empty.
  std::filesystem::path image_file(const std::string &relative) const;

 private:
  ReviewResponse route(const std::string &method, const std::vector<std::string> &parts,
                       const std::map<std::string, std::string> &query, const std::string &body, const std::string &who);
  nlohmann::json list_tracks() const;
  nlohmann::json list_frames(const std::string &track) const;
  nlohmann::json frame_bundle(const std::string &track, int index) const;
  nlohmann::json cloud_preview(int index, const std::map<std::string, std::string> &query) const;
  void persist(const AuditEntry &entry);
  std::shared_ptr<const PointCloud> frame_cloud(int index) const;

  ReviewScene scene_;
  std::string token_;
  std::filesystem::path state_dir_;
  ReviewState state_;
  mutable std::shared_mutex mutex_;
  mutable std::mutex cloud_mutex_;
  mutable std::map<int, std::shared_ptr<const PointCloud>> clouds_;
};

/// Bone list (parent, child) for a model.
std::vector<std::pair<int, int>> skeleton_bones(const BodyModel &model);

/// HTTP transport for a ReviewService. Static files under `static_dir`
/// are served at /, scene images at /files/<path>. The token may be given
/// as "Authorization: Bearer <token>", an X-MMFIT-Token header or a
/// `token` query parameter.
class ReviewHttpServer {
 public:
  explicit ReviewHttpServer(ReviewService &service, std::filesystem::path static_dir = {});
  ~ReviewHttpServer();
  /// Port 0 picks a free port. Returns the bound port.
  int bind(const std::string &host, int port);
  /// Blocks until stop().
  void listen();
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace mmfit
