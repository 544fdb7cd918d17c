#include <doctest.h>

#include <atomic>
#include <thread>

#include "mmfit/geometry_io.hpp"
#include "mmfit/review.hpp"
#include "support.hpp"

// After the Eigen headers pulled in above.
#include <httplib.h>

using namespace mmfit;
using mmfit::testing::TempDir;

namespace {

const BodyModel &model() {
  static const BodyModel m = make_toy_model(3, 300, 24);
  return m;
}

void fill_joints(FitResult &r) {
  r.joints.clear();
  r.frame_losses.assign(r.num_frames(), LossBreakdown{});
  for (int f = 0; f < r.num_frames(); ++f) {
    const PosedBody body = forward(model(), r.params.beta, r.params.theta.row(f).transpose(),
                                   r.params.r.row(f).transpose());
    r.joints.push_back({body.joints, {}});
  }
}

/// Track `id` walking along x with a fixed pose.
FitResult walking_result(const std::string &id, int frames, double y = 0.0) {
  FitResult r;
  r.track_id = id;
  r.params = BodyParams::zeros(frames, model().pose_dims());
  r.params.beta.setConstant(0.1);
  Eigen::RowVectorXd pose = Eigen::RowVectorXd::Zero(model().pose_dims());
  pose.head(6) << 0.1, 0.2, 0.3, 0.2, -0.1, 0.05;
  for (int f = 0; f < frames; ++f) {
    r.frame_indices.push_back(f);
    r.params.r.row(f) << 0.5 * f, y, 1.0;
    r.params.theta.row(f) = pose;
  }
  fill_joints(r);
  return r;
}

FrameStatus status_of(const ReviewState &s, const std::string &track, int idx) {
  return s.track(track).status.at(idx);
}

int error_status(const std::function<void()> &f, std::string *code = nullptr) {
  try {
    f();
  } catch (const ReviewError &e) {
    if (code) *code = e.code();
    return e.status();
  }
  return 0;
}

/// Synthetic scene on disk with ground truth parameters as the fit results.
struct ServiceFixture {
  TempDir dir;
  SynthScene scene;
  ReviewScene review;

  ServiceFixture() {
    SynthSpec spec;
    spec.seed = 21;
    spec.persons = 2;
    spec.frames = 5;
    spec.points_per_person = 300;
    scene = write_synth_scene(dir / "scene", spec, model());
    std::filesystem::create_directories(dir / "run/results");
    for (const SynthPerson &p : scene.persons) {
      FitResult r;
      r.track_id = p.track_id;
      r.params = p.params;
      for (int f = 0; f < spec.frames; ++f) r.frame_indices.push_back(f);
      fill_joints(r);
      write_json_file(dir / "run/results" / (p.track_id + ".json"), fit_result_to_json(r));
    }
    review = load_review_scene(dir / "scene/manifest.json", dir / "run");
  }
};

std::string status_body(int revision, const std::string &status, const std::vector<int> &frames = {}) {
  json j{{"revision", revision}, {"status", status}};
  if (!frames.empty()) j["frames"] = frames;
  return j.dump();
}

}  // namespace

TEST_CASE("status transitions") {
  using S = FrameStatus;
  const S all[] = {S::kUnreviewed, S::kValid, S::kInvalid, S::kInterpolated, S::kRemoved};
  int allowed = 0;
  for (S a : all)
    for (S b : all) allowed += transition_allowed(a, b);
  CHECK(allowed == 4);
  CHECK(transition_allowed(S::kUnreviewed, S::kValid));
  CHECK(transition_allowed(S::kUnreviewed, S::kInvalid));
  CHECK(transition_allowed(S::kInvalid, S::kInterpolated));
  CHECK(transition_allowed(S::kInvalid, S::kRemoved));
  CHECK_FALSE(transition_allowed(S::kValid, S::kInvalid));
  CHECK_FALSE(transition_allowed(S::kRemoved, S::kUnreviewed));
  for (S s : all) CHECK(frame_status_from_string(to_string(s)) == s);
  CHECK(error_status([] { frame_status_from_string("bogus"); }) == 400);
}

TEST_CASE("set_status checks revision, ids and transitions") {
  ReviewState s({walking_result("a", 4), walking_result("b", 4, 2.0)});
  CHECK(s.revision() == 0);
  s.set_status("a", {0, 1}, FrameStatus::kValid, 0, "ann");
  CHECK(s.revision() == 1);
  CHECK(status_of(s, "a", 1) == FrameStatus::kValid);

  std::string code;
  CHECK(error_status([&] { s.set_status("a", {2}, FrameStatus::kValid, 0, "ann"); }, &code) == 409);
  CHECK(code == "stale_revision");
  CHECK(error_status([&] { s.set_status("zz", {2}, FrameStatus::kValid, 1, "ann"); }, &code) == 404);
  CHECK(code == "unknown_track");
  CHECK(error_status([&] { s.set_status("a", {9}, FrameStatus::kValid, 1, "ann"); }, &code) == 404);
  CHECK(code == "unknown_frame");
  CHECK(error_status([&] { s.set_status("a", {1}, FrameStatus::kInvalid, 1, "ann"); }, &code) == 422);
  CHECK(code == "illegal_transition");
  CHECK(error_status([&] { s.set_status("a", {2}, FrameStatus::kInterpolated, 1, "ann"); }, &code) == 422);

  // One bad frame rejects the whole request.
  CHECK(error_status([&] { s.set_status("a", {2, 3, 0}, FrameStatus::kInvalid, 1, "ann"); }) == 422);
  CHECK(status_of(s, "a", 2) == FrameStatus::kUnreviewed);
  CHECK(s.revision() == 1);
  CHECK(s.audit_log().size() == 1);
}

TEST_CASE("interpolating a constant-motion track") {
  ReviewState s({walking_result("a", 5)});
  s.set_status("a", {2}, FrameStatus::kInvalid, 0, "ann");
  std::string code;
  CHECK(error_status([&] { s.export_annotations("x"); }, &code) == 409);
  CHECK(code == "invalid_frames");
  s.interpolate("a", model(), 1, "ann");
  CHECK(status_of(s, "a", 2) == FrameStatus::kInterpolated);
  CHECK(error_status([&] { s.interpolate("a", model(), 2, "ann"); }, &code) == 422);
  CHECK(code == "nothing_to_do");

  const json out = s.export_annotations("x");
  const json &frames = out["tracks"][0]["frames"];
  REQUIRE(frames.size() == 5);
  CHECK(frames[2]["status"] == "interpolated");
  for (int k = 0; k < model().pose_dims(); ++k)
    CHECK(std::abs(frames[2]["theta"][k].get<double>() - frames[1]["theta"][k].get<double>()) < 1e-12);
  CHECK(std::abs(frames[2]["r"][0].get<double>() - 1.0) < 1e-12);
  const FitResult reference = walking_result("a", 5);
  for (int j = 0; j < model().num_joints(); ++j)
    for (int d = 0; d < 3; ++d)
      CHECK(std::abs(frames[2]["joints"][j][d].get<double>() - reference.joints[2].joints(j, d)) < 1e-9);
  CHECK(out["removal"]["removed"] == 0);
}

TEST_CASE("boundary frames are removed and tallied") {
  ReviewState s({walking_result("a", 5), walking_result("b", 5, 2.0)});
  s.set_status("a", {0}, FrameStatus::kInvalid, 0, "ann");
  s.set_status("b", {4}, FrameStatus::kInvalid, 1, "ann");
  s.set_status("b", {1, 2}, FrameStatus::kValid, 2, "ann");
  s.interpolate("a", model(), 3, "ann");
  s.set_status("b", {4}, FrameStatus::kRemoved, 4, "ann");
  CHECK(status_of(s, "a", 0) == FrameStatus::kRemoved);
  CHECK(s.track("a").result.frame_indices == std::vector<int>{1, 2, 3, 4});
  CHECK(s.track("b").result.frame_indices == std::vector<int>{0, 1, 2, 3});

  const json out = s.export_annotations("scene");
  CHECK(out["removal"]["summary"] == "removed 2 human poses (20.00% of total detected humans)");
  CHECK(out["removal"]["total"] == 10);
  CHECK(out["tracks"][0]["frames"].size() == 4);
  CHECK(out["revision"] == 5);

  // The audit log has one entry per mutation and replays to the same state.
  REQUIRE(s.audit_log().size() == 5);
  for (int i = 0; i < 5; ++i) CHECK(s.audit_log()[i].revision == i + 1);
  std::vector<AuditEntry> log;
  for (const auto &e : s.audit_log()) log.push_back(audit_entry_from_json(to_json(e)));
  const ReviewState replayed =
      ReviewState::replay(ReviewState({walking_result("a", 5), walking_result("b", 5, 2.0)}), log, model());
  CHECK(replayed.status_json() == s.status_json());
  CHECK(replayed.export_annotations("scene") == out);
}

TEST_CASE("review service endpoints") {
  ServiceFixture fx;
  ReviewService svc(fx.review, "secret");
  auto get = [&](const std::string &path) { return svc.handle("GET", path, "secret", ""); };

  CHECK(svc.handle("GET", "/tracks", "", "").status == 401);
  CHECK(svc.handle("GET", "/tracks", "wrong", "").body["error"] == "unauthorized");
  CHECK_THROWS_AS(ReviewService(fx.review, ""), Error);

  const ReviewResponse tracks = get("/tracks");
  REQUIRE(tracks.status == 200);
  CHECK(tracks.body["tracks"].size() == 2);
  CHECK(tracks.body["tracks"][0]["counts"]["unreviewed"] == 5);
  CHECK(get("/tracks/p1/frames").body["frames"].size() == 5);
  CHECK(get("/tracks/nobody/frames").status == 404);
  CHECK(get("/nothing").body["error"] == "not_found");
  CHECK(get("/frames/p0/99/bundle").body["error"] == "unknown_frame");
  CHECK(get("/frames/p0/x/bundle").status == 400);

  SUBCASE("bundle projections") {
    const ReviewResponse b = get("/frames/p1/3/bundle");
    REQUIRE(b.status == 200);
    CHECK(b.body["status"] == "unreviewed");
    CHECK(b.body["bones"].size() == 23);
    REQUIRE(b.body["cameras"].size() == fx.scene.cameras.size());
    const Points3 &joints = fx.scene.persons[1].joints[3];
    for (std::size_t c = 0; c < fx.scene.cameras.size(); ++c) {
      const json &jc = b.body["cameras"][c];
      CHECK(jc["camera_id"] == fx.scene.cameras[c].id);
      CHECK(jc["image"].is_null());
      for (int j = 0; j < joints.rows(); ++j) {
        const auto px = project(fx.scene.cameras[c], joints.row(j).transpose());
        REQUIRE(px);
        CHECK(std::abs(jc["skeleton"]["joints"][j][0].get<double>() - px->x()) < 1e-9);
        CHECK(std::abs(jc["skeleton"]["joints"][j][1].get<double>() - px->y()) < 1e-9);
      }
      CHECK(jc["skeleton"]["polylines"].size() == 23);
      CHECK(jc["points"].size() > 50);
      CHECK(jc["points"].size() <= 500);
    }
  }
  SUBCASE("cloud preview") {
    const ReviewResponse c = get("/frames/2/cloud?camera=cam0&max=100");
    REQUIRE(c.status == 200);
    CHECK(c.body["points"].size() <= 100);
    CHECK(c.body["total"] == fx.scene.frames[2].cloud.size());
    CHECK(c.body["points"][0].contains("pixel"));
    CHECK(get("/frames/2/cloud?camera=nope").status == 404);
    CHECK(get("/frames/2/cloud?max=0").status == 400);
    CHECK(get("/frames/77/cloud").status == 404);
  }
  SUBCASE("two clients editing from the same revision") {
    const int rev = get("/tracks").body["revision"];
    const ReviewResponse first = svc.handle("POST", "/frames/p0/1/status", "secret", status_body(rev, "valid"), "alice");
    const ReviewResponse second = svc.handle("POST", "/frames/p0/2/status", "secret", status_body(rev, "invalid"), "bob");
    CHECK(first.status == 200);
    CHECK(first.body["revision"] == rev + 1);
    CHECK(second.status == 409);
    CHECK(second.body["error"] == "stale_revision");
    CHECK(get("/tracks/p0/frames").body["frames"][2]["status"] == "unreviewed");
  }
  SUBCASE("export requires every invalid frame resolved") {
    CHECK(svc.handle("POST", "/frames/p0/0/status", "secret", status_body(0, "invalid", {4}), "a").status == 200);
    const ReviewResponse blocked = svc.handle("POST", "/export", "secret", json{{"revision", 1}}.dump(), "a");
    CHECK(blocked.status == 409);
    CHECK(blocked.body["error"] == "invalid_frames");
    const ReviewResponse fixed = svc.handle("POST", "/tracks/p0/interpolate", "secret", json{{"revision", 1}}.dump(), "a");
    CHECK(fixed.status == 200);
    CHECK(fixed.body["frames"][0]["status"] == "removed");
    const ReviewResponse done = svc.handle("POST", "/export", "secret", json{{"revision", 2}}.dump(), "a");
    REQUIRE(done.status == 200);
    CHECK(done.body["removal"]["summary"] == "removed 2 human poses (20.00% of total detected humans)");
    CHECK(svc.revision() == 2);
  }
  SUBCASE("malformed requests") {
    CHECK(svc.handle("POST", "/frames/p0/0/status", "secret", "{", "a").status == 400);
    CHECK(svc.handle("POST", "/frames/p0/0/status", "secret", R"({"status":"valid"})", "a").status == 400);
    CHECK(svc.handle("POST", "/frames/p0/0/status", "secret", status_body(0, "maybe"), "a").status == 400);
    CHECK(svc.handle("DELETE", "/tracks", "secret", "", "a").status == 405);
  }
}

TEST_CASE("review state persists through the audit log") {
  ServiceFixture fx;
  TempDir state;
  json before;
  {
    ReviewService svc(fx.review, "t", state.path());
    CHECK(svc.handle("POST", "/frames/p1/1/status", "t", status_body(0, "invalid", {2}), "alice").status == 200);
    CHECK(svc.handle("POST", "/frames/p1/0/status", "t", status_body(1, "valid"), "bob").status == 200);
    CHECK(svc.handle("POST", "/tracks/p1/interpolate", "t", json{{"revision", 2}}.dump(), "alice").status == 200);
    before = svc.handle("GET", "/tracks/p1/frames", "t", "").body;
  }
  std::ifstream in(state / "review_audit.jsonl");
  int lines = 0;
  for (std::string line; std::getline(in, line);) {
    const AuditEntry e = audit_entry_from_json(json::parse(line));
    CHECK(e.revision == ++lines);
    CHECK_FALSE(e.when.empty());
  }
  CHECK(lines == 3);
  CHECK(read_json_file(state / "review_state.json")["revision"] == 3);

  ReviewService again(fx.review, "t", state.path());
  CHECK(again.revision() == 3);
  CHECK(again.handle("GET", "/tracks/p1/frames", "t", "").body == before);
  const json bundle = again.handle("GET", "/frames/p1/1/bundle", "t", "").body;
  CHECK(bundle["status"] == "interpolated");
}

TEST_CASE("concurrent mutations are serialized") {
  ServiceFixture fx;
  ReviewService svc(fx.review, "t");
  std::atomic<int> accepted{0};
  std::vector<std::thread> workers;
  for (int w = 0; w < 4; ++w) {
    workers.emplace_back([&, w] {
      // Each worker marks its own frames, retrying on stale revisions.
      for (int idx = w; idx < 10; idx += 4) {
        const std::string track = idx < 5 ? "p0" : "p1";
        const std::string path = "/frames/" + track + "/" + std::to_string(idx % 5) + "/status";
        for (;;) {
          const ReviewResponse r = svc.handle("POST", path, "t", status_body(svc.revision(), "valid"), "w");
          if (r.status == 200) {
            ++accepted;
            break;
          }
          REQUIRE(r.status == 409);
        }
        svc.handle("GET", "/frames/" + track + "/" + std::to_string(idx % 5) + "/bundle", "t", "");
      }
    });
  }
  for (auto &t : workers) t.join();
  CHECK(accepted == 10);
  CHECK(svc.revision() == 10);
  const json tracks = svc.handle("GET", "/tracks", "t", "").body;
  CHECK(tracks["tracks"][0]["counts"]["valid"] == 5);
  CHECK(tracks["tracks"][1]["counts"]["valid"] == 5);
}

TEST_CASE("http transport") {
  ServiceFixture fx;
  ReviewService svc(fx.review, "tok");
  ReviewHttpServer server(svc);
  const int port = server.bind("127.0.0.1", 0);
  std::thread loop([&] { server.listen(); });

  httplib::Client client("127.0.0.1", port);
  auto unauth = client.Get("/tracks");
  REQUIRE(unauth);
  CHECK(unauth->status == 401);

  auto bearer = client.Get("/tracks", {{"Authorization", "Bearer tok"}});
  REQUIRE(bearer);
  CHECK(bearer->status == 200);
  CHECK(json::parse(bearer->body)["tracks"].size() == 2);
  auto header = client.Get("/tracks/p0/frames", {{"X-MMFIT-Token", "tok"}});
  REQUIRE(header);
  CHECK(header->status == 200);
  auto query = client.Get("/frames/1/cloud?token=tok&max=10");
  REQUIRE(query);
  CHECK(json::parse(query->body)["points"].size() <= 10);

  auto post = client.Post("/frames/p0/0/status", {{"Authorization", "Bearer tok"}, {"X-MMFIT-User", "carol"}},
                          status_body(0, "valid"), "application/json");
  REQUIRE(post);
  CHECK(post->status == 200);
  auto stale = client.Post("/frames/p0/1/status", {{"Authorization", "Bearer tok"}}, status_body(0, "valid"),
                           "application/json");
  REQUIRE(stale);
  CHECK(stale->status == 409);
  auto missing = client.Get("/files/images/none.png?token=tok");
  REQUIRE(missing);
  CHECK(missing->status == 404);

  server.stop();
  loop.join();
}
