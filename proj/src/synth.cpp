#include "mmfit/synth.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "mmfit/error.hpp"
#include "mmfit/rotation.hpp"

namespace mmfit {

void SynthSpec::validate() const {
  if (persons < 1 || frames < 1 || cameras < 1) throw Error("synth spec: counts must be >= 1");
  if (points_per_person < 0 || clutter_points < 0) throw Error("synth spec: negative point count");
  if (!(pixel_noise >= 0.0) || !(point_noise >= 0.0)) throw Error("synth spec: noise must be >= 0");
  if (!(camera_radius > 0.0) || !(focal > 0.0) || image_width < 1 || image_height < 1) {
    throw Error("synth spec: invalid camera rig");
  }
  if (!(motion_amplitude >= 0.0) || !(area_radius >= 0.0) || !(min_separation >= 0.0)) {
    throw Error("synth spec: invalid motion or placement parameters");
  }
}

SynthSpec synth_spec_from_json(const nlohmann::json &j, SynthSpec s) {
  if (!j.is_object()) throw Error("synth spec: expected an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string &k = it.key();
    const nlohmann::json &v = *it;
    auto integer = [&]() {
      if (!v.is_number_integer()) throw Error("synth spec: " + k + ": expected an integer");
      return v.get<long long>();
    };
    auto number = [&]() {
      if (!v.is_number()) throw Error("synth spec: " + k + ": expected a number");
      return v.get<double>();
    };
    if (k == "seed") s.seed = static_cast<std::uint64_t>(integer());
    else if (k == "persons") s.persons = static_cast<int>(integer());
    else if (k == "frames") s.frames = static_cast<int>(integer());
    else if (k == "cameras") s.cameras = static_cast<int>(integer());
    else if (k == "camera_radius") s.camera_radius = number();
    else if (k == "camera_height") s.camera_height = number();
    else if (k == "focal") s.focal = number();
    else if (k == "image_width") s.image_width = static_cast<int>(integer());
    else if (k == "image_height") s.image_height = static_cast<int>(integer());
    else if (k == "points_per_person") s.points_per_person = static_cast<int>(integer());
    else if (k == "pixel_noise") s.pixel_noise = number();
    else if (k == "point_noise") s.point_noise = number();
    else if (k == "motion_amplitude") s.motion_amplitude = number();
    else if (k == "area_radius") s.area_radius = number();
    else if (k == "min_separation") s.min_separation = number();
    else if (k == "clutter_points") s.clutter_points = static_cast<int>(integer());
    else throw Error("synth spec: unknown key '" + k + "'");
  }
  s.validate();
  return s;
}

nlohmann::json synth_spec_to_json(const SynthSpec &s) {
  return {{"seed", s.seed},
          {"persons", s.persons},
          {"frames", s.frames},
          {"cameras", s.cameras},
          {"camera_radius", s.camera_radius},
          {"camera_height", s.camera_height},
          {"focal", s.focal},
          {"image_width", s.image_width},
          {"image_height", s.image_height},
          {"points_per_person", s.points_per_person},
          {"pixel_noise", s.pixel_noise},
          {"point_noise", s.point_noise},
          {"motion_amplitude", s.motion_amplitude},
          {"area_radius", s.area_radius},
          {"min_separation", s.min_separation},
          {"clutter_points", s.clutter_points}};
}

namespace {

constexpr double kPelvisHeight = 0.93;
constexpr double kBoxMargin = 0.15;
constexpr double kAngularRate = 0.25;  // rad per frame for limb swings

BBox3D detection_box(const Points3 &vertices, double yaw) {
  const Eigen::Matrix3d Rinv = axis_angle_to_matrix(Eigen::Vector3d(0, 0, -yaw));
  Eigen::Vector3d lo = Eigen::Vector3d::Constant(1e300), hi = -lo;
  for (int i = 0; i < vertices.rows(); ++i) {
    const Eigen::Vector3d p = Rinv * vertices.row(i).transpose();
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
  lo.array() -= kBoxMargin;
  hi.array() += kBoxMargin;
  BBox3D box;
  box.center = axis_angle_to_matrix(Eigen::Vector3d(0, 0, yaw)) * (0.5 * (lo + hi));
  box.size = hi - lo;
  box.yaw = yaw;
  return box;
}

// Corner vertices of faces that face at least one sensor, drawn with
// probability proportional to face area.
std::vector<Eigen::Vector3d> sample_surface(const BodyModel &model, const Points3 &vertices,
                                            const std::vector<Eigen::Vector3d> &sensors, int count,
                                            double noise, std::mt19937_64 &rng) {
  std::vector<int> visible;
  std::vector<double> cumulative;
  double total = 0.0;
  for (int f = 0; f < static_cast<int>(model.faces.size()); ++f) {
    const auto &F = model.faces[f];
    const Eigen::Vector3d a = vertices.row(F[0]).transpose();
    const Eigen::Vector3d b = vertices.row(F[1]).transpose();
    const Eigen::Vector3d c = vertices.row(F[2]).transpose();
    const Eigen::Vector3d n = (b - a).cross(c - a);
    const double area = 0.5 * n.norm();
    if (area <= 0.0) continue;
    const Eigen::Vector3d centroid = (a + b + c) / 3.0;
    const bool seen = std::any_of(sensors.begin(), sensors.end(),
                                  [&](const Eigen::Vector3d &s) { return n.dot(s - centroid) > 0.0; });
    if (!seen) continue;
    visible.push_back(f);
    total += area;
    cumulative.push_back(total);
  }
  std::vector<Eigen::Vector3d> out;
  if (count == 0) return out;
  if (visible.empty()) throw Error("synth: no mesh face faces any sensor");
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  out.reserve(count);
  for (int k = 0; k < count; ++k) {
    const double u = uni(rng) * total;
    const auto it = std::upper_bound(cumulative.begin(), cumulative.end(), u);
    const int face = visible[std::min<std::size_t>(it - cumulative.begin(), visible.size() - 1)];
    const double s1 = std::sqrt(uni(rng)), s2 = uni(rng);
    const double w[3] = {1.0 - s1, s1 * (1.0 - s2), s1 * s2};
    const int corner = static_cast<int>(std::max_element(w, w + 3) - w);
    Eigen::Vector3d p = vertices.row(model.faces[face][corner]).transpose();
    if (noise > 0.0) p += noise * Eigen::Vector3d(gauss(rng), gauss(rng), gauss(rng));
    out.push_back(p);
  }
  return out;
}

}  // namespace

TrackObservation SynthScene::track(int person) const {
  const SynthPerson &sp = persons.at(person);
  TrackObservation obs;
  obs.track_id = sp.track_id;
  for (std::size_t f = 0; f < frames.size(); ++f) {
    const SynthFrame &frame = frames[f];
    FrameObservation fo;
    fo.index = frame.index;
    fo.center = sp.boxes[f].center;
    for (const auto &per_camera : frame.poses)
      for (const auto &p : per_camera)
        if (p.track_id == sp.track_id) fo.poses.push_back(p.pose);
    for (int i : points_in_box(frame.cloud, sp.boxes[f])) fo.cloud.points.push_back(frame.cloud.points[i]);
    obs.frames.push_back(std::move(fo));
  }
  return obs;
}

SynthScene synthesize(const SynthSpec &spec, const BodyModel &model) {
  spec.validate();
  model.validate();
  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const int J = model.num_joints(), P = model.pose_dims(), t = spec.frames;
  const double a = spec.motion_amplitude;

  SynthScene scene;
  scene.scene_id = "synth-" + std::to_string(spec.seed);

  const Eigen::Vector3d target(0.0, 0.0, 1.0);
  for (int c = 0; c < spec.cameras; ++c) {
    // At most 90 degrees apart so that two cameras are not facing each other.
    const double az = std::min(2.0 * M_PI / spec.cameras, 0.5 * M_PI) * c + 0.3;
    const Eigen::Vector3d eye(spec.camera_radius * std::cos(az), spec.camera_radius * std::sin(az),
                              spec.camera_height);
    CameraModel cam;
    cam.id = "cam" + std::to_string(c);
    cam.intrinsics = {spec.focal, spec.focal, spec.image_width / 2.0, spec.image_height / 2.0,
                      spec.image_width, spec.image_height};
    cam.extrinsics = CameraExtrinsics::look_at(eye, target);
    scene.cameras.push_back(cam);
    scene.sensors.push_back(eye - Eigen::Vector3d(0.0, 0.0, 0.3));
  }

  // Starting positions by rejection sampling inside the disk.
  std::vector<Eigen::Vector2d> starts;
  for (int attempt = 0; static_cast<int>(starts.size()) < spec.persons; ++attempt) {
    if (attempt > 10000) throw Error("synth spec unsatisfiable: cannot place persons with the requested separation");
    const double rad = spec.area_radius * std::sqrt(uni(rng));
    const double ang = 2.0 * M_PI * uni(rng);
    const Eigen::Vector2d p(rad * std::cos(ang), rad * std::sin(ang));
    bool ok = true;
    for (const auto &q : starts) ok = ok && (p - q).norm() >= spec.min_separation;
    if (ok) starts.push_back(p);
  }

  for (int n = 0; n < spec.persons; ++n) {
    SynthPerson sp;
    sp.track_id = "p" + std::to_string(n);
    BodyParams &bp = sp.params;
    bp = BodyParams::zeros(t, P);
    for (int k = 0; k < BodyModel::kShapeDims; ++k) bp.beta[k] = 0.5 * gauss(rng);

    const double heading = 2.0 * M_PI * uni(rng);
    const double speed = 0.05 * a * uni(rng);
    const double yaw0 = 2.0 * M_PI * uni(rng);
    const double yaw_rate = 0.02 * a * (2.0 * uni(rng) - 1.0);
    Eigen::VectorXd base(P), amp(P), phase(P);
    for (int k = 0; k < P; ++k) {
      base[k] = 0.15 * a * gauss(rng);
      amp[k] = 0.1 * a * uni(rng);
      phase[k] = 2.0 * M_PI * uni(rng);
    }
    for (int f = 0; f < t; ++f) {
      const Eigen::Vector2d xy = starts[n] + speed * f * Eigen::Vector2d(std::cos(heading), std::sin(heading));
      bp.r.row(f) = Eigen::RowVector3d(xy.x(), xy.y(), kPelvisHeight);
      for (int k = 3; k < P; ++k) bp.theta(f, k) = base[k] + amp[k] * std::sin(kAngularRate * f + phase[k]);
      bp.theta(f, 2) = yaw0 + yaw_rate * f;
    }
    scene.persons.push_back(std::move(sp));
  }

  std::vector<std::vector<PosedBody>> bodies(spec.persons);
  for (int n = 0; n < spec.persons; ++n) {
    SynthPerson &sp = scene.persons[n];
    for (int f = 0; f < t; ++f) {
      bodies[n].push_back(forward(model, sp.params.beta, sp.params.theta.row(f).transpose(),
                                  sp.params.r.row(f).transpose()));
      sp.joints.push_back(bodies[n][f].joints);
      sp.boxes.push_back(detection_box(bodies[n][f].vertices, sp.params.theta(f, 2)));
      for (const auto &cam : scene.cameras) {
        const auto px = project(cam, bodies[n][f].joints.row(0).transpose());
        if (!px || px->x() < 0 || px->y() < 0 || px->x() >= cam.intrinsics.width ||
            px->y() >= cam.intrinsics.height) {
          throw Error("synth spec unsatisfiable: person " + sp.track_id + " leaves the view of " + cam.id);
        }
      }
    }
  }

  Eigen::Vector3d lo = Eigen::Vector3d::Constant(1e300), hi = -lo;
  for (const auto &sp : scene.persons)
    for (const auto &box : sp.boxes)
      for (const auto &c : box.corners()) {
        lo = lo.cwiseMin(c);
        hi = hi.cwiseMax(c);
      }
  scene.bounds_min = Eigen::Vector3d(std::floor(lo.x()) - 1.0, std::floor(lo.y()) - 1.0, -0.2);
  scene.bounds_max = Eigen::Vector3d(std::ceil(hi.x()) + 1.0, std::ceil(hi.y()) + 1.0, 2.2);

  for (int f = 0; f < t; ++f) {
    SynthFrame frame;
    frame.index = f;
    frame.poses.resize(spec.cameras);
    for (int n = 0; n < spec.persons; ++n) {
      const auto pts = sample_surface(model, bodies[n][f].vertices, scene.sensors, spec.points_per_person,
                                      spec.point_noise, rng);
      frame.cloud.points.insert(frame.cloud.points.end(), pts.begin(), pts.end());
      for (int c = 0; c < spec.cameras; ++c) {
        const CameraModel &cam = scene.cameras[c];
        SynthPose sp;
        sp.track_id = scene.persons[n].track_id;
        sp.pose.camera_id = cam.id;
        sp.pose.keypoints = Points2::Zero(J, 2);
        sp.pose.confidence.assign(J, 0.0);
        bool any = false;
        for (int j = 0; j < J; ++j) {
          const auto px = project(cam, bodies[n][f].joints.row(j).transpose());
          Eigen::Vector2d noise(gauss(rng), gauss(rng));
          if (!px || px->x() < 0 || px->y() < 0 || px->x() >= cam.intrinsics.width ||
              px->y() >= cam.intrinsics.height) {
            continue;
          }
          sp.pose.keypoints.row(j) = (*px + spec.pixel_noise * noise).transpose();
          sp.pose.confidence[j] = 1.0;
          any = true;
        }
        if (any) frame.poses[c].push_back(std::move(sp));
      }
    }
    for (int k = 0, attempts = 0; k < spec.clutter_points && attempts < 100 * spec.clutter_points; ++attempts) {
      const Eigen::Vector3d p(scene.bounds_min.x() + uni(rng) * (scene.bounds_max.x() - scene.bounds_min.x()),
                              scene.bounds_min.y() + uni(rng) * (scene.bounds_max.y() - scene.bounds_min.y()),
                              0.01 * gauss(rng));
      bool inside = false;
      for (const auto &sp : scene.persons) inside = inside || sp.boxes[f].contains(p);
      if (inside) continue;
      frame.cloud.points.push_back(p);
      ++k;
    }
    frame.cloud.intensity.assign(frame.cloud.points.size(), 1.0);
    scene.frames.push_back(std::move(frame));
  }
  return scene;
}

}  // namespace mmfit
