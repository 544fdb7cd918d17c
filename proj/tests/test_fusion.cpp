#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "mmfit/error.hpp"
#include "mmfit/fusion.hpp"
#include "mmfit/rotation.hpp"
#include "mmfit/synth.hpp"
#include "support.hpp"

using namespace mmfit;

namespace {

const BodyModel &model() {
  static const BodyModel m = make_toy_model(3, 828, 24);
  return m;
}

CameraModel axis_camera(int width = 64, int height = 48) {
  CameraModel cam;
  cam.id = "c0";
  cam.intrinsics = {50.0, 50.0, 32.0, 24.0, width, height};
  return cam;
}

Heatmap2D random_heatmap(const CameraModel &cam, int joints, double stride, std::mt19937_64 &rng) {
  Heatmap2D h = Heatmap2D::zeros(cam.id, joints, cam.intrinsics, stride);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  for (float &v : h.values) v = u(rng);
  return h;
}

// Straightforward per-voxel reference for project_heatmaps_to_volume.
double reference_voxel(const std::vector<Heatmap2D> &hms, const std::vector<CameraModel> &cams,
                       const Eigen::Vector3d &p, int j, bool average) {
  double acc = 0.0;
  int valid = 0;
  for (std::size_t c = 0; c < hms.size(); ++c) {
    const CameraModel &cam = cams[c];
    const Eigen::Vector3d q = cam.extrinsics.rotation * p + cam.extrinsics.translation;
    if (q.z() <= 1e-9) continue;
    const double u = cam.intrinsics.fx * q.x() / q.z() + cam.intrinsics.cx;
    const double v = cam.intrinsics.fy * q.y() / q.z() + cam.intrinsics.cy;
    if (u < 0 || v < 0 || u >= cam.intrinsics.width || v >= cam.intrinsics.height) continue;
    const Heatmap2D &h = hms[c];
    const double hx = std::min(u / h.stride, h.width - 1.0), hy = std::min(v / h.stride, h.height - 1.0);
    const int x0 = static_cast<int>(std::floor(hx)), y0 = static_cast<int>(std::floor(hy));
    double s = 0.0;
    for (int dy = 0; dy <= 1; ++dy)
      for (int dx = 0; dx <= 1; ++dx) {
        const double w = (dx ? hx - x0 : 1.0 - (hx - x0)) * (dy ? hy - y0 : 1.0 - (hy - y0));
        if (w == 0.0) continue;
        s += w * h.at(j, std::min(y0 + dy, h.height - 1), std::min(x0 + dx, h.width - 1));
      }
    acc = average ? acc + s : std::max(acc, s);
    ++valid;
  }
  if (valid == 0) return 0.0;
  return average ? acc / valid : acc;
}

FeatureVolume with_occupancy(std::vector<ScalarVolume> joints) {
  ScalarVolume occ(joints.front().grid);
  return fuse(std::move(joints), occ);
}

}  // namespace

TEST_CASE("heatmap sampling and container") {
  const CameraModel cam = axis_camera(65, 48);
  Heatmap2D h = Heatmap2D::zeros("c0", 2, cam.intrinsics, 4.0);
  CHECK(h.width == 17);
  CHECK(h.height == 12);
  h.check_image(cam.intrinsics);
  CHECK_THROWS_AS(h.check_image(axis_camera(80, 48).intrinsics), Error);

  // Bilinear interpolation reproduces an affine field exactly.
  for (int y = 0; y < h.height; ++y)
    for (int x = 0; x < h.width; ++x) h.at(1, y, x) = static_cast<float>(0.02 * x + 0.03 * y + 0.1);
  CHECK(h.sample(1, {10.0, 6.0}) == doctest::Approx(0.02 * 2.5 + 0.03 * 1.5 + 0.1).epsilon(1e-6));
  CHECK(h.sample(1, {64.9, 0.0}) == doctest::Approx(0.02 * 16 + 0.1).epsilon(1e-6));
  CHECK(h.sample(0, {33.0, 21.0}) == 0.0);

  std::mt19937_64 rng(3);
  const Heatmap2D r = random_heatmap(cam, 3, 2.0, rng);
  const auto path = std::filesystem::temp_directory_path() / "mmfit_heatmap_test.bin";
  save_heatmap(path, r);
  const Heatmap2D back = load_heatmap(path);
  CHECK(back.camera_id == r.camera_id);
  CHECK(back.joints == 3);
  CHECK(back.stride == 2.0);
  CHECK(back.values == r.values);

  const auto size = std::filesystem::file_size(path);
  std::filesystem::resize_file(path, size - 4);
  CHECK_THROWS_AS(load_heatmap(path), Error);
  {
    std::ofstream out(path, std::ios::binary);
    out << "XXXX";
  }
  CHECK_THROWS_AS(load_heatmap(path), Error);
  std::filesystem::remove(path);

  Heatmap2D bad = r;
  bad.values[0] = 1.5f;
  CHECK_THROWS_AS(bad.validate(), Error);
}

TEST_CASE("render_heatmap places confidence-scaled peaks") {
  const CameraModel cam = axis_camera();
  CameraPose2D pose;
  pose.camera_id = "c0";
  pose.keypoints = Points2::Zero(3, 2);
  pose.keypoints << 20, 12, 40, 30, 10, 10;
  pose.confidence = {1.0, 0.5, 1.0};
  const Heatmap2D h = render_heatmap(cam, {pose}, 3, 2.0, 3.0, {0, 1, -1});
  CHECK(h.at(0, 6, 10) == doctest::Approx(1.0));
  CHECK(h.at(1, 15, 20) == doctest::Approx(0.5));
  CHECK(h.at(0, 6, 11) == doctest::Approx(std::exp(-0.5 * 4.0 / 9.0)).epsilon(1e-6));
  for (float v : std::vector<float>(h.values.begin() + h.index(2, 0, 0), h.values.end())) CHECK(v == 0.0f);
  CHECK_THROWS_AS(render_heatmap(cam, {pose}, 3, 2.0, 0.0), Error);
}

TEST_CASE("project_heatmaps_to_volume") {
  std::mt19937_64 rng(11);
  CameraModel a = axis_camera();
  a.extrinsics = CameraExtrinsics::look_at({0.0, -3.0, 0.5}, {0.0, 0.0, 0.0});
  CameraModel b = axis_camera();
  b.id = "c1";
  b.extrinsics = CameraExtrinsics::look_at({3.0, 0.5, 0.2}, {0.0, 0.0, 0.0});
  VoxelGrid grid = VoxelGrid::from_bounds({-1.5, -1.5, -1.0}, {1.5, 1.5, 1.0}, 0.25);

  SUBCASE("matches a per-voxel reference") {
    const std::vector<CameraModel> cams{a, b};
    const std::vector<Heatmap2D> hms{random_heatmap(a, 2, 2.0, rng), random_heatmap(b, 2, 2.0, rng)};
    for (bool average : {true, false}) {
      const auto vols = project_heatmaps_to_volume(
          hms, cams, grid, average ? HeatmapReduction::kAverage : HeatmapReduction::kMax, 3);
      REQUIRE(vols.size() == 2);
      double worst = 0.0;
      for (int j = 0; j < 2; ++j)
        for (int z = 0; z < grid.dims.z(); ++z)
          for (int y = 0; y < grid.dims.y(); ++y)
            for (int x = 0; x < grid.dims.x(); ++x) {
              const double ref = reference_voxel(hms, cams, grid.cell_center(x, y, z), j, average);
              worst = std::max(worst, std::abs(vols[j].at(x, y, z) - ref));
              CHECK(vols[j].at(x, y, z) >= 0.0);
              CHECK(vols[j].at(x, y, z) <= 1.0);
            }
      CHECK(worst < 1e-12);
    }
  }

  SUBCASE("zero and constant heatmaps") {
    const Heatmap2D zero = Heatmap2D::zeros("c0", 1, a.intrinsics, 1.0);
    CHECK(project_heatmaps_to_volume({zero}, {a}, grid)[0].max() == 0.0);

    Heatmap2D ones = zero;
    std::fill(ones.values.begin(), ones.values.end(), 1.0f);
    const auto vol = project_heatmaps_to_volume({ones}, {a}, grid)[0];
    for (int z = 0; z < grid.dims.z(); ++z)
      for (int y = 0; y < grid.dims.y(); ++y)
        for (int x = 0; x < grid.dims.x(); ++x) {
          const auto px = project(a, grid.cell_center(x, y, z));
          const bool inside = px && px->x() >= 0 && px->y() >= 0 && px->x() < 64 && px->y() < 48;
          CHECK(vol.at(x, y, z) == (inside ? 1.0 : 0.0));
        }
  }

  SUBCASE("delta at the projection of a voxel center") {
    // The principal ray passes through voxel centers and hits pixel (32, 24).
    CameraModel cam = axis_camera();
    VoxelGrid g;
    g.origin = {-0.5, -0.5, 1.0};
    g.voxel_size = Eigen::Vector3d::Constant(0.2);
    g.dims = {5, 5, 5};
    Heatmap2D delta = Heatmap2D::zeros("c0", 1, cam.intrinsics, 1.0);
    delta.at(0, 24, 32) = 1.0f;
    const auto vol = project_heatmaps_to_volume({delta}, {cam}, g)[0];
    CHECK(vol.at(2, 2, 3) == vol.max());
    CHECK(vol.max() == 1.0);
  }

  SUBCASE("an all-zero camera never raises a voxel") {
    const Heatmap2D first = random_heatmap(a, 1, 1.0, rng);
    const auto base = project_heatmaps_to_volume({first}, {a}, grid);
    const auto more = project_heatmaps_to_volume({first, Heatmap2D::zeros("c1", 1, b.intrinsics, 1.0)}, {a, b}, grid);
    for (std::size_t i = 0; i < base[0].values.size(); ++i) CHECK(more[0].values[i] <= base[0].values[i]);
  }

  SUBCASE("buffer reuse and errors") {
    const std::vector<Heatmap2D> hms{random_heatmap(a, 2, 1.0, rng)};
    std::vector<ScalarVolume> buf;
    project_heatmaps_to_volume(hms, {a}, grid, buf);
    const double *data = buf[0].values.data();
    project_heatmaps_to_volume(hms, {a}, grid, buf);
    CHECK(buf[0].values.data() == data);
    CHECK(buf[0].values == project_heatmaps_to_volume(hms, {a}, grid)[0].values);

    CHECK_THROWS_AS(project_heatmaps_to_volume(hms, {b}, grid), Error);
    CHECK_THROWS_AS(project_heatmaps_to_volume({hms[0], random_heatmap(b, 3, 1.0, rng)}, {a, b}, grid), Error);
    CHECK_THROWS_AS(project_heatmaps_to_volume({random_heatmap(axis_camera(80, 48), 2, 1.0, rng)}, {a}, grid), Error);
  }
}

TEST_CASE("fuse concatenates channels") {
  VoxelGrid g = VoxelGrid::from_bounds({0, 0, 0}, {1, 1, 1}, 0.25);
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<ScalarVolume> joints(3, ScalarVolume(g));
  for (auto &v : joints)
    for (double &x : v.values) x = u(rng);
  const auto copy = joints;
  const FeatureVolume fv = fuse(joints, ScalarVolume(g));
  CHECK(fv.num_channels() == 4);
  CHECK(fv.num_joint_channels() == 3);
  CHECK(fv.names == std::vector<std::string>{"joint_00", "joint_01", "joint_02", "occupancy"});
  for (int k = 0; k < 3; ++k) CHECK(fv.channels[k].values == copy[k].values);
  CHECK(fv.channels[3].max() == 0.0);

  VoxelGrid other = g;
  other.origin.x() += 0.1;
  CHECK_THROWS_AS(fuse(joints, ScalarVolume(other)), Error);
}

TEST_CASE("decode_pose") {
  FusionConfig cfg;
  VoxelGrid g = VoxelGrid::from_bounds({-2, -2, 0}, {2, 2, 2}, 0.1);

  SUBCASE("uniform channels decode to the crop center") {
    std::vector<ScalarVolume> joints(4, ScalarVolume(g));
    for (auto &v : joints) std::fill(v.values.begin(), v.values.end(), 0.25);
    const FeatureVolume fv = with_occupancy(joints);
    const PersonProposal prop{{0.33, -0.41, 1.07}, 1.0};
    const auto pose = decode_pose(fv, prop, cfg);
    const auto cell = *g.cell_of(prop.center);
    for (int j = 0; j < 4; ++j) {
      CHECK((pose.joints.row(j).transpose() - g.cell_center(cell.x(), cell.y(), cell.z())).norm() < 1e-12);
      CHECK(pose.confidence[j] == 0.25);
    }
  }

  SUBCASE("quadratic peaks are recovered exactly") {
    std::vector<Eigen::Vector3d> peaks{{0.31, -0.22, 1.04}, {-0.48, 0.53, 0.66}};
    std::vector<ScalarVolume> joints(2, ScalarVolume(g));
    for (int j = 0; j < 2; ++j)
      for (int z = 0; z < g.dims.z(); ++z)
        for (int y = 0; y < g.dims.y(); ++y)
          for (int x = 0; x < g.dims.x(); ++x)
            joints[j].at(x, y, z) = std::max(0.0, 1.0 - (g.cell_center(x, y, z) - peaks[j]).squaredNorm());
    const FeatureVolume fv = with_occupancy(joints);
    const auto pose = decode_pose(fv, {{0.0, 0.0, 1.0}, 1.0}, cfg);
    for (int j = 0; j < 2; ++j) {
      CHECK((pose.joints.row(j).transpose() - peaks[j]).norm() < 1e-9);
      CHECK(pose.confidence[j] > 0.99);
    }

    // Shifting grid and proposal by whole voxels shifts the result.
    FeatureVolume moved = fv;
    const Eigen::Vector3d shift(0.3, -0.7, 0.2);
    moved.grid.origin += shift;
    for (auto &c : moved.channels) c.grid.origin += shift;
    const auto pose2 = decode_pose(moved, {Eigen::Vector3d(0.0, 0.0, 1.0) + shift, 1.0}, cfg);
    CHECK((pose2.joints - pose.joints).rowwise().operator-(shift.transpose()).cwiseAbs().maxCoeff() < 1e-9);
  }

  SUBCASE("crop clipping at the grid corner") {
    std::vector<ScalarVolume> joints(3, ScalarVolume(g));
    for (auto &v : joints) v.at(0, 0, 0) = 0.5;
    const auto pose = decode_pose(with_occupancy(joints), {g.origin, 0.5}, cfg);
    CHECK(pose.num_joints() == 3);
    for (int j = 0; j < 3; ++j) CHECK((pose.joints.row(j).transpose() - g.cell_center(0, 0, 0)).norm() < 1e-12);
    CHECK_THROWS_AS(decode_pose(with_occupancy(joints), {{10.0, 10.0, 10.0}, 0.5}, cfg), Error);
  }
}

TEST_CASE("propose_persons") {
  FusionConfig cfg;
  VoxelGrid g = VoxelGrid::from_bounds({-2, -2, 0}, {2, 2, 2}, 0.08);
  CHECK(propose_persons(with_occupancy({ScalarVolume(g)}), cfg).empty());
  CHECK_THROWS_AS(propose_persons(FeatureVolume{g, {"joint_00"}, {ScalarVolume(g)}}, cfg), Error);

  auto run = [&](int persons, double separation, std::uint64_t seed) {
    SynthSpec spec;
    spec.seed = seed;
    spec.persons = persons;
    spec.frames = 1;
    spec.min_separation = separation;
    spec.area_radius = 2.0;
    spec.clutter_points = 100;
    const SynthScene scene = synthesize(spec, model());
    const auto hms = testing::frame_heatmaps(scene, 0, 24, cfg);
    const VoxelGrid sg = VoxelGrid::from_bounds(scene.bounds_min, scene.bounds_max, cfg.voxel_size);
    const FeatureVolume fv = fuse(project_heatmaps_to_volume(hms, scene.cameras, sg),
                                  voxelize(scene.frames[0].cloud, sg));
    return std::make_pair(scene, propose_persons(fv, cfg));
  };

  SUBCASE("one person") {
    for (std::uint64_t seed : {1, 2, 3}) {
      const auto [scene, props] = run(1, 1.5, seed);
      REQUIRE(props.size() == 1);
      CHECK((props[0].center - scene.persons[0].joints[0].row(0).transpose()).norm() <= cfg.voxel_size);
      CHECK(props[0].score > cfg.min_score);
      CHECK(props[0].score <= 1.0);
    }
  }

  SUBCASE("two persons 3 m apart") {
    const auto [scene, props] = run(2, 3.0, 4);
    REQUIRE(props.size() == 2);
    for (const auto &p : scene.persons) {
      double best = 1e9;
      for (const auto &q : props) best = std::min(best, (q.center - p.joints[0].row(0).transpose()).norm());
      CHECK(best < cfg.voxel_size);
    }
    CHECK(props[0].score >= props[1].score);

    FusionConfig one = cfg;
    one.max_people = 1;
    const VoxelGrid sg = VoxelGrid::from_bounds(scene.bounds_min, scene.bounds_max, cfg.voxel_size);
    const FeatureVolume fv = fuse(project_heatmaps_to_volume(testing::frame_heatmaps(scene, 0, 24, cfg),
                                                             scene.cameras, sg),
                                  voxelize(scene.frames[0].cloud, sg));
    CHECK(propose_persons(fv, one).size() == 1);
  }
}

TEST_CASE("fuse_and_decode on a known skeleton with two cameras") {
  FusionConfig cfg;
  std::mt19937_64 rng(21);
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (int trial = 0; trial < 3; ++trial) {
    Eigen::VectorXd beta(10), theta = Eigen::VectorXd::Zero(72);
    for (int k = 0; k < 10; ++k) beta[k] = 0.5 * gauss(rng);
    for (int k = 3; k < 72; ++k) theta[k] = 0.2 * gauss(rng);
    theta[2] = gauss(rng);
    const Eigen::Vector3d root(0.3 * gauss(rng), 0.3 * gauss(rng), 0.93);
    const PosedBody body = forward(model(), beta, theta, root);
    const auto cams = testing::two_camera_rig({0.0, 0.0, 1.0});
    std::vector<Heatmap2D> hms;
    for (const auto &cam : cams)
      hms.push_back(render_heatmap(cam, {testing::exact_pose(cam, body.joints)}, 24, cfg.heatmap_stride,
                                   cfg.heatmap_sigma));
    PointCloud cloud;
    for (int i = 0; i < body.vertices.rows(); ++i) cloud.points.push_back(body.vertices.row(i).transpose());

    const auto out = fuse_and_decode(hms, cams, cloud, {-2.0, -2.0, -0.2}, {2.0, 2.0, 2.2}, cfg);
    REQUIRE(out.size() == 1);
    const double worst = (out[0].pose.joints - body.joints).rowwise().norm().maxCoeff();
    CHECK(worst < cfg.voxel_size / 2);
  }
}

TEST_CASE("fusion config json") {
  FusionConfig c;
  c.reduction = HeatmapReduction::kMax;
  c.occupancy.mode = OccupancyMode::kDensity;
  c.nms_radius = 0.5;
  const FusionConfig back = fusion_config_from_json(fusion_config_to_json(c));
  CHECK(fusion_config_to_json(back) == fusion_config_to_json(c));
  CHECK_THROWS_AS(fusion_config_from_json({{"voxel", 0.1}}), Error);
  CHECK_THROWS_AS(fusion_config_from_json({{"voxel_size", -0.1}}), Error);
  CHECK_THROWS_AS(fusion_config_from_json({{"reduction", "median"}}), Error);
}
