#include <doctest.h>

#include <algorithm>
#include <random>

#include "mmfit/calibration.hpp"
#include "mmfit/error.hpp"
#include "mmfit/rotation.hpp"

using namespace mmfit;

namespace {

struct Rig {
  CameraModel camera;
  CorrespondenceSet set;
};

// Camera 6-12 m from a scene of scattered points, looking roughly at it.
Rig random_rig(std::uint64_t seed, int n, double pixel_noise = 0.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::normal_distribution<double> noise(0.0, pixel_noise);
  Rig rig;
  rig.camera.id = "cam";
  rig.camera.intrinsics = {1000.0, 1000.0, 960.0, 540.0, 1920, 1080};
  const double az = M_PI * u(rng);
  const double dist = 9.0 + 3.0 * u(rng);
  const Eigen::Vector3d eye(dist * std::cos(az), dist * std::sin(az), 3.0 + u(rng));
  const Eigen::Vector3d target(0.3 * u(rng), 0.3 * u(rng), 0.8 + 0.2 * u(rng));
  rig.camera.extrinsics = CameraExtrinsics::look_at(eye, target);
  // Small roll.
  rig.camera.extrinsics.rotation =
      axis_angle_to_matrix(Eigen::Vector3d(0, 0, 0.1 * u(rng))) * rig.camera.extrinsics.rotation;
  rig.camera.extrinsics.translation =
      -rig.camera.extrinsics.rotation * eye;
  rig.set.camera_id = "cam";
  while (static_cast<int>(rig.set.pairs.size()) < n) {
    const Eigen::Vector3d p(3.0 * u(rng), 3.0 * u(rng), 1.0 + u(rng));
    auto px = project(rig.camera, p);
    if (!px || px->x() < 0 || px->y() < 0 || px->x() >= 1920 || px->y() >= 1080) continue;
    if (pixel_noise > 0) *px += Eigen::Vector2d(noise(rng), noise(rng));
    rig.set.pairs.push_back({p, *px});
  }
  return rig;
}

}  // namespace

TEST_CASE("coplanarity_score") {
  const std::vector<Eigen::Vector3d> square = {{0, 0, 0}, {1, 0, 0}, {1, 1, 0}, {0, 1, 0}};
  CHECK(coplanarity_score(square) == 0.0);
  const std::vector<Eigen::Vector3d> line = {{0, 0, 0}, {1, 1, 1}, {2, 2, 2}, {3, 3, 3}};
  CHECK(coplanarity_score(line) == 0.0);
  // Regular tetrahedron: centered vertices have a scatter matrix
  // proportional to the identity, so the singular values are equal.
  const std::vector<Eigen::Vector3d> tetra = {{1, 1, 1}, {1, -1, -1}, {-1, 1, -1}, {-1, -1, 1}};
  CHECK(coplanarity_score(tetra) == doctest::Approx(1.0));
  // Unit corner tetrahedron: the centered scatter matrix is I - ones/4 with
  // eigenvalues 1/4, 1, 1, so the singular value ratio is 1/2.
  const std::vector<Eigen::Vector3d> unit = {{0, 0, 0}, {1, 0, 0}, {0, 1, 0}, {0, 0, 1}};
  CHECK(coplanarity_score(unit) == doctest::Approx(0.5));
  CHECK(coplanarity_score(unit) > 0.1);
  CHECK_THROWS_AS(coplanarity_score(std::vector<Eigen::Vector3d>(square.begin(), square.begin() + 3)), Error);
}

TEST_CASE("reprojection_rmse") {
  auto rig = random_rig(1, 10);
  CHECK(reprojection_rmse(rig.camera, rig.set) < 1e-9);
  for (auto &p : rig.set.pairs) p.pixel += Eigen::Vector2d(3.0, 4.0);
  CHECK(reprojection_rmse(rig.camera, rig.set) == doctest::Approx(5.0));

  auto behind = random_rig(2, 10);
  behind.set.pairs[0].world = behind.camera.extrinsics.camera_center() -
                              3.0 * behind.camera.extrinsics.rotation.row(2).transpose();
  CHECK(reprojection_rmse(behind.camera, behind.set, 1e4) >= 1e4 / std::sqrt(10.0));
  CHECK_THROWS_AS(reprojection_rmse(rig.camera, CorrespondenceSet{}), Error);
}

TEST_CASE("calibration objective gradient matches finite differences") {
  const auto rig = random_rig(3, 15);
  CalibrationConfig cfg;
  Eigen::VectorXd x(6);
  x << 0.3, -0.2, 1.0, 0.5, 0.2, 8.0;
  Eigen::VectorXd g;
  calibration_objective(rig.camera.intrinsics, rig.set, cfg, x, &g);
  for (int k = 0; k < 6; ++k) {
    Eigen::VectorXd xp = x, xm = x;
    const double h = 1e-6;
    xp[k] += h;
    xm[k] -= h;
    const double fd = (calibration_objective(rig.camera.intrinsics, rig.set, cfg, xp, nullptr) -
                       calibration_objective(rig.camera.intrinsics, rig.set, cfg, xm, nullptr)) /
                      (2 * h);
    CHECK(std::abs(fd - g[k]) <= 1e-5 * std::max(1.0, std::abs(fd)));
  }
}

TEST_CASE("fit_extrinsics recovers a synthetic pose") {
  const auto rig = random_rig(4, 20);
  const auto res = fit_extrinsics(rig.camera.intrinsics, rig.set);
  CHECK(res.within_tolerance);
  CHECK(res.rmse < 1e-3);
  CHECK(rotation_angle_between(res.extrinsics.rotation, rig.camera.extrinsics.rotation) * 180.0 / M_PI < 0.1);
  CHECK((res.extrinsics.camera_center() - rig.camera.extrinsics.camera_center()).norm() < 0.01);
  CHECK(res.start_rmse.size() == 8);
  CHECK(res.warnings.empty());
}

TEST_CASE("fit_extrinsics at the optimum stays put") {
  const auto rig = random_rig(5, 20);
  const auto res = fit_extrinsics(rig.camera.intrinsics, rig.set, rig.camera.extrinsics);
  CHECK(res.rmse < 1e-9);
  CHECK((res.extrinsics.rotation - rig.camera.extrinsics.rotation).cwiseAbs().maxCoeff() < 1e-9);
  CHECK((res.extrinsics.translation - rig.camera.extrinsics.translation).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("fit_extrinsics is invariant to pair order") {
  auto rig = random_rig(6, 20, 0.5);
  const auto a = fit_extrinsics(rig.camera.intrinsics, rig.set);
  std::mt19937_64 rng(1);
  std::shuffle(rig.set.pairs.begin(), rig.set.pairs.end(), rng);
  const auto b = fit_extrinsics(rig.camera.intrinsics, rig.set);
  CHECK(rotation_angle_between(a.extrinsics.rotation, b.extrinsics.rotation) < 1e-6);
  CHECK((a.extrinsics.translation - b.extrinsics.translation).norm() < 1e-6);
}

TEST_CASE("fit_extrinsics error paths") {
  const auto rig = random_rig(7, 20);
  CHECK_THROWS_AS(fit_extrinsics(rig.camera.intrinsics, CorrespondenceSet{}), Error);
  auto bad = rig.set;
  bad.pairs[0].world.x() = std::nan("");
  CHECK_THROWS_AS(fit_extrinsics(rig.camera.intrinsics, bad), Error);

  // Coplanar set: warning by default, rejection when configured.
  CorrespondenceSet planar = rig.set;
  for (auto &p : planar.pairs) {
    p.world.z() = 0.0;
    p.pixel = *project(rig.camera, p.world);
  }
  const auto warned = fit_extrinsics(rig.camera.intrinsics, planar);
  CHECK_FALSE(warned.warnings.empty());
  CalibrationConfig strict;
  strict.reject_coplanar = true;
  CHECK_THROWS_AS(fit_extrinsics(rig.camera.intrinsics, planar, std::nullopt, strict), Error);
}

TEST_CASE("noisy correspondences: residual and pose error bounded") {
  const double sigma = 0.5;
  int pass = 0;
  for (int seed = 0; seed < 20; ++seed) {
    const auto rig = random_rig(100 + seed, 30, sigma);
    const auto res = fit_extrinsics(rig.camera.intrinsics, rig.set);
    const double rot_deg =
        rotation_angle_between(res.extrinsics.rotation, rig.camera.extrinsics.rotation) * 180.0 / M_PI;
    const double trans = (res.extrinsics.camera_center() - rig.camera.extrinsics.camera_center()).norm();
    // sigma is per image axis; compare against the per-axis residual RMS.
    const double per_axis_rmse = res.rmse / std::sqrt(2.0);
    if (per_axis_rmse <= 1.5 * sigma && rot_deg <= 0.5 && trans <= 0.05) ++pass;
  }
  CHECK(pass >= 18);
}

TEST_CASE("gradient descent never increases the residual") {
  const auto rig = random_rig(8, 20);
  CalibrationConfig cfg;
  const auto seeds = calibration_seeds(rig.camera.intrinsics, rig.set, 8);
  Eigen::VectorXd x0(6);
  x0.head<3>() = matrix_to_axis_angle(seeds[0].rotation);
  x0.tail<3>() = seeds[0].translation;
  GradientDescentOptions opt;
  opt.max_iterations = 2000;
  opt.initial_step = 1e-8;
  const auto run = minimize_gradient_descent(
      [&](const Eigen::VectorXd &x, Eigen::VectorXd *g) {
        return calibration_objective(rig.camera.intrinsics, rig.set, cfg, x, g);
      },
      x0, opt);
  for (std::size_t i = 1; i < run.trace.size(); ++i) CHECK(run.trace[i] <= run.trace[i - 1]);
}
