#pragma once

// Scene builders shared by the unit tests and the acceptance runner.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "mmfit/fusion.hpp"
#include "mmfit/synth.hpp"

namespace mmfit::testing {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  TempDir() {
    std::string tmpl = (std::filesystem::temp_directory_path() / "mmfit-XXXXXX").string();
    if (!mkdtemp(tmpl.data())) throw std::runtime_error("mkdtemp failed");
    path_ = tmpl;
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir &) = delete;
  TempDir &operator=(const TempDir &) = delete;
  const std::filesystem::path &path() const { return path_; }
  std::filesystem::path operator/(const std::string &name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline std::string read_bytes(const std::filesystem::path &p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

/// Relative path -> contents of every regular file below `root`.
inline std::map<std::string, std::string> tree_bytes(const std::filesystem::path &root) {
  std::map<std::string, std::string> out;
  for (const auto &e : std::filesystem::recursive_directory_iterator(root))
    if (e.is_regular_file()) out[std::filesystem::relative(e.path(), root).generic_string()] = read_bytes(e.path());
  return out;
}

/// Heatmaps of every camera for one synthetic frame, rendered from the
/// frame's 2D poses.
inline std::vector<Heatmap2D> frame_heatmaps(const SynthScene &scene, int frame, int joints,
                                             const FusionConfig &config) {
  std::vector<Heatmap2D> out;
  for (std::size_t c = 0; c < scene.cameras.size(); ++c) {
    std::vector<CameraPose2D> poses;
    for (const auto &p : scene.frames[frame].poses[c]) poses.push_back(p.pose);
    out.push_back(render_heatmap(scene.cameras[c], poses, joints, config.heatmap_stride,
                                 config.heatmap_sigma));
  }
  return out;
}

/// Two cameras 90 degrees apart looking at `target` from 6 m.
inline std::vector<CameraModel> two_camera_rig(const Eigen::Vector3d &target) {
  std::vector<CameraModel> cams;
  for (int c = 0; c < 2; ++c) {
    const double az = 0.4 + 0.5 * M_PI * c;
    CameraModel cam;
    cam.id = "cam" + std::to_string(c);
    cam.intrinsics = {1000.0, 1000.0, 960.0, 540.0, 1920, 1080};
    cam.extrinsics = CameraExtrinsics::look_at(
        target + Eigen::Vector3d(6.0 * std::cos(az), 6.0 * std::sin(az), 1.2), target);
    cams.push_back(cam);
  }
  return cams;
}

/// 2D poses holding the exact projections of `joints` in `camera`.
inline CameraPose2D exact_pose(const CameraModel &camera, const Points3 &joints) {
  CameraPose2D pose;
  pose.camera_id = camera.id;
  pose.keypoints = Points2::Zero(joints.rows(), 2);
  pose.confidence.assign(joints.rows(), 0.0);
  for (int j = 0; j < joints.rows(); ++j) {
    if (const auto px = project(camera, joints.row(j).transpose())) {
      pose.keypoints.row(j) = px->transpose();
      pose.confidence[j] = 1.0;
    }
  }
  return pose;
}

}  // namespace mmfit::testing
