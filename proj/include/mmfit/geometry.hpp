#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace mmfit {

struct CameraIntrinsics {
  double fx = 1.0;
  double fy = 1.0;
  double cx = 0.0;
  double cy = 0.0;
  int width = 1;
  int height = 1;

  Eigen::Matrix3d matrix() const;
  /// Throws mmfit::Error when an invariant is violated.
  void validate() const;
};

/// World -> camera rigid transform: x_cam = rotation * x_world + translation.
struct CameraExtrinsics {
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();

  static CameraExtrinsics from_axis_angle(const Eigen::Vector3d &aa,
                                          const Eigen::Vector3d &t);
  /// Camera looking from `eye` towards `target`, image y axis pointing
  /// roughly along -up.
  static CameraExtrinsics look_at(const Eigen::Vector3d &eye,
                                  const Eigen::Vector3d &target,
                                  const Eigen::Vector3d &up = Eigen::Vector3d::UnitZ());

  Eigen::Vector3d to_camera(const Eigen::Vector3d &world) const {
    return rotation * world + translation;
  }
  Eigen::Vector3d camera_center() const { return -rotation.transpose() * translation; }
  void validate() const;
};

struct CameraModel {
  std::string id;
  CameraIntrinsics intrinsics;
  CameraExtrinsics extrinsics;
};

/// Depth at or below which a point counts as behind the camera.
inline constexpr double kMinProjectionDepth = 1e-9;

/// Pinhole projection with perspective division. Empty when the point is on
/// or behind the camera plane. Pixels outside the image are still returned.
std::optional<Eigen::Vector2d> project(const CameraModel &camera,
                                       const Eigen::Vector3d &point);

/// Inverse of project for a known camera-frame depth; returns world point.
Eigen::Vector3d back_project(const CameraModel &camera, const Eigen::Vector2d &pixel,
                             double depth);

struct PointCloud {
  std::vector<Eigen::Vector3d> points;
  /// Either empty or one value per point.
  std::vector<double> intensity;

  std::size_t size() const { return points.size(); }
  bool empty() const { return points.empty(); }
  void validate() const;
};

struct BBox3D {
  Eigen::Vector3d center = Eigen::Vector3d::Zero();
  Eigen::Vector3d size = Eigen::Vector3d::Ones();
  /// Rotation about the world z axis (radians).
  double yaw = 0.0;

  std::array<Eigen::Vector3d, 8> corners() const;
  /// Strict interior test in the box frame.
  bool contains(const Eigen::Vector3d &p) const;
  void validate() const;
};

struct BBox2D {
  Eigen::Vector2d min = Eigen::Vector2d::Zero();
  Eigen::Vector2d max = Eigen::Vector2d::Zero();

  double area() const;
  double width() const { return max.x() - min.x(); }
  double height() const { return max.y() - min.y(); }
};

std::optional<BBox2D> intersect(const BBox2D &a, const BBox2D &b);

/// Projects the 8 corners and returns the clipped axis-aligned hull of the
/// valid ones. Empty when fewer than 2 corners project or the clipped area
/// is zero.
std::optional<BBox2D> project_bbox3(const CameraModel &camera, const BBox3D &box);

std::vector<std::size_t> points_in_box(const PointCloud &cloud, const BBox3D &box);

/// Dense axis-aligned grid; `origin` is the minimum corner of cell (0,0,0).
struct VoxelGrid {
  Eigen::Vector3d origin = Eigen::Vector3d::Zero();
  Eigen::Vector3d voxel_size = Eigen::Vector3d::Constant(0.1);
  Eigen::Vector3i dims = Eigen::Vector3i::Ones();

  static VoxelGrid from_bounds(const Eigen::Vector3d &min_corner,
                               const Eigen::Vector3d &max_corner, double voxel);
  /// Cube of side `extent` centered on `center`.
  static VoxelGrid centered(const Eigen::Vector3d &center, double extent, double voxel);

  std::size_t num_cells() const {
    return static_cast<std::size_t>(dims.x()) * dims.y() * dims.z();
  }
  std::size_t linear_index(int x, int y, int z) const {
    return static_cast<std::size_t>(x) +
           static_cast<std::size_t>(dims.x()) *
               (static_cast<std::size_t>(y) + static_cast<std::size_t>(dims.y()) * z);
  }
  Eigen::Vector3i unravel(std::size_t index) const;
  Eigen::Vector3d cell_center(int x, int y, int z) const;
  std::optional<Eigen::Vector3i> cell_of(const Eigen::Vector3d &p) const;
  Eigen::Vector3d max_corner() const;
  bool contains(const Eigen::Vector3d &p) const;
  bool same_layout(const VoxelGrid &other) const;
  void validate() const;
};

/// Scalar field over a VoxelGrid, x fastest.
struct ScalarVolume {
  VoxelGrid grid;
  std::vector<double> values;

  explicit ScalarVolume(VoxelGrid g = {}) : grid(g), values(g.num_cells(), 0.0) {}

  double &at(int x, int y, int z) { return values[grid.linear_index(x, y, z)]; }
  double at(int x, int y, int z) const { return values[grid.linear_index(x, y, z)]; }
  double sum() const;
  double max() const;
};

enum class OccupancyMode { kBinary, kDensity };

struct VoxelizeOptions {
  OccupancyMode mode = OccupancyMode::kBinary;
  /// Point count at which a density cell saturates to 1.
  double saturation = 4.0;
};

ScalarVolume voxelize(const PointCloud &cloud, const VoxelGrid &grid,
                      const VoxelizeOptions &options = {});

}  // namespace mmfit
