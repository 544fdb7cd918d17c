#include "mmfit/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "mmfit/error.hpp"
#include "mmfit/rotation.hpp"

namespace mmfit {

Eigen::Matrix3d CameraIntrinsics::matrix() const {
  Eigen::Matrix3d K;
  K << fx, 0.0, cx, 0.0, fy, cy, 0.0, 0.0, 1.0;
  return K;
}

void CameraIntrinsics::validate() const {
  if (!(std::isfinite(fx) && std::isfinite(fy) && std::isfinite(cx) && std::isfinite(cy))) {
    throw Error("camera intrinsics: non-finite value");
  }
  if (!(fx > 0.0 && fy > 0.0)) throw Error("camera intrinsics: focal lengths must be positive");
  if (width < 1 || height < 1) throw Error("camera intrinsics: image size must be >= 1");
  if (cx < 0.0 || cx >= width || cy < 0.0 || cy >= height) {
    throw Error("camera intrinsics: principal point outside the image");
  }
}

CameraExtrinsics CameraExtrinsics::from_axis_angle(const Eigen::Vector3d &aa,
                                                   const Eigen::Vector3d &t) {
  return {axis_angle_to_matrix(aa), t};
}

CameraExtrinsics CameraExtrinsics::look_at(const Eigen::Vector3d &eye,
                                           const Eigen::Vector3d &target,
                                           const Eigen::Vector3d &up) {
  const Eigen::Vector3d forward = (target - eye).normalized();
  Eigen::Vector3d right = forward.cross(up);
  if (right.norm() < 1e-9) right = forward.cross(Eigen::Vector3d::UnitY());
  right.normalize();
  const Eigen::Vector3d down = forward.cross(right);
  CameraExtrinsics e;
  e.rotation.row(0) = right.transpose();
  e.rotation.row(1) = down.transpose();
  e.rotation.row(2) = forward.transpose();
  e.translation = -e.rotation * eye;
  return e;
}

void CameraExtrinsics::validate() const {
  if (!translation.allFinite()) throw Error("camera extrinsics: non-finite translation");
  if (!is_rotation(rotation, 1e-6)) {
    throw Error("camera extrinsics: rotation is not orthonormal with determinant +1");
  }
}

std::optional<Eigen::Vector2d> project(const CameraModel &camera,
                                       const Eigen::Vector3d &point) {
  const Eigen::Vector3d pc = camera.extrinsics.to_camera(point);
  if (!(pc.z() > kMinProjectionDepth)) return std::nullopt;
  const auto &K = camera.intrinsics;
  return Eigen::Vector2d(K.fx * pc.x() / pc.z() + K.cx, K.fy * pc.y() / pc.z() + K.cy);
}

Eigen::Vector3d back_project(const CameraModel &camera, const Eigen::Vector2d &pixel,
                             double depth) {
  const auto &K = camera.intrinsics;
  const Eigen::Vector3d pc((pixel.x() - K.cx) / K.fx * depth,
                           (pixel.y() - K.cy) / K.fy * depth, depth);
  return camera.extrinsics.rotation.transpose() * (pc - camera.extrinsics.translation);
}

void PointCloud::validate() const {
  for (const auto &p : points) {
    if (!p.allFinite()) throw Error("point cloud: non-finite coordinate");
  }
  if (!intensity.empty() && intensity.size() != points.size()) {
    throw Error("point cloud: intensity length differs from point count");
  }
}

std::array<Eigen::Vector3d, 8> BBox3D::corners() const {
  const double c = std::cos(yaw), s = std::sin(yaw);
  std::array<Eigen::Vector3d, 8> out;
  for (int i = 0; i < 8; ++i) {
    const Eigen::Vector3d local(((i & 1) ? 0.5 : -0.5) * size.x(),
                                ((i & 2) ? 0.5 : -0.5) * size.y(),
                                ((i & 4) ? 0.5 : -0.5) * size.z());
    out[i] = center + Eigen::Vector3d(c * local.x() - s * local.y(),
                                      s * local.x() + c * local.y(), local.z());
  }
  return out;
}

bool BBox3D::contains(const Eigen::Vector3d &p) const {
  const Eigen::Vector3d d = p - center;
  const double c = std::cos(yaw), s = std::sin(yaw);
  const double lx = c * d.x() + s * d.y();
  const double ly = -s * d.x() + c * d.y();
  return std::abs(lx) < 0.5 * size.x() && std::abs(ly) < 0.5 * size.y() &&
         std::abs(d.z()) < 0.5 * size.z();
}

void BBox3D::validate() const {
  if (!center.allFinite() || !size.allFinite() || !std::isfinite(yaw)) {
    throw Error("3D box: non-finite value");
  }
  if ((size.array() <= 0.0).any()) throw Error("3D box: size components must be positive");
}

double BBox2D::area() const { return std::max(0.0, width()) * std::max(0.0, height()); }

std::optional<BBox2D> intersect(const BBox2D &a, const BBox2D &b) {
  BBox2D r{a.min.cwiseMax(b.min), a.max.cwiseMin(b.max)};
  if (r.min.x() >= r.max.x() || r.min.y() >= r.max.y()) return std::nullopt;
  return r;
}

std::optional<BBox2D> project_bbox3(const CameraModel &camera, const BBox3D &box) {
  int valid = 0;
  Eigen::Vector2d lo = Eigen::Vector2d::Constant(std::numeric_limits<double>::infinity());
  Eigen::Vector2d hi = -lo;
  for (const auto &corner : box.corners()) {
    if (auto px = project(camera, corner)) {
      ++valid;
      lo = lo.cwiseMin(*px);
      hi = hi.cwiseMax(*px);
    }
  }
  if (valid < 2) return std::nullopt;
  const Eigen::Vector2d img(camera.intrinsics.width, camera.intrinsics.height);
  BBox2D out{lo.cwiseMax(Eigen::Vector2d::Zero()), hi.cwiseMin(img)};
  if (out.area() <= 0.0) return std::nullopt;
  return out;
}

std::vector<std::size_t> points_in_box(const PointCloud &cloud, const BBox3D &box) {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < cloud.points.size(); ++i) {
    if (box.contains(cloud.points[i])) idx.push_back(i);
  }
  return idx;
}

VoxelGrid VoxelGrid::from_bounds(const Eigen::Vector3d &min_corner,
                                 const Eigen::Vector3d &max_corner, double voxel) {
  VoxelGrid g;
  g.origin = min_corner;
  g.voxel_size = Eigen::Vector3d::Constant(voxel);
  for (int a = 0; a < 3; ++a) {
    g.dims[a] = std::max(1, static_cast<int>(std::ceil((max_corner[a] - min_corner[a]) / voxel - 1e-9)));
  }
  return g;
}

VoxelGrid VoxelGrid::centered(const Eigen::Vector3d &center, double extent, double voxel) {
  VoxelGrid g;
  const int n = std::max(1, static_cast<int>(std::lround(extent / voxel)));
  g.dims = Eigen::Vector3i::Constant(n);
  g.voxel_size = Eigen::Vector3d::Constant(voxel);
  g.origin = center - Eigen::Vector3d::Constant(0.5 * n * voxel);
  return g;
}

Eigen::Vector3i VoxelGrid::unravel(std::size_t index) const {
  const auto nx = static_cast<std::size_t>(dims.x());
  const auto ny = static_cast<std::size_t>(dims.y());
  return {static_cast<int>(index % nx), static_cast<int>((index / nx) % ny),
          static_cast<int>(index / (nx * ny))};
}

Eigen::Vector3d VoxelGrid::cell_center(int x, int y, int z) const {
  return origin + (Eigen::Vector3d(x, y, z) + Eigen::Vector3d::Constant(0.5))
                      .cwiseProduct(voxel_size);
}

std::optional<Eigen::Vector3i> VoxelGrid::cell_of(const Eigen::Vector3d &p) const {
  Eigen::Vector3i c;
  for (int a = 0; a < 3; ++a) {
    const double f = std::floor((p[a] - origin[a]) / voxel_size[a]);
    if (!(f >= 0.0 && f < dims[a])) return std::nullopt;
    c[a] = static_cast<int>(f);
  }
  return c;
}

Eigen::Vector3d VoxelGrid::max_corner() const {
  return origin + dims.cast<double>().cwiseProduct(voxel_size);
}

bool VoxelGrid::contains(const Eigen::Vector3d &p) const {
  return (p.array() >= origin.array()).all() && (p.array() <= max_corner().array()).all();
}

bool VoxelGrid::same_layout(const VoxelGrid &other) const {
  return dims == other.dims && origin == other.origin && voxel_size == other.voxel_size;
}

void VoxelGrid::validate() const {
  if (!origin.allFinite() || !voxel_size.allFinite()) throw Error("voxel grid: non-finite value");
  if ((voxel_size.array() <= 0.0).any()) throw Error("voxel grid: voxel size must be positive");
  if ((dims.array() < 1).any()) throw Error("voxel grid: dims must be >= 1");
}

double ScalarVolume::sum() const {
  double s = 0.0;
  for (double v : values) s += v;
  return s;
}

double ScalarVolume::max() const {
  return values.empty() ? 0.0 : *std::max_element(values.begin(), values.end());
}

ScalarVolume voxelize(const PointCloud &cloud, const VoxelGrid &grid,
                      const VoxelizeOptions &options) {
  grid.validate();
  ScalarVolume counts(grid);
  for (const auto &p : cloud.points) {
    if (auto c = grid.cell_of(p)) counts.at(c->x(), c->y(), c->z()) += 1.0;
  }
  for (double &v : counts.values) {
    if (options.mode == OccupancyMode::kBinary) {
      v = v > 0.0 ? 1.0 : 0.0;
    } else {
      v = std::min(v / options.saturation, 1.0);
    }
  }
  return counts;
}

}  // namespace mmfit
