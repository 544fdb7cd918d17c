#pragma once

#include <filesystem>
#include <string>

#include <json.hpp>

#include "mmfit/geometry.hpp"

namespace mmfit {

using json = nlohmann::json;

/// {id, fx, fy, cx, cy, width, height, rotation: 9 floats row-major,
///  translation: 3 floats}
json camera_to_json(const CameraModel &camera);
CameraModel camera_from_json(const json &j);
CameraIntrinsics intrinsics_from_json(const json &j);

CameraModel load_camera(const std::filesystem::path &path);
void save_camera(const std::filesystem::path &path, const CameraModel &camera);

/// `.xyz`: ASCII "x y z [intensity]" per line. `.bin`: little-endian
/// float32 records of (x, y, z, intensity).
PointCloud load_point_cloud(const std::filesystem::path &path);
void save_point_cloud(const std::filesystem::path &path, const PointCloud &cloud);

json vec_to_json(const Eigen::Vector3d &v);
Eigen::Vector3d vec3_from_json(const json &j, const std::string &what);

json read_json_file(const std::filesystem::path &path);
/// Writes with two-space indentation and a trailing newline.
void write_json_file(const std::filesystem::path &path, const json &j);

}  // namespace mmfit
