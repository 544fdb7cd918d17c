#include "mmfit/geometry_io.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

#include "mmfit/error.hpp"

namespace mmfit {

namespace {

static_assert(std::endian::native == std::endian::little,
              "binary formats assume a little-endian host");

double number_field(const json &j, const char *key) {
  if (!j.contains(key) || !j.at(key).is_number()) {
    throw Error(std::string("camera json: missing numeric field '") + key + "'");
  }
  return j.at(key).get<double>();
}

}  // namespace

json vec_to_json(const Eigen::Vector3d &v) { return json::array({v.x(), v.y(), v.z()}); }

Eigen::Vector3d vec3_from_json(const json &j, const std::string &what) {
  if (!j.is_array() || j.size() != 3) throw Error(what + ": expected an array of 3 numbers");
  Eigen::Vector3d v;
  for (int i = 0; i < 3; ++i) {
    if (!j[i].is_number()) throw Error(what + ": expected an array of 3 numbers");
    v[i] = j[i].get<double>();
  }
  return v;
}

json camera_to_json(const CameraModel &camera) {
  const auto &K = camera.intrinsics;
  const auto &E = camera.extrinsics;
  json rot = json::array();
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) rot.push_back(E.rotation(r, c));
  return json{{"id", camera.id},         {"fx", K.fx},       {"fy", K.fy},
              {"cx", K.cx},              {"cy", K.cy},       {"width", K.width},
              {"height", K.height},      {"rotation", rot},  {"translation", vec_to_json(E.translation)}};
}

CameraIntrinsics intrinsics_from_json(const json &j) {
  CameraIntrinsics K;
  K.fx = number_field(j, "fx");
  K.fy = number_field(j, "fy");
  K.cx = number_field(j, "cx");
  K.cy = number_field(j, "cy");
  K.width = static_cast<int>(number_field(j, "width"));
  K.height = static_cast<int>(number_field(j, "height"));
  K.validate();
  return K;
}

CameraModel camera_from_json(const json &j) {
  CameraModel cam;
  if (!j.contains("id") || !j.at("id").is_string()) throw Error("camera json: missing string field 'id'");
  cam.id = j.at("id").get<std::string>();
  cam.intrinsics = intrinsics_from_json(j);
  if (j.contains("rotation")) {
    const auto &rot = j.at("rotation");
    if (!rot.is_array() || rot.size() != 9) throw Error("camera json: 'rotation' must hold 9 numbers");
    for (int i = 0; i < 9; ++i) cam.extrinsics.rotation(i / 3, i % 3) = rot[i].get<double>();
  }
  if (j.contains("translation")) {
    cam.extrinsics.translation = vec3_from_json(j.at("translation"), "camera json: 'translation'");
  }
  cam.extrinsics.validate();
  return cam;
}

json read_json_file(const std::filesystem::path &path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error &e) {
    throw Error(path.string() + ": " + e.what());
  }
}

void write_json_file(const std::filesystem::path &path, const json &j) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

CameraModel load_camera(const std::filesystem::path &path) {
  return camera_from_json(read_json_file(path));
}

void save_camera(const std::filesystem::path &path, const CameraModel &camera) {
  write_json_file(path, camera_to_json(camera));
}

PointCloud load_point_cloud(const std::filesystem::path &path) {
  PointCloud cloud;
  const auto ext = path.extension().string();
  if (ext == ".bin") {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open " + path.string());
    std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (bytes.size() % (4 * sizeof(float)) != 0) {
      throw Error(path.string() + ": size is not a multiple of 16 bytes");
    }
    const std::size_t n = bytes.size() / (4 * sizeof(float));
    cloud.points.reserve(n);
    cloud.intensity.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
      float rec[4];
      std::memcpy(rec, bytes.data() + i * sizeof(rec), sizeof(rec));
      cloud.points.emplace_back(rec[0], rec[1], rec[2]);
      cloud.intensity.push_back(rec[3]);
    }
  } else if (ext == ".xyz") {
    std::ifstream in(path);
    if (!in) throw Error("cannot open " + path.string());
    std::string line;
    std::size_t lineno = 0;
    bool any_intensity = false, all_intensity = true;
    while (std::getline(in, line)) {
      ++lineno;
      if (line.find_first_not_of(" \t\r") == std::string::npos || line[0] == '#') continue;
      std::istringstream ss(line);
      double x, y, z, w;
      if (!(ss >> x >> y >> z)) {
        throw Error(path.string() + ":" + std::to_string(lineno) + ": expected 'x y z [intensity]'");
      }
      cloud.points.emplace_back(x, y, z);
      if (ss >> w) {
        any_intensity = true;
        cloud.intensity.push_back(w);
      } else {
        all_intensity = false;
      }
    }
    if (any_intensity && !all_intensity) {
      throw Error(path.string() + ": intensity present on some lines only");
    }
  } else {
    throw Error(path.string() + ": unknown point cloud extension (expected .xyz or .bin)");
  }
  cloud.validate();
  return cloud;
}

void save_point_cloud(const std::filesystem::path &path, const PointCloud &cloud) {
  cloud.validate();
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto ext = path.extension().string();
  if (ext == ".bin") {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path.string());
    for (std::size_t i = 0; i < cloud.size(); ++i) {
      const auto &p = cloud.points[i];
      const float rec[4] = {static_cast<float>(p.x()), static_cast<float>(p.y()),
                            static_cast<float>(p.z()),
                            cloud.intensity.empty() ? 0.0f : static_cast<float>(cloud.intensity[i])};
      out.write(reinterpret_cast<const char *>(rec), sizeof(rec));
    }
  } else if (ext == ".xyz") {
    std::ofstream out(path);
    if (!out) throw Error("cannot write " + path.string());
    out.precision(17);
    for (std::size_t i = 0; i < cloud.size(); ++i) {
      const auto &p = cloud.points[i];
      out << p.x() << ' ' << p.y() << ' ' << p.z();
      if (!cloud.intensity.empty()) out << ' ' << cloud.intensity[i];
      out << '\n';
    }
  } else {
    throw Error(path.string() + ": unknown point cloud extension (expected .xyz or .bin)");
  }
}

}  // namespace mmfit
