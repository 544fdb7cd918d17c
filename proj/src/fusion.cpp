#include "mmfit/fusion.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <numeric>

#include "mmfit/error.hpp"
#include "parallel.hpp"

namespace mmfit {

static_assert(std::endian::native == std::endian::little,
              "binary formats assume a little-endian host");

Heatmap2D Heatmap2D::zeros(std::string camera_id, int joints, const CameraIntrinsics &image,
                           double stride) {
  if (!(stride > 0.0) || !std::isfinite(stride)) throw Error("heatmap: stride must be positive");
  if (joints < 1) throw Error("heatmap: joint count must be >= 1");
  Heatmap2D h;
  h.camera_id = std::move(camera_id);
  h.joints = joints;
  h.stride = stride;
  h.width = static_cast<int>(std::ceil(image.width / stride - 1e-9));
  h.height = static_cast<int>(std::ceil(image.height / stride - 1e-9));
  h.values.assign(static_cast<std::size_t>(joints) * h.width * h.height, 0.0f);
  return h;
}

double Heatmap2D::sample(int j, const Eigen::Vector2d &pixel) const {
  const double hx = std::clamp(pixel.x() / stride, 0.0, width - 1.0);
  const double hy = std::clamp(pixel.y() / stride, 0.0, height - 1.0);
  const int x0 = static_cast<int>(hx), y0 = static_cast<int>(hy);
  const int x1 = std::min(x0 + 1, width - 1), y1 = std::min(y0 + 1, height - 1);
  const double ax = hx - x0, ay = hy - y0;
  const double top = (1.0 - ax) * at(j, y0, x0) + ax * at(j, y0, x1);
  const double bottom = (1.0 - ax) * at(j, y1, x0) + ax * at(j, y1, x1);
  return (1.0 - ay) * top + ay * bottom;
}

void Heatmap2D::validate() const {
  const std::string who = "heatmap '" + camera_id + "': ";
  if (joints < 1 || height < 1 || width < 1) throw Error(who + "dimensions must be >= 1");
  if (!(stride > 0.0) || !std::isfinite(stride)) throw Error(who + "stride must be positive");
  if (values.size() != static_cast<std::size_t>(joints) * height * width) {
    throw Error(who + "value count does not match J*H*W");
  }
  for (float v : values) {
    if (!std::isfinite(v) || v < 0.0f || v > 1.0f) throw Error(who + "values must lie in [0, 1]");
  }
}

void Heatmap2D::check_image(const CameraIntrinsics &image) const {
  const int w = static_cast<int>(std::ceil(image.width / stride - 1e-9));
  const int h = static_cast<int>(std::ceil(image.height / stride - 1e-9));
  if (w != width || h != height) {
    throw Error("heatmap '" + camera_id + "': " + std::to_string(width) + "x" +
                std::to_string(height) + " does not match the image at stride " +
                std::to_string(stride) + " (expected " + std::to_string(w) + "x" +
                std::to_string(h) + ")");
  }
}

namespace {

constexpr char kHeatmapMagic[4] = {'M', 'M', 'H', 'M'};
constexpr std::uint32_t kHeatmapVersion = 1;

template <typename T>
void put(std::ostream &out, T v) {
  out.write(reinterpret_cast<const char *>(&v), sizeof(T));
}

template <typename T>
T get(std::istream &in, const std::filesystem::path &path) {
  T v{};
  if (!in.read(reinterpret_cast<char *>(&v), sizeof(T))) throw Error(path.string() + ": truncated header");
  return v;
}

}  // namespace

Heatmap2D load_heatmap(const std::filesystem::path &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kHeatmapMagic, 4) != 0) {
    throw Error(path.string() + ": not a heatmap file");
  }
  if (get<std::uint32_t>(in, path) != kHeatmapVersion) throw Error(path.string() + ": unsupported version");
  const auto id_len = get<std::uint32_t>(in, path);
  if (id_len > 4096) throw Error(path.string() + ": camera id too long");
  Heatmap2D h;
  h.camera_id.resize(id_len);
  if (!in.read(h.camera_id.data(), id_len)) throw Error(path.string() + ": truncated header");
  const auto J = get<std::uint32_t>(in, path);
  const auto H = get<std::uint32_t>(in, path);
  const auto W = get<std::uint32_t>(in, path);
  h.stride = get<float>(in, path);
  if (J == 0 || H == 0 || W == 0 || J > 1024 || H > 1 << 16 || W > 1 << 16) {
    throw Error(path.string() + ": implausible dimensions");
  }
  h.joints = static_cast<int>(J);
  h.height = static_cast<int>(H);
  h.width = static_cast<int>(W);
  h.values.resize(static_cast<std::size_t>(J) * H * W);
  const auto bytes = static_cast<std::streamsize>(h.values.size() * sizeof(float));
  if (!in.read(reinterpret_cast<char *>(h.values.data()), bytes)) {
    throw Error(path.string() + ": truncated values");
  }
  if (in.peek() != std::char_traits<char>::eof()) throw Error(path.string() + ": trailing bytes");
  h.validate();
  return h;
}

void save_heatmap(const std::filesystem::path &path, const Heatmap2D &heatmap) {
  heatmap.validate();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out.write(kHeatmapMagic, 4);
  put(out, kHeatmapVersion);
  put(out, static_cast<std::uint32_t>(heatmap.camera_id.size()));
  out.write(heatmap.camera_id.data(), static_cast<std::streamsize>(heatmap.camera_id.size()));
  put(out, static_cast<std::uint32_t>(heatmap.joints));
  put(out, static_cast<std::uint32_t>(heatmap.height));
  put(out, static_cast<std::uint32_t>(heatmap.width));
  put(out, static_cast<float>(heatmap.stride));
  out.write(reinterpret_cast<const char *>(heatmap.values.data()),
            static_cast<std::streamsize>(heatmap.values.size() * sizeof(float)));
  if (!out) throw Error("failed writing " + path.string());
}

Heatmap2D render_heatmap(const CameraModel &camera, const std::vector<CameraPose2D> &poses,
                         int joints, double stride, double sigma_px,
                         const std::vector<int> &keypoint_map) {
  if (!(sigma_px > 0.0)) throw Error("render_heatmap: sigma must be positive");
  Heatmap2D h = Heatmap2D::zeros(camera.id, joints, camera.intrinsics, stride);
  const double reach = 3.0 * sigma_px;
  for (const auto &pose : poses) {
    const int K = static_cast<int>(pose.keypoints.rows());
    for (int k = 0; k < K; ++k) {
      int j = k;
      if (!keypoint_map.empty()) j = k < static_cast<int>(keypoint_map.size()) ? keypoint_map[k] : -1;
      if (j < 0 || j >= joints) continue;
      const double conf = k < static_cast<int>(pose.confidence.size()) ? pose.confidence[k] : 0.0;
      if (!(conf > 0.0)) continue;
      const Eigen::Vector2d kp = pose.keypoints.row(k).transpose();
      const int x0 = std::max(0, static_cast<int>(std::floor((kp.x() - reach) / stride)));
      const int x1 = std::min(h.width - 1, static_cast<int>(std::ceil((kp.x() + reach) / stride)));
      const int y0 = std::max(0, static_cast<int>(std::floor((kp.y() - reach) / stride)));
      const int y1 = std::min(h.height - 1, static_cast<int>(std::ceil((kp.y() + reach) / stride)));
      for (int y = y0; y <= y1; ++y)
        for (int x = x0; x <= x1; ++x) {
          const double d2 = (Eigen::Vector2d(x * stride, y * stride) - kp).squaredNorm();
          const auto v = static_cast<float>(std::min(conf, 1.0) * std::exp(-0.5 * d2 / (sigma_px * sigma_px)));
          float &cell = h.at(j, y, x);
          cell = std::max(cell, v);
        }
    }
  }
  return h;
}

int FeatureVolume::channel_index(const std::string &name) const {
  const auto it = std::find(names.begin(), names.end(), name);
  return it == names.end() ? -1 : static_cast<int>(it - names.begin());
}

int FeatureVolume::num_joint_channels() const {
  return num_channels() - (channel_index("occupancy") >= 0 ? 1 : 0);
}

void FusionConfig::validate() const {
  auto positive = [](double v, const char *what) {
    if (!(v > 0.0) || !std::isfinite(v)) throw Error(std::string("fusion config: ") + what + " must be positive");
  };
  positive(voxel_size, "voxel_size");
  positive(nms_radius, "nms_radius");
  positive(crop_size, "crop_size");
  positive(crop_voxel, "crop_voxel");
  positive(heatmap_stride, "heatmap_stride");
  positive(heatmap_sigma, "heatmap_sigma");
  positive(occupancy.saturation, "occupancy_saturation");
  if (!(root_sigma >= 0.0) || !(occupancy_sigma >= 0.0)) throw Error("fusion config: smoothing sigmas must be >= 0");
  if (!(min_score >= 0.0 && min_score <= 1.0)) throw Error("fusion config: min_score must lie in [0, 1]");
  if (max_people < 0) throw Error("fusion config: max_people must be >= 0");
  if (root_joint < 0) throw Error("fusion config: root_joint must be >= 0");
  if (threads < 0) throw Error("fusion config: threads must be >= 0");
}

nlohmann::json fusion_config_to_json(const FusionConfig &c) {
  return {{"voxel_size", c.voxel_size},
          {"reduction", c.reduction == HeatmapReduction::kAverage ? "average" : "max"},
          {"occupancy_mode", c.occupancy.mode == OccupancyMode::kBinary ? "binary" : "density"},
          {"occupancy_saturation", c.occupancy.saturation},
          {"root_joint", c.root_joint},
          {"root_sigma", c.root_sigma},
          {"occupancy_sigma", c.occupancy_sigma},
          {"nms_radius", c.nms_radius},
          {"max_people", c.max_people},
          {"min_score", c.min_score},
          {"crop_size", c.crop_size},
          {"crop_voxel", c.crop_voxel},
          {"heatmap_stride", c.heatmap_stride},
          {"heatmap_sigma", c.heatmap_sigma},
          {"threads", c.threads}};
}

FusionConfig fusion_config_from_json(const nlohmann::json &j) {
  if (!j.is_object()) throw Error("fusion config: expected an object");
  FusionConfig c;
  for (const auto &[key, value] : j.items()) {
    try {
      if (key == "voxel_size") c.voxel_size = value.get<double>();
      else if (key == "reduction") {
        const auto s = value.get<std::string>();
        if (s == "average") c.reduction = HeatmapReduction::kAverage;
        else if (s == "max") c.reduction = HeatmapReduction::kMax;
        else throw Error("fusion config: reduction must be \"average\" or \"max\"");
      } else if (key == "occupancy_mode") {
        const auto s = value.get<std::string>();
        if (s == "binary") c.occupancy.mode = OccupancyMode::kBinary;
        else if (s == "density") c.occupancy.mode = OccupancyMode::kDensity;
        else throw Error("fusion config: occupancy_mode must be \"binary\" or \"density\"");
      } else if (key == "occupancy_saturation") c.occupancy.saturation = value.get<double>();
      else if (key == "root_joint") c.root_joint = value.get<int>();
      else if (key == "root_sigma") c.root_sigma = value.get<double>();
      else if (key == "occupancy_sigma") c.occupancy_sigma = value.get<double>();
      else if (key == "nms_radius") c.nms_radius = value.get<double>();
      else if (key == "max_people") c.max_people = value.get<int>();
      else if (key == "min_score") c.min_score = value.get<double>();
      else if (key == "crop_size") c.crop_size = value.get<double>();
      else if (key == "crop_voxel") c.crop_voxel = value.get<double>();
      else if (key == "heatmap_stride") c.heatmap_stride = value.get<double>();
      else if (key == "heatmap_sigma") c.heatmap_sigma = value.get<double>();
      else if (key == "threads") c.threads = value.get<int>();
      else throw Error("fusion config: unknown key '" + key + "'");
    } catch (const nlohmann::json::exception &) {
      throw Error("fusion config: wrong type for '" + key + "'");
    }
  }
  c.validate();
  return c;
}

void project_heatmaps_to_volume(const std::vector<Heatmap2D> &heatmaps,
                                const std::vector<CameraModel> &cameras, const VoxelGrid &grid,
                                std::vector<ScalarVolume> &out, HeatmapReduction reduction,
                                int threads) {
  grid.validate();
  if (heatmaps.empty()) throw Error("project_heatmaps_to_volume: no heatmaps");
  const int J = heatmaps.front().joints;
  std::vector<const CameraModel *> cams;
  for (const auto &h : heatmaps) {
    h.validate();
    if (h.joints != J) throw Error("project_heatmaps_to_volume: heatmaps disagree on the joint count");
    const auto it = std::find_if(cameras.begin(), cameras.end(),
                                 [&](const CameraModel &c) { return c.id == h.camera_id; });
    if (it == cameras.end()) throw Error("heatmap camera '" + h.camera_id + "' has no calibration");
    h.check_image(it->intrinsics);
    cams.push_back(&*it);
  }
  const bool reuse = static_cast<int>(out.size()) == J &&
                     std::all_of(out.begin(), out.end(), [&](const ScalarVolume &v) {
                       return v.grid.same_layout(grid) && v.values.size() == grid.num_cells();
                     });
  if (!reuse) out.assign(J, ScalarVolume(grid));

  const int C = static_cast<int>(heatmaps.size());
  // Each z slab is written by exactly one worker.
  detail::parallel_for(0, grid.dims.z(), threads, [&](int z) {
    std::vector<double> acc(J);
    for (int y = 0; y < grid.dims.y(); ++y)
      for (int x = 0; x < grid.dims.x(); ++x) {
        const Eigen::Vector3d p = grid.cell_center(x, y, z);
        std::fill(acc.begin(), acc.end(), 0.0);
        int valid = 0;
        for (int c = 0; c < C; ++c) {
          const auto px = project(*cams[c], p);
          const auto &image = cams[c]->intrinsics;
          if (!px || px->x() < 0.0 || px->y() < 0.0 || px->x() >= image.width ||
              px->y() >= image.height) {
            continue;
          }
          ++valid;
          for (int j = 0; j < J; ++j) {
            const double s = heatmaps[c].sample(j, *px);
            acc[j] = reduction == HeatmapReduction::kAverage ? acc[j] + s : std::max(acc[j], s);
          }
        }
        const std::size_t idx = grid.linear_index(x, y, z);
        for (int j = 0; j < J; ++j) {
          double v = 0.0;
          if (valid > 0) v = reduction == HeatmapReduction::kAverage ? acc[j] / valid : acc[j];
          out[j].values[idx] = v;
        }
      }
  });
}

std::vector<ScalarVolume> project_heatmaps_to_volume(const std::vector<Heatmap2D> &heatmaps,
                                                     const std::vector<CameraModel> &cameras,
                                                     const VoxelGrid &grid,
                                                     HeatmapReduction reduction, int threads) {
  std::vector<ScalarVolume> out;
  project_heatmaps_to_volume(heatmaps, cameras, grid, out, reduction, threads);
  return out;
}

FeatureVolume fuse(std::vector<ScalarVolume> joint_volumes, ScalarVolume occupancy) {
  FeatureVolume fv;
  fv.grid = occupancy.grid;
  for (std::size_t j = 0; j < joint_volumes.size(); ++j) {
    if (!joint_volumes[j].grid.same_layout(fv.grid) ||
        joint_volumes[j].values.size() != occupancy.values.size()) {
      throw Error("fuse: joint channel " + std::to_string(j) + " is on a different grid than the occupancy");
    }
    char name[16];
    std::snprintf(name, sizeof(name), "joint_%02zu", j);
    fv.names.emplace_back(name);
    fv.channels.push_back(std::move(joint_volumes[j]));
  }
  fv.names.emplace_back("occupancy");
  fv.channels.push_back(std::move(occupancy));
  return fv;
}

namespace {

// Separable Gaussian blur with zero padding.
ScalarVolume smooth(const ScalarVolume &in, double sigma, int threads) {
  if (!(sigma > 0.0)) return in;
  ScalarVolume cur = in;
  const VoxelGrid &g = in.grid;
  for (int axis = 0; axis < 3; ++axis) {
    const double s = sigma / g.voxel_size[axis];
    const int radius = static_cast<int>(std::ceil(3.0 * s));
    std::vector<double> kernel(2 * radius + 1);
    for (int k = -radius; k <= radius; ++k) kernel[k + radius] = std::exp(-0.5 * k * k / (s * s));
    const double norm = std::accumulate(kernel.begin(), kernel.end(), 0.0);
    for (double &k : kernel) k /= norm;
    ScalarVolume next(g);
    detail::parallel_for(0, g.dims.z(), threads, [&](int z) {
      for (int y = 0; y < g.dims.y(); ++y)
        for (int x = 0; x < g.dims.x(); ++x) {
          Eigen::Vector3i c(x, y, z);
          const int base = c[axis];
          double acc = 0.0;
          for (int k = -radius; k <= radius; ++k) {
            const int q = base + k;
            if (q < 0 || q >= g.dims[axis]) continue;
            c[axis] = q;
            acc += kernel[k + radius] * cur.at(c.x(), c.y(), c.z());
          }
          next.at(x, y, z) = acc;
        }
    });
    cur = std::move(next);
  }
  return cur;
}

// Vertex offset of a parabola through (-1, l), (0, c), (1, r); 0 unless
// the middle sample is a strict interior peak.
double parabolic_offset(double l, double c, double r) {
  const double denom = l - 2.0 * c + r;
  if (!(denom < 0.0)) return 0.0;
  return std::clamp(0.5 * (l - r) / denom, -0.5, 0.5);
}

Eigen::Vector3d refine(const ScalarVolume &v, const Eigen::Vector3i &cell, const Eigen::Vector3i &lo,
                       const Eigen::Vector3i &hi) {
  Eigen::Vector3d offset = Eigen::Vector3d::Zero();
  const double c = v.at(cell.x(), cell.y(), cell.z());
  for (int a = 0; a < 3; ++a) {
    if (cell[a] - 1 < lo[a] || cell[a] + 1 > hi[a]) continue;
    Eigen::Vector3i m = cell, p = cell;
    m[a] -= 1;
    p[a] += 1;
    offset[a] = parabolic_offset(v.at(m.x(), m.y(), m.z()), c, v.at(p.x(), p.y(), p.z()));
  }
  return v.grid.cell_center(cell.x(), cell.y(), cell.z()) + offset.cwiseProduct(v.grid.voxel_size);
}

}  // namespace

std::vector<PersonProposal> propose_persons(const FeatureVolume &volume, const FusionConfig &config) {
  config.validate();
  const int occ_idx = volume.channel_index("occupancy");
  if (occ_idx < 0) throw Error("propose_persons: volume has no occupancy channel");
  if (config.root_joint >= volume.num_joint_channels()) {
    throw Error("propose_persons: root joint " + std::to_string(config.root_joint) + " has no channel");
  }
  const VoxelGrid &g = volume.grid;
  const ScalarVolume root = smooth(volume.channels[config.root_joint], config.root_sigma, config.threads);
  const ScalarVolume occ = smooth(volume.channels[occ_idx], config.occupancy_sigma, config.threads);
  const double occ_max = occ.max();
  if (!(occ_max > 0.0)) return {};

  ScalarVolume score(g);
  for (std::size_t i = 0; i < score.values.size(); ++i) {
    score.values[i] = std::sqrt(std::clamp(root.values[i], 0.0, 1.0) * occ.values[i] / occ_max);
  }

  struct Candidate {
    std::size_t index;
    double score;
  };
  std::vector<Candidate> peaks;
  for (int z = 0; z < g.dims.z(); ++z)
    for (int y = 0; y < g.dims.y(); ++y)
      for (int x = 0; x < g.dims.x(); ++x) {
        const double s = score.at(x, y, z);
        if (!(s > 0.0) || s < config.min_score) continue;
        bool peak = true;
        for (int dz = -1; dz <= 1 && peak; ++dz)
          for (int dy = -1; dy <= 1 && peak; ++dy)
            for (int dx = -1; dx <= 1 && peak; ++dx) {
              const int qx = x + dx, qy = y + dy, qz = z + dz;
              if (qx < 0 || qy < 0 || qz < 0 || qx >= g.dims.x() || qy >= g.dims.y() || qz >= g.dims.z()) continue;
              if (score.at(qx, qy, qz) > s) peak = false;
            }
        if (peak) peaks.push_back({g.linear_index(x, y, z), s});
      }
  std::sort(peaks.begin(), peaks.end(), [](const Candidate &a, const Candidate &b) {
    return a.score != b.score ? a.score > b.score : a.index < b.index;
  });

  const Eigen::Vector3i lo = Eigen::Vector3i::Zero();
  const Eigen::Vector3i hi = g.dims - Eigen::Vector3i::Ones();
  std::vector<PersonProposal> out;
  for (const auto &cand : peaks) {
    if (static_cast<int>(out.size()) >= config.max_people) break;
    const Eigen::Vector3i cell = g.unravel(cand.index);
    const Eigen::Vector3d center = g.cell_center(cell.x(), cell.y(), cell.z());
    const bool suppressed = std::any_of(out.begin(), out.end(), [&](const PersonProposal &p) {
      return (p.center - center).norm() <= config.nms_radius;
    });
    if (suppressed) continue;
    out.push_back({refine(score, cell, lo, hi), cand.score});
  }
  return out;
}

PoseSkeleton3D decode_pose(const FeatureVolume &volume, const PersonProposal &proposal,
                           const FusionConfig &config) {
  config.validate();
  const VoxelGrid &g = volume.grid;
  if (!proposal.center.allFinite()) throw Error("decode_pose: non-finite proposal center");
  Eigen::Vector3i center_cell, lo, hi;
  for (int a = 0; a < 3; ++a) {
    center_cell[a] = static_cast<int>(std::floor((proposal.center[a] - g.origin[a]) / g.voxel_size[a]));
    const int half = static_cast<int>(std::lround(0.5 * config.crop_size / g.voxel_size[a]));
    lo[a] = std::max(0, center_cell[a] - half);
    hi[a] = std::min(g.dims[a] - 1, center_cell[a] + half);
    if (lo[a] > hi[a]) throw Error("decode_pose: crop lies outside the grid");
  }
  const Eigen::Vector3d crop_center = g.cell_center(center_cell.x(), center_cell.y(), center_cell.z());

  const int J = volume.num_joint_channels();
  PoseSkeleton3D pose;
  pose.joints = Points3::Zero(J, 3);
  pose.confidence.assign(J, 0.0);
  for (int j = 0; j < J; ++j) {
    const ScalarVolume &ch = volume.channels[j];
    Eigen::Vector3i best(lo);
    double best_value = -std::numeric_limits<double>::infinity();
    double best_dist = std::numeric_limits<double>::infinity();
    for (int z = lo.z(); z <= hi.z(); ++z)
      for (int y = lo.y(); y <= hi.y(); ++y)
        for (int x = lo.x(); x <= hi.x(); ++x) {
          const double v = ch.at(x, y, z);
          if (v < best_value) continue;
          const double d = (g.cell_center(x, y, z) - crop_center).squaredNorm();
          if (v > best_value || d < best_dist) {
            best_value = v;
            best_dist = d;
            best = {x, y, z};
          }
        }
    pose.joints.row(j) = refine(ch, best, lo, hi).transpose();
    pose.confidence[j] = best_value;
  }
  return pose;
}

VoxelGrid person_grid(const Eigen::Vector3d &center, double extent, double voxel) {
  if (!(extent > 0.0) || !(voxel > 0.0)) throw Error("person_grid: extent and voxel must be positive");
  const int half = static_cast<int>(std::lround(0.5 * extent / voxel));
  VoxelGrid g;
  g.dims = Eigen::Vector3i::Constant(2 * half + 1);
  g.voxel_size = Eigen::Vector3d::Constant(voxel);
  g.origin = center - Eigen::Vector3d::Constant((half + 0.5) * voxel);
  return g;
}

std::vector<DecodedPerson> fuse_and_decode(const std::vector<Heatmap2D> &heatmaps,
                                           const std::vector<CameraModel> &cameras,
                                           const PointCloud &cloud, const Eigen::Vector3d &bounds_min,
                                           const Eigen::Vector3d &bounds_max,
                                           const FusionConfig &config, const PoseDecoder *decoder) {
  config.validate();
  const PeakDecoder fallback(config);
  if (!decoder) decoder = &fallback;
  const VoxelGrid scene = VoxelGrid::from_bounds(bounds_min, bounds_max, config.voxel_size);
  const FeatureVolume volume =
      fuse(project_heatmaps_to_volume(heatmaps, cameras, scene, config.reduction, config.threads),
           voxelize(cloud, scene, config.occupancy));
  std::vector<DecodedPerson> out;
  std::vector<ScalarVolume> buffer;
  for (const auto &proposal : propose_persons(volume, config)) {
    const VoxelGrid local = person_grid(proposal.center, config.crop_size, config.crop_voxel);
    project_heatmaps_to_volume(heatmaps, cameras, local, buffer, config.reduction, config.threads);
    const FeatureVolume fine = fuse(buffer, voxelize(cloud, local, config.occupancy));
    out.push_back({proposal, decoder->decode(fine, proposal)});
  }
  return out;
}

}  // namespace mmfit
