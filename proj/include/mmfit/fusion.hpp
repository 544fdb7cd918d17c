#pragma once

#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "mmfit/body_model.hpp"
#include "mmfit/fitting.hpp"
#include "mmfit/geometry.hpp"

namespace mmfit {

/// Per-joint 2D heatmaps of one camera. Sample (x, y) sits at image pixel
/// (x * stride, y * stride), so width = ceil(image width / stride).
struct Heatmap2D {
  std::string camera_id;
  int joints = 0;
  int height = 0;
  int width = 0;
  double stride = 1.0;
  std::vector<float> values;  // joints x height x width, x fastest

  static Heatmap2D zeros(std::string camera_id, int joints, const CameraIntrinsics &image,
                         double stride);

  float &at(int j, int y, int x) { return values[index(j, y, x)]; }
  float at(int j, int y, int x) const { return values[index(j, y, x)]; }
  std::size_t index(int j, int y, int x) const {
    return (static_cast<std::size_t>(j) * height + y) * width + x;
  }
  /// Bilinear sample at an image pixel, clamped to the edge samples. The
  /// caller checks that the pixel lies inside the image.
  double sample(int j, const Eigen::Vector2d &pixel) const;
  void validate() const;
  /// Throws unless the dimensions match `image` after the stride.
  void check_image(const CameraIntrinsics &image) const;
};

/// Binary container: "MMHM", u32 version, u32 id length, id bytes, u32 J,
/// u32 H, u32 W, f32 stride, then J*H*W little-endian float32 values.
Heatmap2D load_heatmap(const std::filesystem::path &path);
void save_heatmap(const std::filesystem::path &path, const Heatmap2D &heatmap);

/// Gaussian heatmaps around 2D keypoints, taking the maximum over persons.
/// Peaks are scaled by keypoint confidence; keypoints that map to -1 or
/// have zero confidence are skipped.
Heatmap2D render_heatmap(const CameraModel &camera, const std::vector<CameraPose2D> &poses,
                         int joints, double stride, double sigma_px,
                         const std::vector<int> &keypoint_map = {});

/// Named scalar channels over one grid. Joint channels come first in joint
/// order, occupancy last.
struct FeatureVolume {
  VoxelGrid grid;
  std::vector<std::string> names;
  std::vector<ScalarVolume> channels;

  int num_channels() const { return static_cast<int>(channels.size()); }
  /// -1 when absent.
  int channel_index(const std::string &name) const;
  int num_joint_channels() const;
};

enum class HeatmapReduction { kAverage, kMax };

struct FusionConfig {
  double voxel_size = 0.08;  // scene grid, m
  HeatmapReduction reduction = HeatmapReduction::kAverage;
  VoxelizeOptions occupancy;
  int root_joint = 0;
  double root_sigma = 0.08;       // m, smoothing of the root channel
  double occupancy_sigma = 0.24;  // m, smoothing of the occupancy channel
  double nms_radius = 0.8;
  int max_people = 10;
  double min_score = 0.3;
  double crop_size = 2.0;    // m, cube around a proposal
  double crop_voxel = 0.04;  // m, per-person grid
  double heatmap_stride = 4.0;
  double heatmap_sigma = 8.0;  // image pixels, when heatmaps are rendered from 2D poses
  int threads = 0;             // 0 = hardware concurrency

  void validate() const;
};

nlohmann::json fusion_config_to_json(const FusionConfig &config);
/// Missing keys keep their defaults; unknown keys are rejected.
FusionConfig fusion_config_from_json(const nlohmann::json &j);

/// Per joint and voxel: bilinear heatmap samples at the projected voxel
/// center, reduced over cameras where the center projects inside the image
/// (0 when there are none). Reuses `out` when it already has the right
/// layout.
void project_heatmaps_to_volume(const std::vector<Heatmap2D> &heatmaps,
                                const std::vector<CameraModel> &cameras, const VoxelGrid &grid,
                                std::vector<ScalarVolume> &out,
                                HeatmapReduction reduction = HeatmapReduction::kAverage,
                                int threads = 0);
std::vector<ScalarVolume> project_heatmaps_to_volume(
    const std::vector<Heatmap2D> &heatmaps, const std::vector<CameraModel> &cameras,
    const VoxelGrid &grid, HeatmapReduction reduction = HeatmapReduction::kAverage,
    int threads = 0);

/// Concatenates channels; values are copied unchanged.
FeatureVolume fuse(std::vector<ScalarVolume> joint_volumes, ScalarVolume occupancy);

struct PersonProposal {
  Eigen::Vector3d center = Eigen::Vector3d::Zero();
  double score = 0.0;
};

/// Score field sqrt(G*root x G*occupancy / max(G*occupancy)); local maxima
/// are refined by a parabolic fit, suppressed greedily within nms_radius,
/// and the best max_people with score >= min_score are returned.
std::vector<PersonProposal> propose_persons(const FeatureVolume &volume, const FusionConfig &config);

/// Peak decoder over the crop_size cube of cells around the proposal's
/// cell. Ties go to the cell nearest the crop center, then to the lowest
/// linear index. Confidence is the channel value at the peak cell.
PoseSkeleton3D decode_pose(const FeatureVolume &volume, const PersonProposal &proposal,
                           const FusionConfig &config);

/// Decoder interface; a learned model can replace the peak decoder.
class PoseDecoder {
 public:
  virtual ~PoseDecoder() = default;
  virtual PoseSkeleton3D decode(const FeatureVolume &volume, const PersonProposal &proposal) const = 0;
};

class PeakDecoder : public PoseDecoder {
 public:
  explicit PeakDecoder(FusionConfig config) : config_(std::move(config)) {}
  PoseSkeleton3D decode(const FeatureVolume &volume, const PersonProposal &proposal) const override {
    return decode_pose(volume, proposal, config_);
  }

 private:
  FusionConfig config_;
};

struct DecodedPerson {
  PersonProposal proposal;
  PoseSkeleton3D pose;
};

/// Scene volume -> proposals -> per-person volume at crop_voxel -> decoder.
std::vector<DecodedPerson> fuse_and_decode(const std::vector<Heatmap2D> &heatmaps,
                                           const std::vector<CameraModel> &cameras,
                                           const PointCloud &cloud, const Eigen::Vector3d &bounds_min,
                                           const Eigen::Vector3d &bounds_max,
                                           const FusionConfig &config,
                                           const PoseDecoder *decoder = nullptr);

/// Cubic grid with an odd number of cells whose central cell is centered
/// on `center`.
VoxelGrid person_grid(const Eigen::Vector3d &center, double extent, double voxel);

}  // namespace mmfit
