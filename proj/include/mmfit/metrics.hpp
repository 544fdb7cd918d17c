#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "mmfit/body_model.hpp"
#include "mmfit/geometry.hpp"

namespace mmfit {

struct GroundTruthPerson {
  std::string id;
  PoseSkeleton3D pose;
};

struct Prediction {
  PoseSkeleton3D pose;
  double score = 1.0;
};

struct FrameAnnotations {
  int index = 0;
  std::vector<GroundTruthPerson> gts;
  std::vector<Prediction> preds;
};

/// Mean Euclidean joint distance in meters, without alignment.
double mpjpe(const PoseSkeleton3D &pred, const PoseSkeleton3D &gt);

struct Matching {
  std::vector<std::pair<int, int>> pairs;  // (prediction, ground truth)
  std::vector<int> unmatched_preds;
  std::vector<int> unmatched_gts;
};

/// Greedy by descending score (ties by prediction order): each prediction
/// takes the nearest unmatched ground truth if its MPJPE is below
/// `threshold_mm`; equal distances go to the smaller GT id.
Matching match_persons(const std::vector<Prediction> &preds, const std::vector<GroundTruthPerson> &gts,
                       double threshold_mm);

struct ThresholdCounts {
  int tp = 0;
  int fp = 0;
  int fn = 0;
};

struct MetricReport {
  double mpjpe = 0.0;      // m, over pairs matched at 500 mm
  double recall_500 = 0.0;  // fraction
  std::map<int, double> ap;  // threshold mm -> fraction
  std::map<int, ThresholdCounts> counts;  // AP thresholds and 500
  int num_frames = 0;
  int num_gt = 0;
  int num_pred = 0;
  std::vector<std::string> warnings;
};

inline const std::vector<int> &ap_thresholds() {
  static const std::vector<int> t{75, 100, 125, 150};
  return t;
}

/// All-point area under the score-ranked precision/recall curve pooled over
/// frames, with precision replaced by its running maximum from the right.
/// Equal scores are ranked by frame index, then prediction order.
MetricReport evaluate(const std::vector<FrameAnnotations> &frames, int threads = 0);

nlohmann::json to_json(const MetricReport &report);
MetricReport metric_report_from_json(const nlohmann::json &j);

/// One line of the comparison table.
struct TableRow {
  std::string algorithm;
  std::string modality;
  MetricReport report;
};

/// Fixed-width table with columns Algorithm, Input Modality, MPJPE (m, 3
/// decimals), Recall, AP75, AP100, AP125, AP150 (percent, 2 decimals).
std::string format_table(const std::vector<TableRow> &rows);
/// Inverse of format_table for the numeric part; names are restored from
/// the fixed-width columns.
std::vector<TableRow> parse_table(const std::string &text);

/// Ground truth file {"frames": [{"idx", "persons": [{"id", "joints"}]}]}
/// and prediction file {"frames": [{"idx", "persons": [{"joints", "score"}]}]},
/// joined on frame index. Frames present in only one file keep an empty
/// list for the other.
std::vector<FrameAnnotations> load_annotations(const nlohmann::json &gt, const nlohmann::json &pred);
nlohmann::json gt_to_json(const std::vector<FrameAnnotations> &frames);
nlohmann::json predictions_to_json(const std::vector<FrameAnnotations> &frames);
nlohmann::json skeleton_to_json(const PoseSkeleton3D &pose);
PoseSkeleton3D skeleton_from_json(const nlohmann::json &j, const std::string &what);

/// A person's 2D box in one camera with the camera-frame depth used for
/// ordering.
struct ViewBox {
  BBox2D box;
  double depth = 0.0;
};

/// Area of `subject` covered by the union of `others`.
double covered_area(const BBox2D &subject, const std::vector<BBox2D> &others);

/// Number of cameras where boxes of strictly closer persons cover more than
/// half of the subject's box. Cameras where the subject is not visible are
/// skipped.
int occluded_view_count(const std::vector<std::optional<ViewBox>> &subject,
                        const std::vector<std::vector<ViewBox>> &others);

struct StatsFrame {
  PointCloud cloud;
  std::vector<BBox3D> persons;
};

struct StatsScene {
  std::string scene_id;
  std::vector<CameraModel> cameras;
  std::vector<Eigen::Vector3d> sensors;
  std::vector<StatsFrame> frames;
};

struct Summary {
  double mean = 0.0;
  double variance = 0.0;  // population
};

struct SceneStatistics {
  std::string scene_id;
  int samples = 0;  // person detections over all frames
  Summary points_per_person;
  Summary occluded_views;
  Summary mean_lidar_distance;
  Summary min_lidar_distance;
};

/// Per person detection: points inside its box, occluded views, mean and
/// minimum distance from the box center to the LiDARs.
SceneStatistics scene_statistics(const StatsScene &scene);
nlohmann::json to_json(const SceneStatistics &stats);

}  // namespace mmfit
