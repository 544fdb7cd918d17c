#include "mmfit/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>

#include "mmfit/error.hpp"
#include "parallel.hpp"

namespace mmfit {

double mpjpe(const PoseSkeleton3D &pred, const PoseSkeleton3D &gt) {
  if (pred.num_joints() != gt.num_joints()) {
    throw Error("mpjpe: joint count mismatch (" + std::to_string(pred.num_joints()) + " vs " +
                std::to_string(gt.num_joints()) + ")");
  }
  if (gt.num_joints() == 0) throw Error("mpjpe: empty skeleton");
  return (pred.joints - gt.joints).rowwise().norm().mean();
}

Matching match_persons(const std::vector<Prediction> &preds, const std::vector<GroundTruthPerson> &gts,
                       double threshold_mm) {
  const double threshold = threshold_mm / 1000.0;
  std::vector<int> order(preds.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return preds[a].score > preds[b].score; });
  std::vector<bool> taken(gts.size(), false);
  Matching m;
  std::vector<bool> matched_pred(preds.size(), false);
  for (int p : order) {
    int best = -1;
    double best_d = 0.0;
    for (int g = 0; g < static_cast<int>(gts.size()); ++g) {
      if (taken[g]) continue;
      const double d = mpjpe(preds[p].pose, gts[g].pose);
      if (best < 0 || d < best_d || (d == best_d && gts[g].id < gts[best].id)) {
        best = g;
        best_d = d;
      }
    }
    if (best >= 0 && best_d < threshold) {
      taken[best] = true;
      matched_pred[p] = true;
      m.pairs.emplace_back(p, best);
    }
  }
  for (int p = 0; p < static_cast<int>(preds.size()); ++p)
    if (!matched_pred[p]) m.unmatched_preds.push_back(p);
  for (int g = 0; g < static_cast<int>(gts.size()); ++g)
    if (!taken[g]) m.unmatched_gts.push_back(g);
  return m;
}

namespace {

struct FrameResult {
  std::vector<std::vector<bool>> tp;  // per AP threshold, per prediction
  int matched_500 = 0;
  double error_sum_500 = 0.0;
};

constexpr int kRecallThreshold = 500;

}  // namespace

MetricReport evaluate(const std::vector<FrameAnnotations> &frames, int threads) {
  const auto &thresholds = ap_thresholds();
  std::set<int> seen;
  for (const auto &f : frames) {
    if (!seen.insert(f.index).second) throw Error("evaluate: duplicate frame index " + std::to_string(f.index));
  }

  std::vector<FrameResult> results(frames.size());
  detail::parallel_for(0, static_cast<int>(frames.size()), threads, [&](int i) {
    const FrameAnnotations &f = frames[i];
    FrameResult &r = results[i];
    const Matching m500 = match_persons(f.preds, f.gts, kRecallThreshold);
    r.matched_500 = static_cast<int>(m500.pairs.size());
    for (const auto &[p, g] : m500.pairs) r.error_sum_500 += mpjpe(f.preds[p].pose, f.gts[g].pose);
    for (int tau : thresholds) {
      std::vector<bool> tp(f.preds.size(), false);
      for (const auto &[p, g] : match_persons(f.preds, f.gts, tau).pairs) tp[p] = true;
      r.tp.push_back(std::move(tp));
    }
  });

  MetricReport report;
  report.num_frames = static_cast<int>(frames.size());
  int matched = 0;
  double error_sum = 0.0;
  struct Ranked {
    double score;
    int frame;
    int pred;
    std::size_t slot;
  };
  std::vector<Ranked> ranked;
  for (std::size_t i = 0; i < frames.size(); ++i) {
    report.num_gt += static_cast<int>(frames[i].gts.size());
    report.num_pred += static_cast<int>(frames[i].preds.size());
    matched += results[i].matched_500;
    error_sum += results[i].error_sum_500;
    for (int p = 0; p < static_cast<int>(frames[i].preds.size()); ++p) {
      if (!std::isfinite(frames[i].preds[p].score)) throw Error("evaluate: non-finite prediction score");
      ranked.push_back({frames[i].preds[p].score, frames[i].index, p, i});
    }
  }
  std::sort(ranked.begin(), ranked.end(), [](const Ranked &a, const Ranked &b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.frame != b.frame) return a.frame < b.frame;
    return a.pred < b.pred;
  });

  report.counts[kRecallThreshold] = {matched, report.num_pred - matched, report.num_gt - matched};
  if (report.num_gt == 0) {
    report.warnings.push_back("no ground truth persons: recall and AP are undefined and reported as 0");
  } else {
    report.recall_500 = static_cast<double>(matched) / report.num_gt;
  }
  if (matched > 0) {
    report.mpjpe = error_sum / matched;
  } else {
    report.warnings.push_back("no prediction matched within 500 mm: MPJPE reported as 0");
  }

  for (std::size_t k = 0; k < thresholds.size(); ++k) {
    const std::size_t n = ranked.size();
    std::vector<bool> hit(n);
    std::vector<double> precision(n);
    int tp = 0;
    for (std::size_t i = 0; i < n; ++i) {
      hit[i] = results[ranked[i].slot].tp[k][ranked[i].pred];
      tp += hit[i] ? 1 : 0;
      precision[i] = static_cast<double>(tp) / static_cast<double>(i + 1);
    }
    for (std::size_t i = n; i-- > 1;) precision[i - 1] = std::max(precision[i - 1], precision[i]);
    double ap = 0.0;
    if (report.num_gt > 0)
      for (std::size_t i = 0; i < n; ++i)
        if (hit[i]) ap += precision[i];
    report.ap[thresholds[k]] = report.num_gt > 0 ? ap / report.num_gt : 0.0;
    report.counts[thresholds[k]] = {tp, report.num_pred - tp, report.num_gt - tp};
  }
  return report;
}

nlohmann::json to_json(const MetricReport &r) {
  nlohmann::json ap = nlohmann::json::object(), counts = nlohmann::json::object();
  for (const auto &[t, v] : r.ap) ap[std::to_string(t)] = v;
  for (const auto &[t, c] : r.counts) counts[std::to_string(t)] = {{"tp", c.tp}, {"fp", c.fp}, {"fn", c.fn}};
  return {{"mpjpe", r.mpjpe},       {"recall_500", r.recall_500}, {"ap", ap},
          {"counts", counts},       {"num_frames", r.num_frames}, {"num_gt", r.num_gt},
          {"num_pred", r.num_pred}, {"warnings", r.warnings}};
}

MetricReport metric_report_from_json(const nlohmann::json &j) {
  try {
    MetricReport r;
    r.mpjpe = j.at("mpjpe").get<double>();
    r.recall_500 = j.at("recall_500").get<double>();
    for (const auto &[k, v] : j.at("ap").items()) r.ap[std::stoi(k)] = v.get<double>();
    if (j.contains("counts"))
      for (const auto &[k, v] : j.at("counts").items())
        r.counts[std::stoi(k)] = {v.at("tp").get<int>(), v.at("fp").get<int>(), v.at("fn").get<int>()};
    r.num_frames = j.value("num_frames", 0);
    r.num_gt = j.value("num_gt", 0);
    r.num_pred = j.value("num_pred", 0);
    if (j.contains("warnings")) r.warnings = j.at("warnings").get<std::vector<std::string>>();
    return r;
  } catch (const nlohmann::json::exception &e) {
    throw Error(std::string("metric report: ") + e.what());
  } catch (const std::invalid_argument &) {
    throw Error("metric report: threshold keys must be integers");
  }
}

namespace {

const std::vector<std::string> kTableHeader{"Algorithm", "Input Modality", "MPJPE", "Recall",
                                            "AP75",      "AP100",          "AP125", "AP150"};

std::string fixed(double v, int decimals) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", decimals, v);
  return buf;
}

std::string pad(const std::string &s, std::size_t width) {
  return s.size() >= width ? s : s + std::string(width - s.size(), ' ');
}

std::string trim(const std::string &s) {
  const auto b = s.find_first_not_of(' ');
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(' ') - b + 1);
}

double ap_at(const MetricReport &r, int t) {
  const auto it = r.ap.find(t);
  return it == r.ap.end() ? 0.0 : it->second;
}

}  // namespace

std::string format_table(const std::vector<TableRow> &rows) {
  std::vector<std::vector<std::string>> cells{kTableHeader};
  for (const auto &row : rows) {
    std::vector<std::string> line{row.algorithm, row.modality, fixed(row.report.mpjpe, 3),
                                  fixed(100.0 * row.report.recall_500, 2)};
    for (int t : ap_thresholds()) line.push_back(fixed(100.0 * ap_at(row.report, t), 2));
    cells.push_back(std::move(line));
  }
  std::vector<std::size_t> width(kTableHeader.size(), 0);
  for (const auto &line : cells)
    for (std::size_t c = 0; c < line.size(); ++c) width[c] = std::max(width[c], line[c].size() + 2);
  std::string out;
  for (const auto &line : cells) {
    std::string text;
    for (std::size_t c = 0; c < line.size(); ++c) text += pad(line[c], width[c]);
    out += trim(text) + "\n";
  }
  return out;
}

std::vector<TableRow> parse_table(const std::string &text) {
  std::istringstream in(text);
  std::string header;
  if (!std::getline(in, header)) throw Error("table: missing header");
  std::vector<std::size_t> start;
  std::size_t from = 0;
  for (const auto &label : kTableHeader) {
    const auto pos = header.find(label, from);
    if (pos == std::string::npos) throw Error("table: header lacks column '" + label + "'");
    start.push_back(pos);
    from = pos + label.size();
  }
  std::vector<TableRow> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    std::vector<std::string> f;
    for (std::size_t c = 0; c < start.size(); ++c) {
      const std::size_t b = std::min(start[c], line.size());
      const std::size_t e = c + 1 < start.size() ? std::min(start[c + 1], line.size()) : line.size();
      f.push_back(trim(line.substr(b, e - b)));
    }
    TableRow row;
    row.algorithm = f[0];
    row.modality = f[1];
    try {
      row.report.mpjpe = std::stod(f[2]);
      row.report.recall_500 = std::stod(f[3]) / 100.0;
      for (std::size_t k = 0; k < ap_thresholds().size(); ++k)
        row.report.ap[ap_thresholds()[k]] = std::stod(f[4 + k]) / 100.0;
    } catch (const std::exception &) {
      throw Error("table: malformed numeric field in line '" + line + "'");
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

nlohmann::json skeleton_to_json(const PoseSkeleton3D &pose) {
  nlohmann::json joints = nlohmann::json::array();
  for (int j = 0; j < pose.num_joints(); ++j)
    joints.push_back({pose.joints(j, 0), pose.joints(j, 1), pose.joints(j, 2)});
  nlohmann::json out{{"joints", joints}};
  if (!pose.confidence.empty()) out["confidence"] = pose.confidence;
  return out;
}

PoseSkeleton3D skeleton_from_json(const nlohmann::json &j, const std::string &what) {
  if (!j.contains("joints") || !j.at("joints").is_array()) throw Error(what + ": missing 'joints' array");
  const auto &arr = j.at("joints");
  PoseSkeleton3D pose;
  pose.joints = Points3::Zero(static_cast<Eigen::Index>(arr.size()), 3);
  for (std::size_t i = 0; i < arr.size(); ++i) {
    if (!arr[i].is_array() || arr[i].size() != 3) throw Error(what + ": joint " + std::to_string(i) + " is not a 3-vector");
    for (int d = 0; d < 3; ++d) {
      if (!arr[i][d].is_number()) throw Error(what + ": joint " + std::to_string(i) + " is not numeric");
      pose.joints(static_cast<Eigen::Index>(i), d) = arr[i][d].get<double>();
    }
  }
  if (!pose.joints.allFinite()) throw Error(what + ": non-finite joint");
  if (j.contains("confidence")) pose.confidence = j.at("confidence").get<std::vector<double>>();
  return pose;
}

std::vector<FrameAnnotations> load_annotations(const nlohmann::json &gt, const nlohmann::json &pred) {
  std::map<int, FrameAnnotations> by_index;
  auto frames_of = [](const nlohmann::json &doc, const char *what) -> const nlohmann::json & {
    if (!doc.is_object() || !doc.contains("frames") || !doc.at("frames").is_array()) {
      throw Error(std::string(what) + ": missing 'frames' array");
    }
    return doc.at("frames");
  };
  for (const auto &f : frames_of(gt, "ground truth")) {
    const int idx = f.at("idx").get<int>();
    auto &slot = by_index[idx];
    slot.index = idx;
    for (const auto &p : f.at("persons")) {
      const std::string where = "ground truth frame " + std::to_string(idx);
      if (!p.contains("id")) throw Error(where + ": person without 'id'");
      slot.gts.push_back({p.at("id").get<std::string>(), skeleton_from_json(p, where)});
    }
  }
  for (const auto &f : frames_of(pred, "predictions")) {
    const int idx = f.at("idx").get<int>();
    auto &slot = by_index[idx];
    slot.index = idx;
    for (const auto &p : f.at("persons")) {
      Prediction pr;
      pr.pose = skeleton_from_json(p, "prediction frame " + std::to_string(idx));
      pr.score = p.value("score", 1.0);
      slot.preds.push_back(std::move(pr));
    }
  }
  std::vector<FrameAnnotations> out;
  for (auto &[idx, f] : by_index) out.push_back(std::move(f));
  return out;
}

nlohmann::json gt_to_json(const std::vector<FrameAnnotations> &frames) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto &f : frames) {
    nlohmann::json persons = nlohmann::json::array();
    for (const auto &g : f.gts) {
      auto p = skeleton_to_json(g.pose);
      p["id"] = g.id;
      persons.push_back(std::move(p));
    }
    arr.push_back({{"idx", f.index}, {"persons", persons}});
  }
  return {{"frames", arr}};
}

nlohmann::json predictions_to_json(const std::vector<FrameAnnotations> &frames) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto &f : frames) {
    nlohmann::json persons = nlohmann::json::array();
    for (const auto &pr : f.preds) {
      auto p = skeleton_to_json(pr.pose);
      p["score"] = pr.score;
      persons.push_back(std::move(p));
    }
    arr.push_back({{"idx", f.index}, {"persons", persons}});
  }
  return {{"frames", arr}};
}

double covered_area(const BBox2D &subject, const std::vector<BBox2D> &others) {
  std::vector<BBox2D> clipped;
  for (const auto &o : others)
    if (auto c = intersect(subject, o); c && c->area() > 0.0) clipped.push_back(*c);
  if (clipped.empty()) return 0.0;
  std::vector<double> xs, ys;
  for (const auto &c : clipped) {
    xs.insert(xs.end(), {c.min.x(), c.max.x()});
    ys.insert(ys.end(), {c.min.y(), c.max.y()});
  }
  std::sort(xs.begin(), xs.end());
  xs.erase(std::unique(xs.begin(), xs.end()), xs.end());
  std::sort(ys.begin(), ys.end());
  ys.erase(std::unique(ys.begin(), ys.end()), ys.end());
  double area = 0.0;
  for (std::size_t i = 0; i + 1 < xs.size(); ++i)
    for (std::size_t k = 0; k + 1 < ys.size(); ++k) {
      const double mx = 0.5 * (xs[i] + xs[i + 1]), my = 0.5 * (ys[k] + ys[k + 1]);
      const bool inside = std::any_of(clipped.begin(), clipped.end(), [&](const BBox2D &c) {
        return mx > c.min.x() && mx < c.max.x() && my > c.min.y() && my < c.max.y();
      });
      if (inside) area += (xs[i + 1] - xs[i]) * (ys[k + 1] - ys[k]);
    }
  return area;
}

int occluded_view_count(const std::vector<std::optional<ViewBox>> &subject,
                        const std::vector<std::vector<ViewBox>> &others) {
  if (subject.size() != others.size()) throw Error("occluded_view_count: camera count mismatch");
  int count = 0;
  for (std::size_t c = 0; c < subject.size(); ++c) {
    if (!subject[c]) continue;
    const double area = subject[c]->box.area();
    if (!(area > 0.0)) throw Error("occluded_view_count: zero-area subject box in camera " + std::to_string(c));
    std::vector<BBox2D> closer;
    for (const auto &o : others[c])
      if (o.depth < subject[c]->depth) closer.push_back(o.box);
    if (covered_area(subject[c]->box, closer) / area > 0.5) ++count;
  }
  return count;
}

namespace {

struct Accumulator {
  std::vector<double> values;
  Summary summary() const {
    Summary s;
    if (values.empty()) return s;
    s.mean = std::accumulate(values.begin(), values.end(), 0.0) / values.size();
    for (double v : values) s.variance += (v - s.mean) * (v - s.mean);
    s.variance /= values.size();
    return s;
  }
};

nlohmann::json summary_json(const Summary &s) { return {{"mean", s.mean}, {"variance", s.variance}}; }

}  // namespace

SceneStatistics scene_statistics(const StatsScene &scene) {
  if (scene.sensors.empty()) throw Error("scene_statistics: scene has no LiDAR positions");
  Accumulator points, occluded, mean_dist, min_dist;
  const std::size_t C = scene.cameras.size();
  for (const auto &frame : scene.frames) {
    std::vector<std::vector<std::optional<ViewBox>>> views(frame.persons.size(),
                                                           std::vector<std::optional<ViewBox>>(C));
    for (std::size_t p = 0; p < frame.persons.size(); ++p)
      for (std::size_t c = 0; c < C; ++c)
        if (auto box = project_bbox3(scene.cameras[c], frame.persons[p])) {
          views[p][c] = ViewBox{*box, scene.cameras[c].extrinsics.to_camera(frame.persons[p].center).z()};
        }
    for (std::size_t p = 0; p < frame.persons.size(); ++p) {
      const BBox3D &box = frame.persons[p];
      points.values.push_back(static_cast<double>(points_in_box(frame.cloud, box).size()));
      std::vector<std::vector<ViewBox>> others(C);
      for (std::size_t q = 0; q < frame.persons.size(); ++q)
        for (std::size_t c = 0; c < C; ++c)
          if (q != p && views[q][c]) others[c].push_back(*views[q][c]);
      occluded.values.push_back(occluded_view_count(views[p], others));
      double sum = 0.0, lo = std::numeric_limits<double>::infinity();
      for (const auto &s : scene.sensors) {
        const double d = (box.center - s).norm();
        sum += d;
        lo = std::min(lo, d);
      }
      mean_dist.values.push_back(sum / scene.sensors.size());
      min_dist.values.push_back(lo);
    }
  }
  SceneStatistics st;
  st.scene_id = scene.scene_id;
  st.samples = static_cast<int>(points.values.size());
  st.points_per_person = points.summary();
  st.occluded_views = occluded.summary();
  st.mean_lidar_distance = mean_dist.summary();
  st.min_lidar_distance = min_dist.summary();
  return st;
}

nlohmann::json to_json(const SceneStatistics &s) {
  return {{"scene_id", s.scene_id},
          {"samples", s.samples},
          {"points_per_person", summary_json(s.points_per_person)},
          {"occluded_views", summary_json(s.occluded_views)},
          {"mean_lidar_distance", summary_json(s.mean_lidar_distance)},
          {"min_lidar_distance", summary_json(s.min_lidar_distance)}};
}

}  // namespace mmfit
