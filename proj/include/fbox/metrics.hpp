#pragma once

#include "fbox/types.hpp"

#include <map>
#include <optional>
#include <string>
#include <vector>

namespace fbox::eval {

struct Detection {
  BoxParams box;
  int class_id = 0;
  double score = 0.0;
};

struct GroundTruth {
  BoxParams box;
  int class_id = 0;
};

struct EvalConfig {
  std::map<int, double> iou_thresholds;  // per class; falls back to default_iou_threshold
  double default_iou_threshold = 0.5;
  double score_threshold = 0.1;
  std::vector<int> common_classes;
  std::vector<int> novel_classes;
  int interpolation_points = 40;

  double iou_threshold_for(int class_id) const;
};

// BEV footprint corners in counter-clockwise order.
std::vector<Vec2> bev_corners(const BoxParams& box);

// Area of the intersection of the two BEV rectangles (convex polygon
// clipping). Near-zero areas from clipping noise clamp to 0.
double bev_intersection_area(const BoxParams& a, const BoxParams& b);

// (BEV intersection x vertical overlap) / union of volumes.
double iou_3d(const BoxParams& a, const BoxParams& b);

struct MatchEntry {
  int det_index = 0;  // index into the input detection list
  int class_id = 0;
  double score = 0.0;
  bool tp = false;
};

struct MatchResult {
  std::vector<MatchEntry> entries;  // grouped by class, descending score
  std::vector<bool> gt_matched;
};

// Greedy per-class matching: detections below the score threshold are
// dropped; in descending score order each detection claims the unmatched
// ground truth of highest IoU when that IoU meets the class threshold.
MatchResult match_detections(const std::vector<Detection>& detections,
                             const std::vector<GroundTruth>& gts, const EvalConfig& config);

// Interpolated average precision: precision sampled at `points` equally
// spaced recall levels. Returns nothing when there are no ground truths and
// no detections (undefined).
std::optional<double> average_precision(std::vector<std::pair<double, bool>> scored_labels,
                                        int num_gt, int points);

struct APReport {
  std::map<int, double> per_class;  // classes with a defined AP
  std::vector<int> skipped_classes;
  std::optional<double> common_map;
  std::optional<double> novel_map;
  std::optional<double> overall_map;
};

APReport map_report(const std::map<int, std::optional<double>>& per_class_ap,
                    const EvalConfig& config);

// match + per-class AP + grouped means in one call.
APReport evaluate(const std::vector<Detection>& detections, const std::vector<GroundTruth>& gts,
                  const EvalConfig& config);

// Aligned-column text rendering of a report.
std::string report_table(const APReport& report);

}  // namespace fbox::eval
