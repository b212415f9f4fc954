#pragma once

#include "fbox/box_search.hpp"
#include "fbox/io.hpp"
#include "fbox/metrics.hpp"
#include "fbox/sim.hpp"
#include "fbox/types.hpp"

#include <filesystem>
#include <vector>

namespace fbox {

struct FitOptions {
  search::LossWeights weights;
  search::SearchConfig config = search::default_search_config();
  int jobs = 1;
};

// Lifts mask instances out of the cloud and searches a box per instance.
// Instances whose class has no prior or with too few points are skipped.
// Output is ordered by instance id regardless of the job count; throws if no
// instance could be fitted.
std::vector<io::FitRecord> fit_instances(const PointCloud& cloud, const InstanceMaskSet& masks,
                                         const CameraCalibration& calib,
                                         const std::vector<AnchorPrior>& priors,
                                         const FitOptions& options);

struct PipelineOptions {
  FitOptions fit;
  int mask_dilation = 1;
  double iou_threshold = 0.5;
  int interpolation_points = 40;
  double score_threshold = 0.1;
};

struct PipelineResult {
  eval::APReport report;
  std::vector<io::FitRecord> records;
  std::vector<eval::GroundTruth> ground_truth;
};

// simulate -> render masks -> lift -> fit -> evaluate, writing every artifact
// into out_dir (cloud.bin, masks.imsk, masks.json, calib.json, gt_boxes.json,
// priors.json, detections.json, report.json, report.txt). Priors come from
// the per-class mean of the scene's ground-truth sizes; report groups SS
// classes as common and CS classes as novel.
PipelineResult run_pipeline(const io::SceneFile& scene_file,
                            const std::filesystem::path& out_dir,
                            const PipelineOptions& options);

}  // namespace fbox
