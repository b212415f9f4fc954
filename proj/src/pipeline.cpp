#include "fbox/pipeline.hpp"

#include "fbox/geometry.hpp"

#include <atomic>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <stdexcept>
#include <thread>

namespace fbox {

std::vector<io::FitRecord> fit_instances(const PointCloud& cloud, const InstanceMaskSet& masks,
                                         const CameraCalibration& calib,
                                         const std::vector<AnchorPrior>& priors,
                                         const FitOptions& options) {
  std::map<int, AnchorPrior> prior_by_class;
  for (const AnchorPrior& p : priors) prior_by_class[p.class_id] = p;

  const std::map<int, PointCloud> lifted = lift_masks(cloud, masks, calib);

  struct Job {
    int instance;
    const PointCloud* points;
    AnchorPrior prior;
    double score;
  };
  std::vector<Job> jobs;
  for (const auto& [instance, points] : lifted) {
    auto cls_it = masks.instance_class.find(instance);
    if (cls_it == masks.instance_class.end()) continue;
    auto prior_it = prior_by_class.find(cls_it->second);
    if (prior_it == prior_by_class.end()) {
      std::cerr << "fit: instance " << instance << " class " << cls_it->second
                << " has no prior, skipped\n";
      continue;
    }
    jobs.push_back({instance, &points, prior_it->second, masks.instance_score.at(instance)});
  }

  std::vector<io::FitRecord> records(jobs.size());
  std::vector<bool> ok(jobs.size(), false);
  std::vector<std::string> errors(jobs.size());

  auto run_job = [&](std::size_t j) {
    const Job& job = jobs[j];
    try {
      const search::SearchResult result =
          search::search_box(*job.points, job.prior, options.weights, options.config);
      io::FitRecord rec;
      rec.instance = job.instance;
      rec.class_id = job.prior.class_id;
      rec.score = job.score;
      rec.box = result.box;
      rec.loss = result.loss;
      rec.converged = result.converged;
      records[j] = rec;
      ok[j] = true;
    } catch (const std::exception& e) {
      errors[j] = e.what();
    }
  };

  const int workers = std::max(1, options.jobs);
  if (workers == 1 || jobs.size() <= 1) {
    for (std::size_t j = 0; j < jobs.size(); ++j) run_job(j);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w)
      pool.emplace_back([&] {
        for (std::size_t j = next.fetch_add(1); j < jobs.size(); j = next.fetch_add(1)) run_job(j);
      });
    for (std::thread& t : pool) t.join();
  }

  std::vector<io::FitRecord> out;
  for (std::size_t j = 0; j < jobs.size(); ++j) {
    if (ok[j])
      out.push_back(records[j]);
    else
      std::cerr << "fit: instance " << jobs[j].instance << " skipped: " << errors[j] << "\n";
  }
  if (out.empty()) throw std::runtime_error("insufficient evidence: no instance could be fitted");
  return out;
}

PipelineResult run_pipeline(const io::SceneFile& scene_file, const std::filesystem::path& out_dir,
                            const PipelineOptions& options) {
  std::filesystem::create_directories(out_dir);

  const sim::SimOutput sim_out = sim::cast_rays(scene_file.scene, scene_file.lidar);
  const InstanceMaskSet masks =
      sim::render_masks(sim_out, scene_file.camera, options.mask_dilation);
  if (masks.empty()) throw std::runtime_error("pipeline: no object visible in the camera");

  // priors from the per-class mean of ground-truth sizes
  std::vector<std::pair<int, BoxParams>> class_boxes;
  std::map<int, Structure> tags;
  for (std::size_t i = 0; i < sim_out.gt_boxes.size(); ++i) {
    class_boxes.emplace_back(sim_out.gt_classes[i], sim_out.gt_boxes[i]);
    tags[sim_out.gt_classes[i]] = sim_out.gt_structures[i];
  }
  const MeanSizeResult priors = mean_size_prior(class_boxes, tags);

  io::write_point_cloud(out_dir / "cloud.bin", sim_out.cloud);
  io::write_masks(out_dir / "masks.imsk", out_dir / "masks.json", masks);
  io::write_calibration(out_dir / "calib.json", scene_file.camera);

  std::vector<eval::GroundTruth> gts;
  for (std::size_t i = 0; i < sim_out.gt_boxes.size(); ++i)
    gts.push_back({sim_out.gt_boxes[i], sim_out.gt_classes[i]});
  io::write_ground_truth(out_dir / "gt_boxes.json", gts, &sim_out.gt_structures);
  io::write_priors(out_dir / "priors.json", priors.priors);

  const std::vector<io::FitRecord> records =
      fit_instances(sim_out.cloud, masks, scene_file.camera, priors.priors, options.fit);
  io::write_fit_records(out_dir / "detections.json", records);

  eval::EvalConfig eval_config;
  eval_config.default_iou_threshold = options.iou_threshold;
  eval_config.interpolation_points = options.interpolation_points;
  eval_config.score_threshold = options.score_threshold;
  for (const auto& [cls, tag] : tags)
    (tag == Structure::SS ? eval_config.common_classes : eval_config.novel_classes).push_back(cls);

  PipelineResult result;
  result.report = eval::evaluate(io::detections_from_fit_records(records), gts, eval_config);
  result.records = records;
  result.ground_truth = gts;
  io::write_report(out_dir / "report.json", result.report);
  std::ofstream(out_dir / "report.txt") << eval::report_table(result.report);
  return result;
}

}  // namespace fbox
