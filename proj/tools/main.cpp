#include "fbox/box_search.hpp"
#include "fbox/geometry.hpp"
#include "fbox/io.hpp"
#include "fbox/metrics.hpp"
#include "fbox/pipeline.hpp"
#include "fbox/proto.hpp"
#include "fbox/sim.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>
#include <string>

namespace {

using nlohmann::json;

int default_jobs() {
  if (const char* env = std::getenv("FBOX_JOBS")) {
    const int n = std::atoi(env);
    if (n > 0) return n;
  }
  return 1;
}

struct SimulateArgs {
  std::string scene_path;
  std::string out_dir;
  std::int64_t seed = -1;  // <0 keeps the scene file's seed
  int dilation = 1;
};

int run_simulate(const SimulateArgs& args) {
  fbox::io::SceneFile file = fbox::io::read_scene(args.scene_path);
  if (args.seed >= 0) file.scene.seed = static_cast<std::uint64_t>(args.seed);
  std::filesystem::create_directories(args.out_dir);
  const std::filesystem::path out(args.out_dir);

  const fbox::sim::SimOutput sim_out = fbox::sim::cast_rays(file.scene, file.lidar);
  const fbox::InstanceMaskSet masks =
      fbox::sim::render_masks(sim_out, file.camera, args.dilation);

  fbox::io::write_point_cloud(out / "cloud.bin", sim_out.cloud);
  fbox::io::write_masks(out / "masks.imsk", out / "masks.json", masks);
  fbox::io::write_calibration(out / "calib.json", file.camera);
  std::vector<fbox::eval::GroundTruth> gts;
  for (std::size_t i = 0; i < sim_out.gt_boxes.size(); ++i)
    gts.push_back({sim_out.gt_boxes[i], sim_out.gt_classes[i]});
  fbox::io::write_ground_truth(out / "gt_boxes.json", gts, &sim_out.gt_structures);
  std::cout << "simulate: " << sim_out.cloud.size() << " points, "
            << masks.instance_class.size() << " visible instances\n";
  return 0;
}

struct FitArgs {
  std::string cloud, masks, meta, calib, priors, out;
  double lambda1 = 0.2;
  double lambda2 = 0.2;
  int starts = 8;
  double tol = 1e-6;
  int max_iters = 60;
  bool normalize = false;
  int jobs = default_jobs();
};

int run_fit(const FitArgs& args) {
  fbox::FitOptions options;
  options.weights.lambda1 = args.lambda1;
  options.weights.lambda2 = args.lambda2;
  options.weights.normalize_per_point = args.normalize;
  options.config.start_headings = fbox::search::uniform_headings(args.starts);
  options.config.tolerance = args.tol;
  options.config.max_iterations = args.max_iters;
  options.jobs = args.jobs;

  const fbox::PointCloud cloud = fbox::io::read_point_cloud(args.cloud);
  const fbox::InstanceMaskSet masks = fbox::io::read_masks(args.masks, args.meta);
  const fbox::CameraCalibration calib = fbox::io::read_calibration(args.calib);
  const std::vector<fbox::AnchorPrior> priors = fbox::io::read_priors(args.priors);

  const auto records = fbox::fit_instances(cloud, masks, calib, priors, options);
  fbox::io::write_fit_records(args.out, records);
  std::cout << "fit: " << records.size() << " boxes -> " << args.out << "\n";
  return 0;
}

struct LiftArgs {
  std::string cloud, masks, meta, calib, out;
};

int run_lift(const LiftArgs& args) {
  const fbox::PointCloud cloud = fbox::io::read_point_cloud(args.cloud);
  const fbox::InstanceMaskSet masks = fbox::io::read_masks(args.masks, args.meta);
  const fbox::CameraCalibration calib = fbox::io::read_calibration(args.calib);

  const auto lifted = fbox::lift_masks(cloud, masks, calib);
  json j = json::array();
  for (const auto& [instance, points] : lifted) {
    json rec;
    rec["instance"] = instance;
    rec["class"] = masks.instance_class.at(instance);
    rec["score"] = fbox::io::round_sig(masks.instance_score.at(instance));
    json pts = json::array();
    for (const fbox::Vec3& p : points.points)
      pts.push_back({fbox::io::round_sig(p.x()), fbox::io::round_sig(p.y()),
                     fbox::io::round_sig(p.z())});
    rec["points"] = pts;
    j.push_back(rec);
  }
  fbox::io::write_json_file(args.out, j);
  std::cout << "lift: " << lifted.size() << " instances -> " << args.out << "\n";
  return 0;
}

struct ProtoArgs {
  std::string anchors, out_bank, trace;
  double tau = 0.07;
  double lambda = 1.0;
  double lr = 0.1;
  int steps = 500;
  std::uint64_t seed = 0;
  bool maml = false;
};

int run_proto(const ProtoArgs& args) {
  const Eigen::MatrixXd anchors = fbox::io::read_matrix(args.anchors);
  if (anchors.rows() == 0 || anchors.cols() == 0)
    throw std::runtime_error(args.anchors + ": empty anchor matrix");

  std::mt19937_64 rng(args.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  Eigen::MatrixXd bank(anchors.rows(), anchors.cols());
  const double scale = 1.0 / std::sqrt(static_cast<double>(anchors.cols()));
  for (Eigen::Index r = 0; r < bank.rows(); ++r)
    for (Eigen::Index c = 0; c < bank.cols(); ++c) bank(r, c) = scale * gauss(rng);

  std::vector<double> trace;
  if (!args.maml) {
    fbox::proto::TrainConfig config;
    config.learning_rate = args.lr;
    config.steps = args.steps;
    config.tau = args.tau;
    config.lambda = args.lambda;
    config.seed = args.seed;
    auto result = fbox::proto::train_prototypes(std::move(bank), anchors, config);
    bank = std::move(result.bank);
    trace = std::move(result.trace);
  } else {
    // first-order MAML over seeded support/query perturbations of the anchors
    const Eigen::Index rows = bank.rows(), cols = bank.cols();
    auto flatten = [](const Eigen::MatrixXd& m) {
      return Eigen::VectorXd(Eigen::Map<const Eigen::VectorXd>(m.data(), m.size()));
    };
    auto unflatten = [rows, cols](const Eigen::VectorXd& v) {
      return Eigen::MatrixXd(Eigen::Map<const Eigen::MatrixXd>(v.data(), rows, cols));
    };
    auto make_task = [&](const Eigen::MatrixXd& task_anchors) {
      fbox::proto::MetaTask task;
      task.loss = [task_anchors, &args, unflatten](const Eigen::VectorXd& v) {
        return args.lambda * fbox::proto::infonce_loss(task_anchors, unflatten(v), args.tau);
      };
      task.grad = [task_anchors, &args, unflatten, flatten](const Eigen::VectorXd& v) {
        auto g = fbox::proto::infonce_gradients(task_anchors, unflatten(v), args.tau);
        return Eigen::VectorXd(args.lambda * flatten(g.d_bank));
      };
      return task;
    };
    Eigen::VectorXd theta = flatten(bank);
    for (int step = 0; step < args.steps; ++step) {
      auto step_rng = std::mt19937_64(args.seed ^ (0x51EDULL + step));
      Eigen::MatrixXd support = anchors, query = anchors;
      for (Eigen::Index r = 0; r < rows; ++r)
        for (Eigen::Index c = 0; c < cols; ++c) {
          support(r, c) += 0.05 * gauss(step_rng);
          query(r, c) += 0.05 * gauss(step_rng);
        }
      const double loss =
          args.lambda * fbox::proto::infonce_loss(anchors, unflatten(theta), args.tau);
      if (!std::isfinite(loss))
        throw std::runtime_error("proto: loss diverged at step " + std::to_string(step));
      trace.push_back(loss);
      theta = fbox::proto::maml_meta_step(theta, make_task(support), make_task(query), args.lr,
                                          args.lr, /*first_order=*/true);
    }
    trace.push_back(args.lambda * fbox::proto::infonce_loss(anchors, unflatten(theta), args.tau));
    bank = unflatten(theta);
  }

  fbox::io::write_matrix(args.out_bank, bank);
  if (!args.trace.empty()) fbox::io::write_loss_trace_csv(args.trace, trace);
  std::cout << "proto: final loss " << trace.back() << " -> " << args.out_bank << "\n";
  return 0;
}

struct EvalArgs {
  std::string detections, gt, config, out, table;
};

int run_eval(const EvalArgs& args) {
  const auto dets = fbox::io::read_detections(args.detections);
  const auto gts = fbox::io::read_ground_truth(args.gt);
  fbox::eval::EvalConfig config;
  if (!args.config.empty()) config = fbox::io::read_eval_config(args.config);

  const fbox::eval::APReport report = fbox::eval::evaluate(dets, gts, config);
  if (!args.out.empty()) fbox::io::write_report(args.out, report);
  const std::string table = fbox::eval::report_table(report);
  if (!args.table.empty()) std::ofstream(args.table) << table;
  std::cout << table;
  return 0;
}

struct PipelineArgs {
  std::string scene, out_dir;
  std::int64_t seed = -1;
  int dilation = 1;
  double lambda1 = 0.2;
  double lambda2 = 0.2;
  double iou = 0.5;
  int jobs = default_jobs();
};

int run_pipeline_cmd(const PipelineArgs& args) {
  fbox::io::SceneFile file = fbox::io::read_scene(args.scene);
  if (args.seed >= 0) file.scene.seed = static_cast<std::uint64_t>(args.seed);

  fbox::PipelineOptions options;
  options.fit.weights.lambda1 = args.lambda1;
  options.fit.weights.lambda2 = args.lambda2;
  options.fit.jobs = args.jobs;
  options.mask_dilation = args.dilation;
  options.iou_threshold = args.iou;

  const fbox::PipelineResult result = fbox::run_pipeline(file, args.out_dir, options);
  std::cout << fbox::eval::report_table(result.report);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Frustum lifting, physically-aware 3D box fitting, and evaluation"};
  app.require_subcommand(1);

  SimulateArgs sim_args;
  CLI::App* sim_cmd = app.add_subcommand("simulate", "Raycast a scene and write its artifacts");
  sim_cmd->add_option("--scene", sim_args.scene_path, "Scene JSON file")->required();
  sim_cmd->add_option("--out-dir", sim_args.out_dir, "Output directory")->required();
  sim_cmd->add_option("--seed", sim_args.seed, "Override the scene seed");
  sim_cmd->add_option("--dilation", sim_args.dilation, "Mask dilation radius in pixels");

  FitArgs fit_args;
  CLI::App* fit_cmd = app.add_subcommand("fit", "Fit oriented boxes to mask instances");
  fit_cmd->add_option("--cloud", fit_args.cloud, "Point cloud file (.bin or ASCII)")->required();
  fit_cmd->add_option("--masks", fit_args.masks, "Mask label file (IMSK)")->required();
  fit_cmd->add_option("--meta", fit_args.meta, "Mask metadata JSON")->required();
  fit_cmd->add_option("--calib", fit_args.calib, "Calibration JSON")->required();
  fit_cmd->add_option("--priors", fit_args.priors, "Anchor priors JSON")->required();
  fit_cmd->add_option("--out", fit_args.out, "Output detections JSON")->required();
  fit_cmd->add_option("--lambda1", fit_args.lambda1, "Front-viewed distance weight");
  fit_cmd->add_option("--lambda2", fit_args.lambda2, "Bird-viewed center weight");
  fit_cmd->add_option("--starts", fit_args.starts, "Number of start headings");
  fit_cmd->add_option("--tol", fit_args.tol, "Gradient-norm convergence tolerance");
  fit_cmd->add_option("--max-iters", fit_args.max_iters, "BFGS iteration cap");
  fit_cmd->add_flag("--normalize", fit_args.normalize, "Normalize losses per point");
  fit_cmd->add_option("--jobs", fit_args.jobs, "Parallel instance fits (env FBOX_JOBS)");

  LiftArgs lift_args;
  CLI::App* lift_cmd = app.add_subcommand("lift", "Group cloud points by mask instance");
  lift_cmd->add_option("--cloud", lift_args.cloud, "Point cloud file")->required();
  lift_cmd->add_option("--masks", lift_args.masks, "Mask label file (IMSK)")->required();
  lift_cmd->add_option("--meta", lift_args.meta, "Mask metadata JSON")->required();
  lift_cmd->add_option("--calib", lift_args.calib, "Calibration JSON")->required();
  lift_cmd->add_option("--out", lift_args.out, "Output JSON")->required();

  ProtoArgs proto_args;
  CLI::App* proto_cmd = app.add_subcommand("proto", "Train a prototype bank on anchor features");
  proto_cmd->add_option("--anchors", proto_args.anchors, "Anchor feature matrix (binary f32)")
      ->required();
  proto_cmd->add_option("--out-bank", proto_args.out_bank, "Output bank matrix")->required();
  proto_cmd->add_option("--trace", proto_args.trace, "Loss trace CSV");
  proto_cmd->add_option("--tau", proto_args.tau, "InfoNCE temperature");
  proto_cmd->add_option("--lambda", proto_args.lambda, "Contrastive loss weight");
  proto_cmd->add_option("--lr", proto_args.lr, "Learning rate");
  proto_cmd->add_option("--steps", proto_args.steps, "Descent steps");
  proto_cmd->add_option("--seed", proto_args.seed, "Bank initialization seed");
  proto_cmd->add_flag("--maml", proto_args.maml,
                      "Use first-order inner/outer meta-updates on perturbed anchors");

  EvalArgs eval_args;
  CLI::App* eval_cmd = app.add_subcommand("eval", "Match detections and report AP/mAP");
  eval_cmd->add_option("--detections", eval_args.detections, "Detections JSON")->required();
  eval_cmd->add_option("--gt", eval_args.gt, "Ground-truth boxes JSON")->required();
  eval_cmd->add_option("--config", eval_args.config, "Evaluation config JSON");
  eval_cmd->add_option("--out", eval_args.out, "Report JSON");
  eval_cmd->add_option("--table", eval_args.table, "Report text table");

  PipelineArgs pipe_args;
  CLI::App* pipe_cmd = app.add_subcommand("pipeline", "simulate -> fit -> eval in one run");
  pipe_cmd->add_option("--scene", pipe_args.scene, "Scene JSON file")->required();
  pipe_cmd->add_option("--out-dir", pipe_args.out_dir, "Output directory")->required();
  pipe_cmd->add_option("--seed", pipe_args.seed, "Override the scene seed");
  pipe_cmd->add_option("--dilation", pipe_args.dilation, "Mask dilation radius in pixels");
  pipe_cmd->add_option("--lambda1", pipe_args.lambda1, "Front-viewed distance weight");
  pipe_cmd->add_option("--lambda2", pipe_args.lambda2, "Bird-viewed center weight");
  pipe_cmd->add_option("--iou", pipe_args.iou, "Evaluation IoU threshold");
  pipe_cmd->add_option("--jobs", pipe_args.jobs, "Parallel instance fits (env FBOX_JOBS)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;  // usage errors exit 2, --help exits 0
  }

  try {
    if (sim_cmd->parsed()) return run_simulate(sim_args);
    if (fit_cmd->parsed()) return run_fit(fit_args);
    if (lift_cmd->parsed()) return run_lift(lift_args);
    if (proto_cmd->parsed()) return run_proto(proto_args);
    if (eval_cmd->parsed()) return run_eval(eval_args);
    if (pipe_cmd->parsed()) return run_pipeline_cmd(pipe_args);
  } catch (const std::exception& e) {
    nlohmann::json err;
    err["error"] = "domain";
    err["message"] = e.what();
    std::cerr << err.dump() << "\n";
    return 1;
  }
  return 2;
}
