#pragma once

#include "fbox/box_search.hpp"
#include "fbox/metrics.hpp"
#include "fbox/sim.hpp"
#include "fbox/types.hpp"

#include <nlohmann/json_fwd.hpp>

#include <filesystem>
#include <string>
#include <vector>

namespace fbox::io {

// Rounds to 9 significant digits so serialized numbers diff cleanly.
double round_sig(double value, int digits = 9);

// Point clouds: ".bin" is little-endian float32 (x,y,z,intensity) quadruples;
// anything else is ASCII "x y z [i]" per line.
PointCloud read_point_cloud(const std::filesystem::path& path);
void write_point_cloud(const std::filesystem::path& path, const PointCloud& cloud);

// Masks: "IMSK" magic, u32 width, u32 height, then row-major u16 labels.
// The sidecar JSON maps instance ids to class and score.
InstanceMaskSet read_masks(const std::filesystem::path& mask_path,
                           const std::filesystem::path& meta_path);
void write_masks(const std::filesystem::path& mask_path, const std::filesystem::path& meta_path,
                 const InstanceMaskSet& masks);

CameraCalibration read_calibration(const std::filesystem::path& path);
void write_calibration(const std::filesystem::path& path, const CameraCalibration& calib);

std::vector<AnchorPrior> read_priors(const std::filesystem::path& path);
void write_priors(const std::filesystem::path& path, const std::vector<AnchorPrior>& priors);

std::vector<eval::GroundTruth> read_ground_truth(const std::filesystem::path& path);
void write_ground_truth(const std::filesystem::path& path,
                        const std::vector<eval::GroundTruth>& boxes,
                        const std::vector<Structure>* structures = nullptr);

std::vector<eval::Detection> read_detections(const std::filesystem::path& path);

eval::EvalConfig read_eval_config(const std::filesystem::path& path);

nlohmann::json report_to_json(const eval::APReport& report);
void write_report(const std::filesystem::path& path, const eval::APReport& report);

// Dense float matrices: u32 rows, u32 cols, then row-major float32 values.
Eigen::MatrixXd read_matrix(const std::filesystem::path& path);
void write_matrix(const std::filesystem::path& path, const Eigen::MatrixXd& m);

void write_loss_trace_csv(const std::filesystem::path& path, const std::vector<double>& trace);

// Scene description for the simulator; see README for the schema.
struct SceneFile {
  sim::SceneSpec scene;
  sim::LidarSpec lidar;
  CameraCalibration camera;
};

SceneFile read_scene(const std::filesystem::path& path);

// Forward-looking camera co-located with the sensor.
CameraCalibration default_camera(double sensor_height);

// Fit records serialized by the `fit` subcommand.
struct FitRecord {
  int instance = 0;
  int class_id = 0;
  double score = 0.0;
  BoxParams box;
  search::LossBreakdown loss;
  bool converged = false;
};

void write_fit_records(const std::filesystem::path& path, const std::vector<FitRecord>& records);
std::vector<eval::Detection> detections_from_fit_records(const std::vector<FitRecord>& records);

void write_json_file(const std::filesystem::path& path, const nlohmann::json& j);
nlohmann::json read_json_file(const std::filesystem::path& path);

}  // namespace fbox::io
