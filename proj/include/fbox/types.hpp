#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace fbox {

using Vec3 = Eigen::Vector3d;
using Vec2 = Eigen::Vector2d;

// Point set in the sensor frame, meters. Intensity is optional; when present
// it has one entry per point, values in [0,1].
struct PointCloud {
  std::vector<Vec3> points;
  std::vector<float> intensity;

  std::size_t size() const { return points.size(); }
  bool empty() const { return points.empty(); }
  bool has_intensity() const { return intensity.size() == points.size() && !points.empty(); }
};

// Structural category of an object class: SS objects are scanned on their
// sensor-facing faces, CS objects scatter returns across the BEV footprint.
enum class Structure { SS, CS };

const char* structure_name(Structure s);

// Resolves "SS"/"CS" (any case) or a known class name to its structure tag.
std::optional<Structure> structure_from_name(const std::string& name);

// Oriented 3D box: center, sizes (h,w,l) and heading about +z. The length
// axis points along the heading; in box-local coordinates x spans +-l/2,
// y spans +-w/2, z spans +-h/2.
struct BoxParams {
  Vec3 center{0.0, 0.0, 0.0};
  double h = 0.0;
  double w = 0.0;
  double l = 0.0;
  double theta = 0.0;
};

// Wraps an angle into [0, 2*pi).
double normalize_heading(double theta);

bool box_valid(const BoxParams& box);

// Pinhole camera: intrinsics (upper triangular, positive focal lengths) and
// a 3x4 extrinsic matrix mapping sensor-frame points into the camera frame.
struct CameraCalibration {
  Eigen::Matrix3d intrinsics = Eigen::Matrix3d::Identity();
  Eigen::Matrix<double, 3, 4> extrinsics = Eigen::Matrix<double, 3, 4>::Zero();
  int width = 0;
  int height = 0;
};

bool calibration_valid(const CameraCalibration& calib);

// Dense instance labeling of an image: 0 is background, k>0 an instance id.
// Every nonzero id must appear in instance_class and instance_score.
struct InstanceMaskSet {
  int width = 0;
  int height = 0;
  std::vector<std::uint16_t> labels;  // row-major, labels[v*width + u]
  std::map<int, int> instance_class;
  std::map<int, double> instance_score;

  std::uint16_t at(int u, int v) const { return labels[static_cast<std::size_t>(v) * width + u]; }
  bool empty() const;
};

// Per-class box-size prior: the mean (h,w,l) of the few-shot samples plus the
// structural tag that selects which search loss terms apply.
struct AnchorPrior {
  int class_id = 0;
  double h = 0.0;
  double w = 0.0;
  double l = 0.0;
  Structure structure = Structure::SS;
};

bool prior_valid(const AnchorPrior& prior);

}  // namespace fbox
