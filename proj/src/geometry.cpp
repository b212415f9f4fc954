#include "fbox/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace fbox {

namespace {

constexpr double kTwoPi = 2.0 * M_PI;

void append_point(PointCloud& dst, const PointCloud& src, std::size_t i, const Vec3& p) {
  dst.points.push_back(p);
  if (src.has_intensity()) dst.intensity.push_back(src.intensity[i]);
}

}  // namespace

const char* structure_name(Structure s) { return s == Structure::SS ? "SS" : "CS"; }

std::optional<Structure> structure_from_name(const std::string& name) {
  std::string key;
  key.reserve(name.size());
  for (char c : name) key.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  if (key == "ss") return Structure::SS;
  if (key == "cs") return Structure::CS;
  static const char* ss_classes[] = {"car",           "truck", "van",  "tram",
                                     "construction_barrel", "bus",   "large_vehicle", "sign"};
  static const char* cs_classes[] = {"pedestrian", "person_sitting", "cyclist",   "bicycle",
                                     "utility_vehicle", "traffic_cone", "motorcycle"};
  for (const char* s : ss_classes)
    if (key == s) return Structure::SS;
  for (const char* s : cs_classes)
    if (key == s) return Structure::CS;
  return std::nullopt;
}

double normalize_heading(double theta) {
  double t = theta - kTwoPi * std::floor(theta / kTwoPi);
  if (t >= kTwoPi) t -= kTwoPi;  // guards the floor rounding edge
  return t;
}

bool box_valid(const BoxParams& box) {
  return box.h > 0.0 && box.w > 0.0 && box.l > 0.0 && box.center.allFinite() &&
         std::isfinite(box.theta);
}

bool calibration_valid(const CameraCalibration& calib) {
  const Eigen::Matrix3d& k = calib.intrinsics;
  if (!(k(0, 0) > 0.0 && k(1, 1) > 0.0)) return false;
  if (k(1, 0) != 0.0 || k(2, 0) != 0.0 || k(2, 1) != 0.0) return false;
  if (calib.width <= 0 || calib.height <= 0) return false;
  Eigen::Matrix3d r = calib.extrinsics.leftCols<3>();
  return (r * r.transpose() - Eigen::Matrix3d::Identity()).norm() < 1e-6;
}

bool InstanceMaskSet::empty() const {
  return std::all_of(labels.begin(), labels.end(), [](std::uint16_t l) { return l == 0; });
}

bool prior_valid(const AnchorPrior& prior) { return prior.h > 0.0 && prior.w > 0.0 && prior.l > 0.0; }

Vec3 world_to_box_local(const Vec3& p, const BoxParams& box) {
  const double c = std::cos(box.theta);
  const double s = std::sin(box.theta);
  const Vec3 d = p - box.center;
  return {c * d.x() + s * d.y(), -s * d.x() + c * d.y(), d.z()};
}

PointCloud world_to_box_local(const PointCloud& cloud, const BoxParams& box) {
  if (!box_valid(box)) throw std::invalid_argument("world_to_box_local: invalid box");
  PointCloud out;
  out.points.reserve(cloud.size());
  if (cloud.has_intensity()) out.intensity.reserve(cloud.size());
  for (std::size_t i = 0; i < cloud.size(); ++i)
    append_point(out, cloud, i, world_to_box_local(cloud.points[i], box));
  return out;
}

Vec3 box_local_to_world(const Vec3& local, const BoxParams& box) {
  const double c = std::cos(box.theta);
  const double s = std::sin(box.theta);
  return box.center + Vec3(c * local.x() - s * local.y(), s * local.x() + c * local.y(), local.z());
}

Projection project_point(const Vec3& p, const CameraCalibration& calib) {
  Eigen::Vector4d ph(p.x(), p.y(), p.z(), 1.0);
  Vec3 cam = calib.extrinsics * ph;
  Projection out;
  out.depth = cam.z();
  if (cam.z() != 0.0) {
    Vec3 pix = calib.intrinsics * cam;
    out.u = pix.x() / cam.z();
    out.v = pix.y() / cam.z();
  }
  out.in_image = out.depth > 0.0 && out.u >= 0.0 && out.u < calib.width && out.v >= 0.0 &&
                 out.v < calib.height;
  return out;
}

std::vector<Projection> project_points(const PointCloud& cloud, const CameraCalibration& calib) {
  if (!calibration_valid(calib)) throw std::invalid_argument("project_points: invalid calibration");
  std::vector<Projection> out;
  out.reserve(cloud.size());
  for (const Vec3& p : cloud.points) out.push_back(project_point(p, calib));
  return out;
}

std::uint16_t mask_label_at(const Vec3& p, const InstanceMaskSet& masks,
                            const CameraCalibration& calib) {
  Projection proj = project_point(p, calib);
  if (proj.depth <= 0.0) return 0;
  const long u = std::llround(proj.u);
  const long v = std::llround(proj.v);
  if (u < 0 || u >= masks.width || v < 0 || v >= masks.height) return 0;
  return masks.at(static_cast<int>(u), static_cast<int>(v));
}

std::map<int, PointCloud> lift_masks(const PointCloud& cloud, const InstanceMaskSet& masks,
                                     const CameraCalibration& calib) {
  if (!calibration_valid(calib)) throw std::invalid_argument("lift_masks: invalid calibration");
  if (masks.width != calib.width || masks.height != calib.height)
    throw std::invalid_argument("lift_masks: mask dimensions do not match calibration");
  std::map<int, PointCloud> out;
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const std::uint16_t label = mask_label_at(cloud.points[i], masks, calib);
    if (label == 0) continue;
    append_point(out[label], cloud, i, cloud.points[i]);
  }
  return out;
}

Eigen::MatrixXd voxel_object_mask(const PointCloud& voxel_centers, const InstanceMaskSet& masks,
                                  const CameraCalibration& calib, int num_classes) {
  for (const auto& [id, cls] : masks.instance_class)
    if (cls >= num_classes || cls < 0)
      throw std::invalid_argument("voxel_object_mask: class id out of range");
  Eigen::MatrixXd m = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(voxel_centers.size()),
                                            num_classes);
  for (std::size_t i = 0; i < voxel_centers.size(); ++i) {
    const std::uint16_t label = mask_label_at(voxel_centers.points[i], masks, calib);
    if (label == 0) continue;
    auto it = masks.instance_class.find(label);
    if (it == masks.instance_class.end())
      throw std::invalid_argument("voxel_object_mask: mask label without class entry");
    m(static_cast<Eigen::Index>(i), it->second) = 1.0;
  }
  return m;
}

PointCloud filter_background(const PointCloud& cloud) {
  if (cloud.size() < 2) return cloud;
  const double n = static_cast<double>(cloud.size());
  Vec3 mean = Vec3::Zero();
  for (const Vec3& p : cloud.points) mean += p;
  mean /= n;
  Vec3 var = Vec3::Zero();
  for (const Vec3& p : cloud.points) var += (p - mean).cwiseProduct(p - mean);
  const Vec3 band = 2.0 * (var / n).cwiseSqrt();

  PointCloud out;
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const Vec3 d = (cloud.points[i] - mean).cwiseAbs();
    if (d.x() <= band.x() && d.y() <= band.y() && d.z() <= band.z())
      append_point(out, cloud, i, cloud.points[i]);
  }
  return out;
}

MeanSizeResult mean_size_prior(const std::vector<std::pair<int, BoxParams>>& boxes,
                               const std::map<int, Structure>& structure_tags) {
  std::map<int, Vec3> sums;
  std::map<int, int> counts;
  for (const auto& [cls, box] : boxes) {
    if (!structure_tags.count(cls))
      throw std::invalid_argument("mean_size_prior: box class " + std::to_string(cls) +
                                  " has no structure tag");
    auto [it, inserted] = sums.try_emplace(cls, Vec3::Zero());
    it->second += Vec3(box.h, box.w, box.l);
    counts[cls] += 1;
  }
  MeanSizeResult result;
  for (const auto& [cls, tag] : structure_tags) {
    auto it = counts.find(cls);
    if (it == counts.end()) {
      result.skipped_classes.push_back(cls);
      continue;
    }
    const Vec3 mean = sums[cls] / static_cast<double>(it->second);
    result.priors.push_back(AnchorPrior{cls, mean.x(), mean.y(), mean.z(), tag});
  }
  return result;
}

}  // namespace fbox
