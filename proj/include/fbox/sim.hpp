#pragma once

#include "fbox/types.hpp"

#include <cstdint>
#include <optional>
#include <vector>

namespace fbox::sim {

// Spinning-scanner model: one ray per (elevation, azimuth) pair from a sensor
// at (0, 0, sensor_height). Range noise is Gaussian along the ray, truncated
// at 3 sigma so labeled points stay within 3 sigma of their box.
struct LidarSpec {
  std::vector<double> beam_elevations;  // radians; leave empty for the default 64-beam set
  double azimuth_step = 0.2 * M_PI / 180.0;
  double max_range = 120.0;
  double range_sigma = 0.01;
  double sensor_height = 1.73;
};

// 64 beams uniformly spaced in [-24.8 deg, +2 deg].
std::vector<double> default_beam_elevations();
LidarSpec default_lidar();

struct SimObject {
  BoxParams box;
  int class_id = 0;
  Structure structure = Structure::SS;
  int cs_parts = 12;             // CS only: number of interior scatter cuboids
  double cs_part_fraction = 0.15;  // CS only: part size as a fraction of box dims
};

struct SceneSpec {
  std::vector<SimObject> objects;
  bool ground_plane = true;
  std::uint64_t seed = 0;
};

struct SimOutput {
  PointCloud cloud;
  std::vector<int> instance_ids;  // per point; 0 = ground, k>0 = objects[k-1]
  std::vector<BoxParams> gt_boxes;
  std::vector<int> gt_classes;
  std::vector<Structure> gt_structures;

  // Points labeled with the given instance id.
  PointCloud instance_points(int instance) const;
};

// Slab test in the box-local frame; smallest positive hit distance, or
// nothing on a miss.
std::optional<double> ray_cuboid_intersect(const Vec3& origin, const Vec3& direction,
                                           const BoxParams& box);

// Casts the full scan pattern against the scene. SS objects present their
// cuboid shell; CS objects a seeded union of interior part cuboids. Output is
// deterministic for a given (scene, lidar) including the seed, regardless of
// evaluation order.
SimOutput cast_rays(const SceneSpec& scene, const LidarSpec& lidar);

// Paints each labeled point's nearest pixel, dilates by the given radius, and
// resolves overlaps in favor of the instance with smaller mean depth.
InstanceMaskSet render_masks(const SimOutput& sim, const CameraCalibration& calib,
                             int dilation_px);

}  // namespace fbox::sim
