#pragma once

#include "fbox/sim.hpp"
#include "fbox/types.hpp"

#include <cmath>
#include <random>

namespace testutil {

inline fbox::BoxParams box_at(double x, double y, double z, double h, double w, double l,
                              double theta) {
  fbox::BoxParams b;
  b.center = fbox::Vec3(x, y, z);
  b.h = h;
  b.w = w;
  b.l = l;
  b.theta = theta;
  return b;
}

inline fbox::BoxParams car_box(double x, double y, double theta) {
  return box_at(x, y, 0.75, 1.5, 1.8, 4.0, theta);  // sits on the ground plane
}

inline fbox::BoxParams pedestrian_box(double x, double y, double theta) {
  return box_at(x, y, 0.85, 1.7, 0.6, 0.6, theta);
}

inline fbox::BoxParams cyclist_box(double x, double y, double theta) {
  return box_at(x, y, 0.85, 1.7, 0.6, 1.8, theta);
}

// Scan a single object (no ground) and return its labeled points.
inline fbox::PointCloud scan_object(const fbox::BoxParams& box, fbox::Structure structure,
                                    std::uint64_t seed, double sigma = 0.01) {
  fbox::sim::SceneSpec scene;
  scene.ground_plane = false;
  scene.seed = seed;
  fbox::sim::SimObject obj;
  obj.box = box;
  obj.class_id = 0;
  obj.structure = structure;
  scene.objects.push_back(obj);
  fbox::sim::LidarSpec lidar = fbox::sim::default_lidar();
  lidar.range_sigma = sigma;
  return fbox::sim::cast_rays(scene, lidar).instance_points(1);
}

// Random pose at a range sampled inside [r_lo, r_hi], biased into the forward
// camera field of view.
inline fbox::BoxParams random_pose(std::mt19937_64& rng, double r_lo, double r_hi) {
  std::uniform_real_distribution<double> range(r_lo, r_hi);
  std::uniform_real_distribution<double> bearing(-0.6, 0.6);  // radians around +x
  std::uniform_real_distribution<double> heading(0.0, 2.0 * M_PI);
  const double r = range(rng);
  const double b = bearing(rng);
  return {fbox::Vec3(r * std::cos(b), r * std::sin(b), 0.75), 1.5, 1.8, 4.0, heading(rng)};
}

inline double heading_error_mod_pi(double a, double b) {
  double d = std::fmod(std::abs(a - b), M_PI);
  return std::min(d, M_PI - d);
}

}  // namespace testutil
