#include "fbox/sim.hpp"

#include "fbox/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <stdexcept>

namespace fbox::sim {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Independent stream per (seed, key): rays draw noise in any order and still
// produce identical output.
std::mt19937_64 keyed_rng(std::uint64_t seed, std::uint64_t key) {
  return std::mt19937_64(splitmix64(seed ^ splitmix64(key)));
}

struct LocalFrame {
  Eigen::Matrix3d rot;  // world -> box local
  Vec3 center;
  Vec3 half;
};

LocalFrame make_frame(const BoxParams& box) {
  const double c = std::cos(box.theta);
  const double s = std::sin(box.theta);
  LocalFrame f;
  f.rot << c, s, 0.0, -s, c, 0.0, 0.0, 0.0, 1.0;
  f.center = box.center;
  f.half = Vec3(0.5 * box.l, 0.5 * box.w, 0.5 * box.h);
  return f;
}

std::optional<double> slab_hit(const LocalFrame& f, const Vec3& origin, const Vec3& dir) {
  const Vec3 o = f.rot * (origin - f.center);
  const Vec3 d = f.rot * dir;
  double tmin = -std::numeric_limits<double>::infinity();
  double tmax = std::numeric_limits<double>::infinity();
  for (int a = 0; a < 3; ++a) {
    if (std::abs(d[a]) < 1e-15) {
      if (std::abs(o[a]) > f.half[a]) return std::nullopt;
      continue;
    }
    double t1 = (-f.half[a] - o[a]) / d[a];
    double t2 = (f.half[a] - o[a]) / d[a];
    if (t1 > t2) std::swap(t1, t2);
    tmin = std::max(tmin, t1);
    tmax = std::min(tmax, t2);
    if (tmin > tmax) return std::nullopt;
  }
  if (tmax <= 0.0) return std::nullopt;
  return tmin > 0.0 ? tmin : tmax;
}

}  // namespace

std::vector<double> default_beam_elevations() {
  constexpr int kBeams = 64;
  const double lo = -24.8 * M_PI / 180.0;
  const double hi = 2.0 * M_PI / 180.0;
  std::vector<double> elev(kBeams);
  for (int i = 0; i < kBeams; ++i) elev[i] = lo + (hi - lo) * i / (kBeams - 1);
  return elev;
}

LidarSpec default_lidar() {
  LidarSpec spec;
  spec.beam_elevations = default_beam_elevations();
  return spec;
}

PointCloud SimOutput::instance_points(int instance) const {
  PointCloud out;
  for (std::size_t i = 0; i < cloud.size(); ++i)
    if (instance_ids[i] == instance) {
      out.points.push_back(cloud.points[i]);
      if (cloud.has_intensity()) out.intensity.push_back(cloud.intensity[i]);
    }
  return out;
}

std::optional<double> ray_cuboid_intersect(const Vec3& origin, const Vec3& direction,
                                           const BoxParams& box) {
  if (direction.squaredNorm() == 0.0)
    throw std::invalid_argument("ray_cuboid_intersect: zero direction");
  return slab_hit(make_frame(box), origin, direction);
}

SimOutput cast_rays(const SceneSpec& scene, const LidarSpec& lidar) {
  if (!(lidar.azimuth_step > 0.0)) throw std::invalid_argument("cast_rays: azimuth step <= 0");
  if (lidar.range_sigma < 0.0) throw std::invalid_argument("cast_rays: negative range sigma");
  const std::vector<double> elevations =
      lidar.beam_elevations.empty() ? default_beam_elevations() : lidar.beam_elevations;

  SimOutput out;
  // Target geometry per instance: one frame for SS, part frames for CS.
  std::vector<std::vector<LocalFrame>> frames(scene.objects.size());
  for (std::size_t i = 0; i < scene.objects.size(); ++i) {
    const SimObject& obj = scene.objects[i];
    if (!box_valid(obj.box)) throw std::invalid_argument("cast_rays: invalid object box");
    out.gt_boxes.push_back(obj.box);
    out.gt_classes.push_back(obj.class_id);
    out.gt_structures.push_back(obj.structure);
    if (obj.structure == Structure::SS) {
      frames[i].push_back(make_frame(obj.box));
      continue;
    }
    if (obj.cs_parts < 1) throw std::invalid_argument("cast_rays: CS object needs >= 1 part");
    auto rng = keyed_rng(scene.seed, 0xC500000ULL + i);
    std::uniform_real_distribution<double> unit(-1.0, 1.0);
    const double f = obj.cs_part_fraction;
    for (int p = 0; p < obj.cs_parts; ++p) {
      // part center uniform inside the shrunken box so parts stay inside
      Vec3 local(unit(rng) * 0.5 * (1.0 - f) * obj.box.l,
                 unit(rng) * 0.5 * (1.0 - f) * obj.box.w,
                 unit(rng) * 0.5 * (1.0 - f) * obj.box.h);
      BoxParams part;
      part.center = box_local_to_world(local, obj.box);
      part.h = f * obj.box.h;
      part.w = f * obj.box.w;
      part.l = f * obj.box.l;
      part.theta = obj.box.theta;
      frames[i].push_back(make_frame(part));
    }
  }

  const Vec3 origin(0.0, 0.0, lidar.sensor_height);
  const int azimuth_count = static_cast<int>(std::floor(2.0 * M_PI / lidar.azimuth_step));

  for (std::size_t ei = 0; ei < elevations.size(); ++ei) {
    const double ce = std::cos(elevations[ei]);
    const double se = std::sin(elevations[ei]);
    for (int ai = 0; ai < azimuth_count; ++ai) {
      const double az = ai * lidar.azimuth_step;
      const Vec3 dir(ce * std::cos(az), ce * std::sin(az), se);

      double best_t = std::numeric_limits<double>::infinity();
      int best_instance = -1;
      for (std::size_t i = 0; i < frames.size(); ++i)
        for (const LocalFrame& f : frames[i])
          if (auto t = slab_hit(f, origin, dir); t && *t < best_t) {
            best_t = *t;
            best_instance = static_cast<int>(i) + 1;
          }
      if (scene.ground_plane && dir.z() < 0.0) {
        const double t = -origin.z() / dir.z();
        if (t > 0.0 && t < best_t) {
          best_t = t;
          best_instance = 0;
        }
      }
      if (best_instance < 0 || best_t > lidar.max_range) continue;

      double range = best_t;
      if (lidar.range_sigma > 0.0) {
        auto rng = keyed_rng(scene.seed, ei * 1000003ULL + static_cast<std::uint64_t>(ai));
        std::normal_distribution<double> noise(0.0, lidar.range_sigma);
        const double n = std::clamp(noise(rng), -3.0 * lidar.range_sigma, 3.0 * lidar.range_sigma);
        range = std::max(0.0, range + n);
      }
      out.cloud.points.push_back(origin + range * dir);
      out.cloud.intensity.push_back(1.0F);
      out.instance_ids.push_back(best_instance);
    }
  }
  return out;
}

InstanceMaskSet render_masks(const SimOutput& sim, const CameraCalibration& calib,
                             int dilation_px) {
  if (!calibration_valid(calib)) throw std::invalid_argument("render_masks: invalid calibration");
  if (dilation_px < 0) throw std::invalid_argument("render_masks: negative dilation");

  InstanceMaskSet masks;
  masks.width = calib.width;
  masks.height = calib.height;
  masks.labels.assign(static_cast<std::size_t>(calib.width) * calib.height, 0);

  struct Visible {
    int instance;
    double mean_depth;
    std::vector<int> pixels;
  };
  std::vector<Visible> visible;
  for (std::size_t i = 0; i < sim.gt_boxes.size(); ++i) {
    const int instance = static_cast<int>(i) + 1;
    Visible vis{instance, 0.0, {}};
    double depth_sum = 0.0;
    for (std::size_t k = 0; k < sim.cloud.size(); ++k) {
      if (sim.instance_ids[k] != instance) continue;
      const Projection proj = project_point(sim.cloud.points[k], calib);
      if (proj.depth <= 0.0) continue;
      const long u = std::llround(proj.u);
      const long v = std::llround(proj.v);
      if (u < 0 || u >= calib.width || v < 0 || v >= calib.height) continue;
      vis.pixels.push_back(static_cast<int>(v) * calib.width + static_cast<int>(u));
      depth_sum += proj.depth;
    }
    if (vis.pixels.empty()) continue;
    vis.mean_depth = depth_sum / static_cast<double>(vis.pixels.size());
    visible.push_back(std::move(vis));
  }

  // Far instances first so nearer ones overwrite shared pixels.
  std::stable_sort(visible.begin(), visible.end(),
                   [](const Visible& a, const Visible& b) { return a.mean_depth > b.mean_depth; });

  std::vector<std::pair<int, int>> disk;  // dilation offsets, Euclidean radius
  for (int dv = -dilation_px; dv <= dilation_px; ++dv)
    for (int du = -dilation_px; du <= dilation_px; ++du)
      if (du * du + dv * dv <= dilation_px * dilation_px) disk.emplace_back(du, dv);

  for (const Visible& vis : visible) {
    for (int pix : vis.pixels) {
      const int u0 = pix % calib.width;
      const int v0 = pix / calib.width;
      for (const auto& [du, dv] : disk) {
        const int u = u0 + du;
        const int v = v0 + dv;
        if (u < 0 || u >= calib.width || v < 0 || v >= calib.height) continue;
        masks.labels[static_cast<std::size_t>(v) * calib.width + u] =
            static_cast<std::uint16_t>(vis.instance);
      }
    }
    masks.instance_class[vis.instance] = sim.gt_classes[vis.instance - 1];
    masks.instance_score[vis.instance] = 1.0;
  }
  return masks;
}

}  // namespace fbox::sim
