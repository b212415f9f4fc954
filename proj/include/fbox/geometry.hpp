#pragma once

#include "fbox/types.hpp"

#include <map>
#include <utility>
#include <vector>

namespace fbox {

// Box-local coordinates of a point: translate by -center, rotate about z by
// -theta so the box length axis lands on local +x. A point inside the box
// satisfies |x| <= l/2, |y| <= w/2, |z| <= h/2.
Vec3 world_to_box_local(const Vec3& p, const BoxParams& box);
PointCloud world_to_box_local(const PointCloud& cloud, const BoxParams& box);

// Inverse of world_to_box_local.
Vec3 box_local_to_world(const Vec3& local, const BoxParams& box);

struct Projection {
  double u = 0.0;
  double v = 0.0;
  double depth = 0.0;
  bool in_image = false;
};

// Pinhole projection into pixel coordinates. in_image is true iff the point
// is in front of the camera and (u,v) lies within the image bounds.
Projection project_point(const Vec3& p, const CameraCalibration& calib);
std::vector<Projection> project_points(const PointCloud& cloud, const CameraCalibration& calib);

// Nearest-pixel mask lookup: instance id under the rounded pixel, or 0 if the
// point is behind the camera or projects off the image. Boundary pixels of a
// mask count as inside; rounding ties break away from zero.
std::uint16_t mask_label_at(const Vec3& p, const InstanceMaskSet& masks, const CameraCalibration& calib);

// Groups cloud points by the mask instance their projection lands in.
// Background and off-image points are dropped; instances nobody hits are
// absent from the result.
std::map<int, PointCloud> lift_masks(const PointCloud& cloud, const InstanceMaskSet& masks,
                                     const CameraCalibration& calib);

// N_voxel x num_classes {0,1} matrix: row i has a 1 in column c iff voxel
// center i projects into a mask pixel of class c.
Eigen::MatrixXd voxel_object_mask(const PointCloud& voxel_centers, const InstanceMaskSet& masks,
                                  const CameraCalibration& calib, int num_classes);

// Keeps points whose every coordinate lies within mean +- 2*sigma computed
// per axis over the input. Fewer than 2 points are returned unchanged.
PointCloud filter_background(const PointCloud& cloud);

struct MeanSizeResult {
  std::vector<AnchorPrior> priors;        // ordered by class id
  std::vector<int> skipped_classes;       // tagged classes with no boxes
};

// Per-class arithmetic mean of (h,w,l) over the given boxes. structure_tags
// lists the classes to emit and their SS/CS tags; tagged classes without any
// box are skipped and recorded.
MeanSizeResult mean_size_prior(const std::vector<std::pair<int, BoxParams>>& boxes,
                               const std::map<int, Structure>& structure_tags);

}  // namespace fbox
