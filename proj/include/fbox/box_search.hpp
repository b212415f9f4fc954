#pragma once

#include "fbox/types.hpp"

#include <vector>

namespace fbox::search {

// Optimization variables of the box search: center and heading of a
// fixed-size anchor box.
struct SearchVars {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;
  double theta = 0.0;
};

struct LossWeights {
  double lambda1 = 0.2;  // front-viewed distance weight
  double lambda2 = 0.2;  // bird-viewed center weight
  bool normalize_per_point = false;
};

struct LossBreakdown {
  double od = 0.0;
  double fvd = 0.0;
  double bvc = 0.0;
  double box = 0.0;
};

struct SearchConfig {
  std::vector<double> start_headings;  // defaults to 8 uniform values in [0, 2*pi)
  double gradient_step = 1e-4;
  double tolerance = 1e-6;             // gradient norm stopping threshold
  int max_iterations = 60;
  double hinge_temperature = 0.0;      // 0 = exact hinge, >0 = softplus smoothing
};

SearchConfig default_search_config();
std::vector<double> uniform_headings(int count);

struct SearchResult {
  BoxParams box;
  LossBreakdown loss;
  bool converged = false;
  int iterations = 0;
  int start_index = 0;
};

// Hinge penalty on the portion of each local point outside the box:
// sum over points and axes of max(|p| - boundary, 0). boundary pairs
// (l/2, w/2, h/2) with local (x, y, z). temperature > 0 replaces the hinge
// with softplus smoothing for gradient checks.
double outside_distance_loss(const PointCloud& local_points, const Vec3& boundary,
                             double temperature = 0.0);

// LiDAR view angle of the box: yaw alpha = arctan(x/y) (full quadrant) minus
// heading, wrapped into (0, 2*pi]. Throws if the box sits on the sensor
// origin.
double view_angle(const SearchVars& vars);

// Front-viewed BEV corner [l/2 * S_l, w/2 * S_w] chosen by the view-angle
// quadrant.
Vec2 front_view_boundary(const SearchVars& vars, const AnchorPrior& prior);

// Sum over points of the BEV distance to the nearer of the two front-viewed
// faces selected by fb: min(|x - fb_x|, |y - fb_y|).
double front_view_distance_loss(const PointCloud& local_points, const Vec2& fb);

// Sum of BEV norms of local points.
double bev_center_loss(const PointCloud& local_points);

// Full box-searching loss at vars with the prior's size: od always, fvd only
// for SS priors, bvc only for CS priors; box = od + lambda1*fvd + lambda2*bvc.
LossBreakdown box_loss(const SearchVars& vars, const PointCloud& object_points,
                       const AnchorPrior& prior, const LossWeights& weights,
                       double temperature = 0.0);

// Central finite differences of the box loss in (x, y, z, theta).
Eigen::Vector4d numeric_gradient(const SearchVars& vars, const PointCloud& object_points,
                                 const AnchorPrior& prior, const LossWeights& weights,
                                 double step, double temperature = 0.0);

struct BfgsResult {
  SearchVars vars;
  LossBreakdown loss;
  bool converged = false;
  int iterations = 0;
};

// BFGS with Armijo backtracking line search on the box loss, driven by the
// numeric gradient. Returns the best point seen; converged means the gradient
// norm dropped below tolerance.
BfgsResult bfgs_minimize(const SearchVars& init, const PointCloud& object_points,
                         const AnchorPrior& prior, const LossWeights& weights,
                         const SearchConfig& config);

// Whole per-object search: background filter, centroid initialization, one
// BFGS run per start heading, lowest loss wins (ties break toward the lower
// start index). Throws if fewer than 3 points survive filtering.
SearchResult search_box(const PointCloud& object_points, const AnchorPrior& prior,
                        const LossWeights& weights, const SearchConfig& config);

}  // namespace fbox::search
