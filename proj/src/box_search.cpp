#include "fbox/box_search.hpp"

#include "fbox/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace fbox::search {

namespace {

constexpr double kTwoPi = 2.0 * M_PI;

double hinge(double v, double temperature) {
  if (temperature <= 0.0) return std::max(v, 0.0);
  // softplus, guarded against overflow for large arguments
  const double t = v / temperature;
  if (t > 40.0) return v;
  return temperature * std::log1p(std::exp(t));
}

double eval_box(const SearchVars& vars, const PointCloud& pts, const AnchorPrior& prior,
                const LossWeights& weights, double temperature) {
  return box_loss(vars, pts, prior, weights, temperature).box;
}

}  // namespace

std::vector<double> uniform_headings(int count) {
  std::vector<double> h(count);
  for (int i = 0; i < count; ++i) h[i] = kTwoPi * i / count;
  return h;
}

SearchConfig default_search_config() {
  SearchConfig config;
  config.start_headings = uniform_headings(8);
  return config;
}

double outside_distance_loss(const PointCloud& local_points, const Vec3& boundary,
                             double temperature) {
  if (!(boundary.x() > 0.0 && boundary.y() > 0.0 && boundary.z() > 0.0))
    throw std::invalid_argument("outside_distance_loss: boundary must be positive");
  double sum = 0.0;
  for (const Vec3& p : local_points.points)
    for (int a = 0; a < 3; ++a) sum += hinge(std::abs(p[a]) - boundary[a], temperature);
  return sum;
}

double view_angle(const SearchVars& vars) {
  if (vars.x == 0.0 && vars.y == 0.0)
    throw std::invalid_argument("view_angle: box centered at sensor origin has no yaw");
  // yaw of the box center from the sensor, same angular convention as the
  // heading, so the view angle is invariant under scene rotation
  const double alpha = std::atan2(vars.y, vars.x);
  double phi = alpha - vars.theta;
  phi -= kTwoPi * std::floor(phi / kTwoPi);  // [0, 2*pi)
  if (phi <= 0.0) phi = kTwoPi;              // (0, 2*pi]
  return phi;
}

Vec2 front_view_boundary(const SearchVars& vars, const AnchorPrior& prior) {
  if (!prior_valid(prior)) throw std::invalid_argument("front_view_boundary: invalid prior");
  const double phi = view_angle(vars);
  double sl, sw;
  if (phi <= M_PI_2) {
    sl = -1.0;
    sw = -1.0;
  } else if (phi <= M_PI) {
    sl = 1.0;
    sw = -1.0;
  } else if (phi <= 3.0 * M_PI_2) {
    sl = 1.0;
    sw = 1.0;
  } else {
    sl = -1.0;
    sw = 1.0;
  }
  return {0.5 * prior.l * sl, 0.5 * prior.w * sw};
}

double front_view_distance_loss(const PointCloud& local_points, const Vec2& fb) {
  // distance to the nearer of the two front-viewed faces; scanned surface
  // points sit on those faces, so a well-posed box scores near zero
  double sum = 0.0;
  for (const Vec3& p : local_points.points)
    sum += std::min(std::abs(p.x() - fb.x()), std::abs(p.y() - fb.y()));
  return sum;
}

double bev_center_loss(const PointCloud& local_points) {
  double sum = 0.0;
  for (const Vec3& p : local_points.points) sum += std::hypot(p.x(), p.y());
  return sum;
}

LossBreakdown box_loss(const SearchVars& vars, const PointCloud& object_points,
                       const AnchorPrior& prior, const LossWeights& weights, double temperature) {
  if (object_points.empty()) throw std::invalid_argument("box_loss: no points to fit");
  if (!prior_valid(prior)) throw std::invalid_argument("box_loss: invalid prior");

  const bool ss = prior.structure == Structure::SS;
  const Vec2 fb = ss ? front_view_boundary(vars, prior) : Vec2::Zero();
  const double c = std::cos(vars.theta);
  const double s = std::sin(vars.theta);
  const double bx = 0.5 * prior.l, by = 0.5 * prior.w, bz = 0.5 * prior.h;

  LossBreakdown out;
  for (const Vec3& p : object_points.points) {
    const double dx = p.x() - vars.x;
    const double dy = p.y() - vars.y;
    const double lx = c * dx + s * dy;
    const double ly = -s * dx + c * dy;
    const double lz = p.z() - vars.z;
    out.od += hinge(std::abs(lx) - bx, temperature) + hinge(std::abs(ly) - by, temperature) +
              hinge(std::abs(lz) - bz, temperature);
    if (ss)
      out.fvd += std::min(std::abs(lx - fb.x()), std::abs(ly - fb.y()));
    else
      out.bvc += std::hypot(lx, ly);
  }
  if (weights.normalize_per_point) {
    const double n = static_cast<double>(object_points.size());
    out.od /= n;
    out.fvd /= n;
    out.bvc /= n;
  }
  out.box = out.od + weights.lambda1 * out.fvd + weights.lambda2 * out.bvc;
  return out;
}

Eigen::Vector4d numeric_gradient(const SearchVars& vars, const PointCloud& object_points,
                                 const AnchorPrior& prior, const LossWeights& weights,
                                 double step, double temperature) {
  if (!(step > 0.0)) throw std::invalid_argument("numeric_gradient: step must be positive");
  Eigen::Vector4d grad;
  for (int i = 0; i < 4; ++i) {
    SearchVars lo = vars, hi = vars;
    double* plo = i == 0 ? &lo.x : i == 1 ? &lo.y : i == 2 ? &lo.z : &lo.theta;
    double* phi = i == 0 ? &hi.x : i == 1 ? &hi.y : i == 2 ? &hi.z : &hi.theta;
    *plo -= step;
    *phi += step;
    grad[i] = (eval_box(hi, object_points, prior, weights, temperature) -
               eval_box(lo, object_points, prior, weights, temperature)) /
              (2.0 * step);
  }
  return grad;
}

BfgsResult bfgs_minimize(const SearchVars& init, const PointCloud& object_points,
                         const AnchorPrior& prior, const LossWeights& weights,
                         const SearchConfig& config) {
  const double temp = config.hinge_temperature;
  auto f = [&](const Eigen::Vector4d& v) {
    return eval_box({v[0], v[1], v[2], v[3]}, object_points, prior, weights, temp);
  };
  auto g = [&](const Eigen::Vector4d& v) {
    return numeric_gradient({v[0], v[1], v[2], v[3]}, object_points, prior, weights,
                            config.gradient_step, temp);
  };

  Eigen::Vector4d x(init.x, init.y, init.z, init.theta);
  double fx = f(x);
  Eigen::Vector4d grad = g(x);

  Eigen::Vector4d best_x = x;
  double best_f = fx;

  Eigen::Matrix4d h_inv = Eigen::Matrix4d::Identity();
  bool converged = grad.norm() <= config.tolerance;
  int iter = 0;

  constexpr double kArmijoC = 1e-4;
  constexpr int kMaxBacktracks = 40;

  while (!converged && iter < config.max_iterations) {
    Eigen::Vector4d dir = -h_inv * grad;
    double slope = grad.dot(dir);
    if (slope >= 0.0) {  // stale curvature estimate; restart from steepest descent
      h_inv = Eigen::Matrix4d::Identity();
      dir = -grad;
      slope = grad.dot(dir);
    }

    double step = 1.0;
    double f_new = 0.0;
    Eigen::Vector4d x_new;
    bool accepted = false;
    for (int bt = 0; bt < kMaxBacktracks; ++bt) {
      x_new = x + step * dir;
      f_new = f(x_new);
      if (f_new <= fx + kArmijoC * step * slope) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) break;  // line search failure: report best-so-far, not converged

    Eigen::Vector4d grad_new = g(x_new);
    const Eigen::Vector4d s = x_new - x;
    const Eigen::Vector4d ydiff = grad_new - grad;
    const double sy = s.dot(ydiff);
    if (sy > 1e-12) {
      const double rho = 1.0 / sy;
      const Eigen::Matrix4d eye = Eigen::Matrix4d::Identity();
      h_inv = (eye - rho * s * ydiff.transpose()) * h_inv * (eye - rho * ydiff * s.transpose()) +
              rho * s * s.transpose();
    }

    x = x_new;
    fx = f_new;
    grad = grad_new;
    ++iter;
    if (fx < best_f) {
      best_f = fx;
      best_x = x;
    }
    converged = grad.norm() <= config.tolerance;
  }

  BfgsResult result;
  result.vars = {best_x[0], best_x[1], best_x[2], best_x[3]};
  result.loss = box_loss(result.vars, object_points, prior, weights, temp);
  result.converged = converged;
  result.iterations = iter;
  return result;
}

SearchResult search_box(const PointCloud& object_points, const AnchorPrior& prior,
                        const LossWeights& weights, const SearchConfig& config) {
  if (config.start_headings.empty())
    throw std::invalid_argument("search_box: need at least one start heading");
  const PointCloud filtered = filter_background(object_points);
  if (filtered.size() < 3) throw std::runtime_error("insufficient evidence: fewer than 3 points");

  Vec3 centroid = Vec3::Zero();
  for (const Vec3& p : filtered.points) centroid += p;
  centroid /= static_cast<double>(filtered.size());

  SearchResult best;
  bool have_best = false;
  for (std::size_t s = 0; s < config.start_headings.size(); ++s) {
    SearchVars init{centroid.x(), centroid.y(), centroid.z(), config.start_headings[s]};
    BfgsResult run = bfgs_minimize(init, filtered, prior, weights, config);
    if (!have_best || run.loss.box < best.loss.box) {
      have_best = true;
      best.box.center = Vec3(run.vars.x, run.vars.y, run.vars.z);
      best.box.h = prior.h;
      best.box.w = prior.w;
      best.box.l = prior.l;
      best.box.theta = normalize_heading(run.vars.theta);
      best.loss = run.loss;
      best.converged = run.converged;
      best.iterations = run.iterations;
      best.start_index = static_cast<int>(s);
    }
  }
  return best;
}

}  // namespace fbox::search
