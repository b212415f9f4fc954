#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "fbox/box_search.hpp"
#include "fbox/geometry.hpp"

#include "helpers.hpp"

#include <cmath>
#include <random>

using namespace fbox;
using namespace fbox::search;

namespace {

PointCloud cloud_of(std::initializer_list<Vec3> points) {
  PointCloud c;
  c.points = points;
  return c;
}

AnchorPrior ss_prior(double h = 1.5, double w = 1.8, double l = 4.0) {
  return {0, h, w, l, Structure::SS};
}

AnchorPrior cs_prior(double h = 1.7, double w = 0.6, double l = 0.6) {
  return {1, h, w, l, Structure::CS};
}

}  // namespace

TEST_CASE("outside_distance_loss is zero inside and linear outside") {
  CHECK(outside_distance_loss(cloud_of({{0, 0, 0}}), Vec3(1, 1, 1)) == doctest::Approx(0.0));
  CHECK(outside_distance_loss(cloud_of({{2, 0, 0}}), Vec3(1, 1, 1)) == doctest::Approx(1.0));
}

TEST_CASE("outside_distance_loss matches a brute-force reimplementation") {
  std::mt19937_64 rng(41);
  std::uniform_real_distribution<double> span(-4.0, 4.0);
  PointCloud pts;
  for (int i = 0; i < 50; ++i) pts.points.emplace_back(span(rng), span(rng), span(rng));
  const Vec3 boundary(2.0, 1.0, 0.75);

  double expected = 0.0;
  for (const Vec3& p : pts.points) {
    expected += std::max(std::abs(p.x()) - boundary.x(), 0.0);
    expected += std::max(std::abs(p.y()) - boundary.y(), 0.0);
    expected += std::max(std::abs(p.z()) - boundary.z(), 0.0);
  }
  CHECK(outside_distance_loss(pts, boundary) == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("outside_distance_loss is zero iff every point is inside the box") {
  std::mt19937_64 rng(43);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  const Vec3 boundary(2.0, 1.0, 0.75);
  for (int trial = 0; trial < 100; ++trial) {
    PointCloud pts;
    bool all_inside = true;
    for (int i = 0; i < 10; ++i) {
      Vec3 p(unit(rng) * 2.5, unit(rng) * 1.2, unit(rng) * 0.9);
      if (std::abs(p.x()) > boundary.x() || std::abs(p.y()) > boundary.y() ||
          std::abs(p.z()) > boundary.z())
        all_inside = false;
      pts.points.push_back(p);
    }
    const double loss = outside_distance_loss(pts, boundary);
    CHECK((loss == 0.0) == all_inside);
  }
}

TEST_CASE("view_angle follows alpha = arctan(x/y) minus heading") {
  CHECK(view_angle({1, 1, 0, 0}) == doctest::Approx(M_PI_4));
  CHECK(view_angle({1, 1, 0, M_PI_4}) == doctest::Approx(2.0 * M_PI));  // wraps to the top
  CHECK_THROWS(view_angle({0, 0, 0, 0}));
}

TEST_CASE("view_angle lands in (0, 2*pi] for random inputs") {
  std::mt19937_64 rng(47);
  std::uniform_real_distribution<double> span(-30.0, 30.0);
  std::uniform_real_distribution<double> angle(-10.0, 10.0);
  for (int i = 0; i < 1000; ++i) {
    const double x = span(rng);
    const double y = span(rng);
    if (x == 0.0 && y == 0.0) continue;
    const double phi = view_angle({x, y, 0.0, angle(rng)});
    CHECK(phi > 0.0);
    CHECK(phi <= 2.0 * M_PI);
  }
}

TEST_CASE("front_view_boundary reproduces the quadrant table") {
  const AnchorPrior prior = ss_prior(1.5, 2.0, 4.0);
  auto fb_at = [&](double phi) {
    // choose vars with theta 0 whose yaw alpha equals phi
    return front_view_boundary({10.0 * std::cos(phi), 10.0 * std::sin(phi), 0.0, 0.0}, prior);
  };
  const Vec2 q1 = fb_at(M_PI_4);
  CHECK(q1.x() == doctest::Approx(-2.0));
  CHECK(q1.y() == doctest::Approx(-1.0));
  const Vec2 q2 = fb_at(3.0 * M_PI_4);
  CHECK(q2.x() == doctest::Approx(2.0));
  CHECK(q2.y() == doctest::Approx(-1.0));
  const Vec2 q3 = fb_at(5.0 * M_PI_4);
  CHECK(q3.x() == doctest::Approx(2.0));
  CHECK(q3.y() == doctest::Approx(1.0));
  const Vec2 q4 = fb_at(7.0 * M_PI_4);
  CHECK(q4.x() == doctest::Approx(-2.0));
  CHECK(q4.y() == doctest::Approx(1.0));
}

TEST_CASE("front_view_distance_loss sums BEV distances to the nearest front face") {
  CHECK(front_view_distance_loss(cloud_of({{3, 4, 9}}), Vec2(3, 4)) == doctest::Approx(0.0));
  // a point on either front face scores zero regardless of the other axis
  CHECK(front_view_distance_loss(cloud_of({{3, -7, 0}}), Vec2(3, 4)) == doctest::Approx(0.0));
  CHECK(front_view_distance_loss(cloud_of({{0, 0, 0}}), Vec2(3, 4)) == doctest::Approx(3.0));

  std::mt19937_64 rng(53);
  std::uniform_real_distribution<double> span(-5.0, 5.0);
  PointCloud pts;
  for (int i = 0; i < 40; ++i) pts.points.emplace_back(span(rng), span(rng), span(rng));
  const Vec2 fb(-2.0, 1.0);
  double expected = 0.0;
  for (const Vec3& p : pts.points)
    expected += std::min(std::abs(p.x() - fb.x()), std::abs(p.y() - fb.y()));
  CHECK(front_view_distance_loss(pts, fb) == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("bev_center_loss ignores z") {
  CHECK(bev_center_loss(cloud_of({{0, 0, 5}})) == doctest::Approx(0.0));
  CHECK(bev_center_loss(cloud_of({{3, 4, 7}})) == doctest::Approx(5.0));
}

TEST_CASE("box_loss vanishes for SS points sitting on the front-viewed corner") {
  const AnchorPrior prior = ss_prior();
  const SearchVars vars{8.0, 3.0, 0.5, 0.3};
  const Vec2 fb = front_view_boundary(vars, prior);
  const BoxParams box{Vec3(vars.x, vars.y, vars.z), prior.h, prior.w, prior.l, vars.theta};
  PointCloud pts;
  for (double dz : {-0.2, 0.0, 0.2})
    pts.points.push_back(box_local_to_world(Vec3(fb.x(), fb.y(), dz), box));

  const LossBreakdown loss = box_loss(vars, pts, prior, {});
  CHECK(loss.od == doctest::Approx(0.0).epsilon(1e-9));
  CHECK(loss.fvd == doctest::Approx(0.0).epsilon(1e-9));
  CHECK(loss.bvc == doctest::Approx(0.0));
  CHECK(loss.box == doctest::Approx(0.0).epsilon(1e-9));
}

TEST_CASE("box_loss applies fvd only to SS priors and bvc only to CS priors") {
  const SearchVars vars{5.0, 0.0, 0.8, 0.0};
  PointCloud pts = cloud_of({{5.1, 0.1, 0.8}, {4.9, -0.1, 0.9}, {5.0, 0.0, 0.7}});

  const LossBreakdown cs = box_loss(vars, pts, cs_prior(), {});
  CHECK(cs.fvd == 0.0);
  CHECK(cs.bvc > 0.0);
  CHECK(cs.box == doctest::Approx(cs.od + 0.2 * cs.bvc));

  const LossBreakdown ss = box_loss(vars, pts, ss_prior(), {});
  CHECK(ss.bvc == 0.0);
  CHECK(ss.fvd > 0.0);
  CHECK(ss.box == doctest::Approx(ss.od + 0.2 * ss.fvd));
}

TEST_CASE("box_loss at the true pose beats a 0.5 m offset on a simulated car") {
  const BoxParams gt = testutil::car_box(12.0, 2.0, 0.7);
  const PointCloud pts = testutil::scan_object(gt, Structure::SS, 5);
  REQUIRE(pts.size() >= 50);
  const AnchorPrior prior = ss_prior();
  const SearchVars at_gt{gt.center.x(), gt.center.y(), gt.center.z(), gt.theta};
  const SearchVars offset{gt.center.x() + 0.5, gt.center.y(), gt.center.z(), gt.theta};
  CHECK(box_loss(at_gt, pts, prior, {}).box < box_loss(offset, pts, prior, {}).box);
}

TEST_CASE("box_loss errors on empty input") {
  CHECK_THROWS(box_loss({0, 0, 0, 0}, PointCloud{}, ss_prior(), {}));
}

TEST_CASE("box_loss is invariant under joint rotation of scene and box about the sensor") {
  const BoxParams gt = testutil::car_box(10.0, -4.0, 1.1);
  const PointCloud pts = testutil::scan_object(gt, Structure::SS, 9);
  const AnchorPrior prior = ss_prior();
  const SearchVars vars{gt.center.x() + 0.1, gt.center.y() - 0.05, gt.center.z(), gt.theta + 0.03};
  const double base = box_loss(vars, pts, prior, {}).box;

  std::mt19937_64 rng(59);
  std::uniform_real_distribution<double> angle(0.0, 2.0 * M_PI);
  for (int i = 0; i < 5; ++i) {
    const double delta = angle(rng);
    const double c = std::cos(delta), s = std::sin(delta);
    PointCloud rotated;
    for (const Vec3& p : pts.points)
      rotated.points.emplace_back(c * p.x() - s * p.y(), s * p.x() + c * p.y(), p.z());
    const SearchVars rotated_vars{c * vars.x - s * vars.y, s * vars.x + c * vars.y, vars.z,
                                  vars.theta + delta};
    CHECK(box_loss(rotated_vars, rotated, prior, {}).box == doctest::Approx(base).epsilon(1e-6));
  }
}

TEST_CASE("numeric_gradient vanishes where the loss is locally constant") {
  // deep-inside points with the CS term weighted away leave a flat region
  const SearchVars vars{6.0, 1.0, 0.8, 0.2};
  const BoxParams box{Vec3(vars.x, vars.y, vars.z), 1.7, 0.6, 0.6, vars.theta};
  PointCloud pts;
  pts.points.push_back(box_local_to_world(Vec3(0.01, 0.01, 0.0), box));
  LossWeights weights;
  weights.lambda2 = 0.0;
  const Eigen::Vector4d grad = numeric_gradient(vars, pts, cs_prior(), weights, 1e-4);
  CHECK(grad.norm() == doctest::Approx(0.0));
}

TEST_CASE("numeric_gradient of a pure BVC point is the unit vector away from it") {
  const Vec3 p(6.0, 1.0, 0.8);
  PointCloud pts = cloud_of({p});
  const SearchVars vars{6.3, 1.4, 0.8, 0.0};  // point still inside the sized box
  LossWeights weights;
  weights.lambda2 = 1.0;
  const Eigen::Vector4d grad = numeric_gradient(vars, pts, cs_prior(1.7, 1.2, 1.2), weights, 1e-6);
  const Vec2 away = Vec2(vars.x - p.x(), vars.y - p.y()).normalized();
  CHECK(grad[0] == doctest::Approx(away.x()).epsilon(1e-4));
  CHECK(grad[1] == doctest::Approx(away.y()).epsilon(1e-4));
  CHECK(grad[2] == doctest::Approx(0.0));
  CHECK(std::abs(grad[3]) < 1e-6);  // BVC is rotation invariant
}

TEST_CASE("numeric_gradient agrees with forward differences to O(step)") {
  const BoxParams gt = testutil::car_box(9.0, 1.0, 0.4);
  const PointCloud pts = testutil::scan_object(gt, Structure::SS, 13);
  const AnchorPrior prior = ss_prior();
  const LossWeights weights;
  const SearchVars vars{gt.center.x() + 0.2, gt.center.y(), gt.center.z(), gt.theta + 0.1};
  const double step = 1e-5;
  const Eigen::Vector4d central = numeric_gradient(vars, pts, prior, weights, step);

  auto eval = [&](SearchVars v) { return box_loss(v, pts, prior, weights).box; };
  const double f0 = eval(vars);
  Eigen::Vector4d forward;
  SearchVars v = vars;
  v.x += step;
  forward[0] = (eval(v) - f0) / step;
  v = vars;
  v.y += step;
  forward[1] = (eval(v) - f0) / step;
  v = vars;
  v.z += step;
  forward[2] = (eval(v) - f0) / step;
  v = vars;
  v.theta += step;
  forward[3] = (eval(v) - f0) / step;
  CHECK((central - forward).norm() < 1e-2 * std::max(1.0, central.norm()));
}

TEST_CASE("bfgs_minimize returns immediately at a stationary point") {
  const SearchVars vars{6.0, 1.0, 0.8, 0.2};
  const BoxParams box{Vec3(vars.x, vars.y, vars.z), 1.7, 0.6, 0.6, vars.theta};
  PointCloud pts;
  pts.points.push_back(box_local_to_world(Vec3(0.0, 0.0, 0.0), box));
  LossWeights weights;
  weights.lambda2 = 0.0;
  const BfgsResult result = bfgs_minimize(vars, pts, cs_prior(), weights, default_search_config());
  CHECK(result.iterations == 0);
  CHECK(result.converged);
  CHECK(result.vars.x == doctest::Approx(vars.x));
}

TEST_CASE("bfgs_minimize drives a pure BVC objective to the point's BEV coordinates") {
  const Vec3 p(6.0, 1.0, 0.8);
  PointCloud pts = cloud_of({p});
  LossWeights weights;
  weights.lambda2 = 1.0;
  SearchConfig config = default_search_config();
  config.max_iterations = 200;
  const BfgsResult result =
      bfgs_minimize({6.4, 1.5, 0.8, 0.0}, pts, cs_prior(1.7, 1.5, 1.5), weights, config);
  CHECK(std::abs(result.vars.x - p.x()) < 1e-3);
  CHECK(std::abs(result.vars.y - p.y()) < 1e-3);
}

TEST_CASE("bfgs_minimize never returns a loss above the initial loss") {
  std::mt19937_64 rng(61);
  for (int i = 0; i < 10; ++i) {
    const BoxParams gt = testutil::random_pose(rng, 6.0, 30.0);
    const PointCloud pts = testutil::scan_object(gt, Structure::SS, 100 + i);
    if (pts.size() < 3) continue;
    const AnchorPrior prior = ss_prior();
    const LossWeights weights;
    const SearchVars init{gt.center.x() + 0.4, gt.center.y() - 0.3, gt.center.z(), 0.0};
    const double initial = box_loss(init, pts, prior, weights).box;
    const BfgsResult result = bfgs_minimize(init, pts, prior, weights, default_search_config());
    CHECK(result.loss.box <= initial + 1e-9);
  }
}

TEST_CASE("search_box recovers a simulated car pose") {
  const BoxParams gt = testutil::car_box(14.0, -3.0, 2.2);
  const PointCloud pts = testutil::scan_object(gt, Structure::SS, 21);
  REQUIRE(pts.size() >= 30);
  const SearchResult result = search_box(pts, ss_prior(), {}, default_search_config());
  CHECK((result.box.center - gt.center).norm() < 0.3);
  CHECK(testutil::heading_error_mod_pi(result.box.theta, gt.theta) < 10.0 * M_PI / 180.0);
}

TEST_CASE("search_box recovers a simulated pedestrian BEV center") {
  const BoxParams gt = testutil::pedestrian_box(9.0, 1.5, 0.9);
  const PointCloud pts = testutil::scan_object(gt, Structure::CS, 23);
  REQUIRE(pts.size() >= 20);
  const PointCloud filtered = filter_background(pts);
  Vec3 centroid = Vec3::Zero();
  for (const Vec3& p : filtered.points) centroid += p;
  centroid /= static_cast<double>(filtered.size());

  const SearchResult result =
      search_box(pts, cs_prior(1.7, 0.6, 0.6), {}, default_search_config());
  const double err = std::hypot(result.box.center.x() - centroid.x(),
                                result.box.center.y() - centroid.y());
  CHECK(err < 0.2);
}

TEST_CASE("search_box breaks exact symmetry ties toward the lower start index") {
  // two points mirrored about the center make theta and theta+pi equivalent
  PointCloud pts = cloud_of({{6.2, 1.0, 0.8}, {5.8, 1.0, 0.8}, {6.0, 1.0, 0.9}});
  SearchConfig config = default_search_config();
  config.start_headings = {0.3, 0.3 + M_PI};
  const SearchResult result = search_box(pts, cs_prior(1.7, 1.0, 1.0), {}, config);
  CHECK(result.start_index == 0);
}

TEST_CASE("search_box refuses fewer than three surviving points") {
  CHECK_THROWS_WITH_AS(search_box(cloud_of({{1, 1, 1}, {1.1, 1, 1}}), cs_prior(), {},
                                  default_search_config()),
                       doctest::Contains("insufficient evidence"), std::runtime_error);
}

TEST_CASE("multi-start dominance: the returned loss is the minimum over starts") {
  const BoxParams gt = testutil::car_box(11.0, 4.0, 1.9);
  const PointCloud pts = testutil::scan_object(gt, Structure::SS, 31);
  const AnchorPrior prior = ss_prior();
  const LossWeights weights;
  const SearchConfig config = default_search_config();
  const SearchResult result = search_box(pts, prior, weights, config);

  const PointCloud filtered = filter_background(pts);
  Vec3 centroid = Vec3::Zero();
  for (const Vec3& p : filtered.points) centroid += p;
  centroid /= static_cast<double>(filtered.size());
  for (double heading : config.start_headings) {
    const BfgsResult run = bfgs_minimize({centroid.x(), centroid.y(), centroid.z(), heading},
                                         filtered, prior, weights, config);
    CHECK(result.loss.box <= run.loss.box + 1e-9);
  }
}

TEST_CASE("per-point normalization leaves the argmin unchanged") {
  const BoxParams gt = testutil::car_box(13.0, 0.0, 0.6);
  const PointCloud pts = testutil::scan_object(gt, Structure::SS, 37);
  LossWeights raw;
  LossWeights normalized;
  normalized.normalize_per_point = true;
  const SearchResult a = search_box(pts, ss_prior(), raw, default_search_config());
  const SearchResult b = search_box(pts, ss_prior(), normalized, default_search_config());
  CHECK(std::abs(a.box.center.x() - b.box.center.x()) < 1e-3);
  CHECK(std::abs(a.box.center.y() - b.box.center.y()) < 1e-3);
  CHECK(std::abs(a.box.center.z() - b.box.center.z()) < 1e-3);
  CHECK(testutil::heading_error_mod_pi(a.box.theta, b.box.theta) < 0.5 * M_PI / 180.0);
}
