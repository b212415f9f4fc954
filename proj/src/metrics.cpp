#include "fbox/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <sstream>
#include <stdexcept>

namespace fbox::eval {

namespace {

double polygon_area(const std::vector<Vec2>& poly) {
  double twice = 0.0;
  const std::size_t n = poly.size();
  for (std::size_t i = 0; i < n; ++i) {
    const Vec2& p = poly[i];
    const Vec2& q = poly[(i + 1) % n];
    twice += p.x() * q.y() - q.x() * p.y();
  }
  return 0.5 * std::abs(twice);
}

// Clips `subject` against the half-plane left of edge a->b.
std::vector<Vec2> clip_edge(const std::vector<Vec2>& subject, const Vec2& a, const Vec2& b) {
  std::vector<Vec2> out;
  const std::size_t n = subject.size();
  auto side = [&](const Vec2& p) {
    return (b.x() - a.x()) * (p.y() - a.y()) - (b.y() - a.y()) * (p.x() - a.x());
  };
  for (std::size_t i = 0; i < n; ++i) {
    const Vec2& cur = subject[i];
    const Vec2& prev = subject[(i + n - 1) % n];
    const double sc = side(cur);
    const double sp = side(prev);
    if (sc >= 0.0) {
      if (sp < 0.0) {
        const double t = sp / (sp - sc);
        out.push_back(prev + t * (cur - prev));
      }
      out.push_back(cur);
    } else if (sp >= 0.0) {
      const double t = sp / (sp - sc);
      out.push_back(prev + t * (cur - prev));
    }
  }
  return out;
}

}  // namespace

double EvalConfig::iou_threshold_for(int class_id) const {
  auto it = iou_thresholds.find(class_id);
  return it == iou_thresholds.end() ? default_iou_threshold : it->second;
}

std::vector<Vec2> bev_corners(const BoxParams& box) {
  const double c = std::cos(box.theta);
  const double s = std::sin(box.theta);
  const double hl = 0.5 * box.l;
  const double hw = 0.5 * box.w;
  std::vector<Vec2> corners;
  corners.reserve(4);
  for (const auto& [lx, ly] : {std::pair{hl, hw}, {-hl, hw}, {-hl, -hw}, {hl, -hw}})
    corners.emplace_back(box.center.x() + c * lx - s * ly, box.center.y() + s * lx + c * ly);
  return corners;
}

double bev_intersection_area(const BoxParams& a, const BoxParams& b) {
  if (!box_valid(a) || !box_valid(b))
    throw std::invalid_argument("bev_intersection_area: invalid box");
  std::vector<Vec2> poly = bev_corners(a);
  const std::vector<Vec2> clip = bev_corners(b);
  for (std::size_t i = 0; i < clip.size() && !poly.empty(); ++i)
    poly = clip_edge(poly, clip[i], clip[(i + 1) % clip.size()]);
  if (poly.size() < 3) return 0.0;
  const double area = polygon_area(poly);
  return area < 1e-12 ? 0.0 : area;
}

double iou_3d(const BoxParams& a, const BoxParams& b) {
  const double inter_bev = bev_intersection_area(a, b);
  const double z_lo = std::max(a.center.z() - 0.5 * a.h, b.center.z() - 0.5 * b.h);
  const double z_hi = std::min(a.center.z() + 0.5 * a.h, b.center.z() + 0.5 * b.h);
  const double inter = inter_bev * std::max(0.0, z_hi - z_lo);
  const double vol_a = a.h * a.w * a.l;
  const double vol_b = b.h * b.w * b.l;
  const double uni = vol_a + vol_b - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

MatchResult match_detections(const std::vector<Detection>& detections,
                             const std::vector<GroundTruth>& gts, const EvalConfig& config) {
  MatchResult result;
  result.gt_matched.assign(gts.size(), false);

  std::set<int> classes;
  for (const Detection& d : detections) classes.insert(d.class_id);

  for (int cls : classes) {
    std::vector<int> order;
    for (std::size_t i = 0; i < detections.size(); ++i)
      if (detections[i].class_id == cls && detections[i].score >= config.score_threshold)
        order.push_back(static_cast<int>(i));
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
      return detections[a].score > detections[b].score;
    });

    const double threshold = config.iou_threshold_for(cls);
    for (int di : order) {
      double best_iou = 0.0;
      int best_gt = -1;
      for (std::size_t gi = 0; gi < gts.size(); ++gi) {
        if (gts[gi].class_id != cls || result.gt_matched[gi]) continue;
        const double iou = iou_3d(detections[di].box, gts[gi].box);
        if (iou > best_iou) {
          best_iou = iou;
          best_gt = static_cast<int>(gi);
        }
      }
      MatchEntry entry{di, cls, detections[di].score, false};
      if (best_gt >= 0 && best_iou >= threshold) {
        entry.tp = true;
        result.gt_matched[best_gt] = true;
      }
      result.entries.push_back(entry);
    }
  }
  return result;
}

std::optional<double> average_precision(std::vector<std::pair<double, bool>> scored_labels,
                                        int num_gt, int points) {
  if (num_gt < 0) throw std::invalid_argument("average_precision: negative ground-truth count");
  if (points < 1) throw std::invalid_argument("average_precision: need >= 1 recall level");
  if (num_gt == 0 && scored_labels.empty()) return std::nullopt;
  if (num_gt == 0) return 0.0;

  std::stable_sort(scored_labels.begin(), scored_labels.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });

  std::vector<double> recalls, precisions;
  int tp = 0;
  for (std::size_t k = 0; k < scored_labels.size(); ++k) {
    if (scored_labels[k].second) ++tp;
    recalls.push_back(static_cast<double>(tp) / num_gt);
    precisions.push_back(static_cast<double>(tp) / static_cast<double>(k + 1));
  }

  // precision at recall >= r is the best precision anywhere past that point
  std::vector<double> suffix_max(precisions.size());
  double running = 0.0;
  for (std::size_t i = precisions.size(); i-- > 0;) {
    running = std::max(running, precisions[i]);
    suffix_max[i] = running;
  }

  double sum = 0.0;
  for (int k = 1; k <= points; ++k) {
    const double r = static_cast<double>(k) / points;
    const auto it = std::lower_bound(recalls.begin(), recalls.end(), r);
    if (it != recalls.end()) sum += suffix_max[static_cast<std::size_t>(it - recalls.begin())];
  }
  return sum / points;
}

APReport map_report(const std::map<int, std::optional<double>>& per_class_ap,
                    const EvalConfig& config) {
  APReport report;
  for (const auto& [cls, ap] : per_class_ap) {
    if (ap)
      report.per_class[cls] = *ap;
    else
      report.skipped_classes.push_back(cls);
  }

  auto group_mean = [&](const std::vector<int>& group) -> std::optional<double> {
    double sum = 0.0;
    int n = 0;
    for (int cls : group) {
      auto it = report.per_class.find(cls);
      if (it == report.per_class.end()) continue;
      sum += it->second;
      ++n;
    }
    if (n == 0) return std::nullopt;
    return sum / n;
  };

  report.common_map = group_mean(config.common_classes);
  report.novel_map = group_mean(config.novel_classes);
  if (!report.per_class.empty()) {
    double sum = 0.0;
    for (const auto& [cls, ap] : report.per_class) sum += ap;
    report.overall_map = sum / static_cast<double>(report.per_class.size());
  }
  return report;
}

APReport evaluate(const std::vector<Detection>& detections, const std::vector<GroundTruth>& gts,
                  const EvalConfig& config) {
  const MatchResult matches = match_detections(detections, gts, config);

  std::set<int> classes;
  for (const GroundTruth& gt : gts) classes.insert(gt.class_id);
  for (const MatchEntry& e : matches.entries) classes.insert(e.class_id);

  std::map<int, std::optional<double>> per_class;
  for (int cls : classes) {
    std::vector<std::pair<double, bool>> scored;
    for (const MatchEntry& e : matches.entries)
      if (e.class_id == cls) scored.emplace_back(e.score, e.tp);
    int num_gt = 0;
    for (const GroundTruth& gt : gts)
      if (gt.class_id == cls) ++num_gt;
    per_class[cls] = average_precision(std::move(scored), num_gt, config.interpolation_points);
  }
  return map_report(per_class, config);
}

std::string report_table(const APReport& report) {
  std::ostringstream os;
  auto line = [&](const std::string& name, std::optional<double> value) {
    os << name;
    for (std::size_t i = name.size(); i < 16; ++i) os << ' ';
    if (value)
      os << *value << "\n";
    else
      os << "-\n";
  };
  os.precision(6);
  os << std::fixed;
  os << "class           AP\n";
  for (const auto& [cls, ap] : report.per_class) line("class_" + std::to_string(cls), ap);
  for (int cls : report.skipped_classes) line("class_" + std::to_string(cls), std::nullopt);
  line("common_mAP", report.common_map);
  line("novel_mAP", report.novel_map);
  line("overall_mAP", report.overall_map);
  return os.str();
}

}  // namespace fbox::eval
