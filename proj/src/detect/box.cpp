#include "coopbev/detect/box.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "coopbev/ad/tensor.hpp"

namespace coopbev::detect {

using geom::Pose2;
using geom::Vec2;

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr double kDegenerateArea = 1e-12;

double polygon_area(const std::vector<Vec2>& poly) {
  double s = 0.0;
  const std::size_t n = poly.size();
  for (std::size_t i = 0; i < n; ++i) {
    const Vec2& p = poly[i];
    const Vec2& q = poly[(i + 1) % n];
    s += p.x * q.y - q.x * p.y;
  }
  return 0.5 * std::abs(s);
}

// Clips subject against the half-plane left of edge a->b (counterclockwise
// clip polygon keeps its interior on the left).
std::vector<Vec2> clip_halfplane(const std::vector<Vec2>& subject, Vec2 a, Vec2 b) {
  std::vector<Vec2> out;
  const std::size_t n = subject.size();
  auto side = [&](Vec2 p) { return (b.x - a.x) * (p.y - a.y) - (b.y - a.y) * (p.x - a.x); };
  for (std::size_t i = 0; i < n; ++i) {
    Vec2 cur = subject[i];
    Vec2 nxt = subject[(i + 1) % n];
    double sc = side(cur), sn = side(nxt);
    if (sc >= 0.0) out.push_back(cur);
    if ((sc > 0.0 && sn < 0.0) || (sc < 0.0 && sn > 0.0)) {
      double t = sc / (sc - sn);
      out.push_back({cur.x + t * (nxt.x - cur.x), cur.y + t * (nxt.y - cur.y)});
    }
  }
  return out;
}

double intersection_area(const std::array<Vec2, 4>& pa, const std::array<Vec2, 4>& pb) {
  std::vector<Vec2> poly(pa.begin(), pa.end());
  for (int i = 0; i < 4 && !poly.empty(); ++i)
    poly = clip_halfplane(poly, pb[i], pb[(i + 1) % 4]);
  if (poly.size() < 3) return 0.0;
  return polygon_area(poly);
}

}  // namespace

BoxBEV canonical_box(BoxBEV b) {
  if (b.w <= 0.0 || b.l <= 0.0) throw ad::ConfigError("box sides must be positive");
  if (b.w > b.l) {
    std::swap(b.w, b.l);
    b.yaw += 0.5 * kPi;
  }
  b.yaw = std::remainder(b.yaw, kPi);  // (-pi/2, pi/2] up to the boundary
  if (b.yaw <= -0.5 * kPi) b.yaw += kPi;
  return b;
}

std::array<Vec2, 4> box_corners(const BoxBEV& b) {
  const double c = std::cos(b.yaw), s = std::sin(b.yaw);
  const double hl = 0.5 * b.l, hw = 0.5 * b.w;
  // Counterclockwise in box frame.
  const double bx[4] = {hl, -hl, -hl, hl};
  const double by[4] = {hw, hw, -hw, -hw};
  std::array<Vec2, 4> out;
  for (int i = 0; i < 4; ++i)
    out[i] = {b.cx + c * bx[i] - s * by[i], b.cy + s * bx[i] + c * by[i]};
  return out;
}

bool point_in_box(const BoxBEV& b, Vec2 p) {
  const double c = std::cos(b.yaw), s = std::sin(b.yaw);
  const double dx = p.x - b.cx, dy = p.y - b.cy;
  const double u = c * dx + s * dy;   // along heading
  const double v = -s * dx + c * dy;  // across
  return std::abs(u) <= 0.5 * b.l && std::abs(v) <= 0.5 * b.w;
}

double rotated_iou(const BoxBEV& a, const BoxBEV& b) {
  const double area_a = a.w * a.l, area_b = b.w * b.l;
  if (area_a < kDegenerateArea || area_b < kDegenerateArea) return 0.0;
  // box_corners is counterclockwise only for positive yaw rotations of a
  // counterclockwise base; rotation preserves orientation, so always CCW.
  const double inter = intersection_area(box_corners(a), box_corners(b));
  const double uni = area_a + area_b - inter;
  if (uni < kDegenerateArea) return 0.0;
  return inter / uni;
}

BoxBEV transform_box(const BoxBEV& b, const Pose2& from, const Pose2& to) {
  Pose2 rel = geom::relative_transform(from, to);
  Vec2 c = geom::apply_pose(rel, {b.cx, b.cy});
  BoxBEV out = b;
  out.cx = c.x;
  out.cy = c.y;
  out.yaw = b.yaw + rel.yaw;
  return canonical_box(out);
}

std::vector<Detection> nms(std::vector<Detection> dets, double iou_thresh, std::size_t max_out) {
  std::stable_sort(dets.begin(), dets.end(),
                   [](const Detection& a, const Detection& b) { return a.score > b.score; });
  std::vector<Detection> kept;
  for (const Detection& d : dets) {
    if (kept.size() >= max_out) break;
    bool suppressed = false;
    for (const Detection& k : kept)
      if (rotated_iou(d.box, k.box) >= iou_thresh) {
        suppressed = true;
        break;
      }
    if (!suppressed) kept.push_back(d);
  }
  return kept;
}

double average_precision(const std::vector<std::vector<Detection>>& dets_per_scene,
                         const std::vector<std::vector<BoxBEV>>& gts_per_scene,
                         double iou_thresh) {
  if (dets_per_scene.size() != gts_per_scene.size())
    throw ad::DimError("detections and ground truth must cover the same scenes");
  std::size_t total_gt = 0;
  for (const auto& g : gts_per_scene) total_gt += g.size();

  // Pool detections across scenes; each keeps its scene index for matching.
  struct Row {
    double score;
    int scene;
    int det;
  };
  std::vector<Row> rows;
  for (std::size_t s = 0; s < dets_per_scene.size(); ++s)
    for (std::size_t d = 0; d < dets_per_scene[s].size(); ++d)
      rows.push_back({dets_per_scene[s][d].score, static_cast<int>(s), static_cast<int>(d)});
  if (total_gt == 0) return rows.empty() ? 1.0 : 0.0;
  if (rows.empty()) return 0.0;

  std::stable_sort(rows.begin(), rows.end(),
                   [](const Row& a, const Row& b) { return a.score > b.score; });

  std::vector<std::vector<bool>> taken;
  for (const auto& g : gts_per_scene) taken.emplace_back(g.size(), false);

  std::vector<int> tp(rows.size(), 0);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const Detection& d = dets_per_scene[rows[r].scene][rows[r].det];
    const auto& gts = gts_per_scene[rows[r].scene];
    int best = -1;
    double best_iou = iou_thresh;
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (taken[rows[r].scene][g]) continue;
      double iou = rotated_iou(d.box, gts[g]);
      if (iou >= best_iou) {
        best_iou = iou;
        best = static_cast<int>(g);
      }
    }
    if (best >= 0) {
      taken[rows[r].scene][best] = true;
      tp[r] = 1;
    }
  }

  // All-point interpolation: area under the precision envelope.
  std::vector<double> precision(rows.size()), recall(rows.size());
  int cum_tp = 0;
  for (std::size_t r = 0; r < rows.size(); ++r) {
    cum_tp += tp[r];
    precision[r] = static_cast<double>(cum_tp) / static_cast<double>(r + 1);
    recall[r] = static_cast<double>(cum_tp) / static_cast<double>(total_gt);
  }
  for (int r = static_cast<int>(rows.size()) - 2; r >= 0; --r)
    precision[r] = std::max(precision[r], precision[r + 1]);
  double ap = 0.0, prev_recall = 0.0;
  for (std::size_t r = 0; r < rows.size(); ++r) {
    ap += (recall[r] - prev_recall) * precision[r];
    prev_recall = recall[r];
  }
  return ap;
}

std::vector<Detection> no_fusion(const std::vector<Detection>& ego_dets) { return ego_dets; }

std::vector<Detection> late_fusion(const std::vector<std::vector<Detection>>& per_agent,
                                   const std::vector<Pose2>& poses, int ego_index,
                                   double iou_thresh) {
  if (per_agent.size() != poses.size()) throw ad::DimError("one pose per agent required");
  if (ego_index < 0 || ego_index >= static_cast<int>(per_agent.size()))
    throw ad::ConfigError("ego index out of range");
  std::vector<Detection> pooled;
  for (std::size_t a = 0; a < per_agent.size(); ++a)
    for (Detection d : per_agent[a]) {
      d.box = transform_box(d.box, poses[a], poses[ego_index]);
      pooled.push_back(d);
    }
  return nms(std::move(pooled), iou_thresh);
}

std::string format_detection(int scene_id, const Detection& d) {
  char buf[160];
  std::snprintf(buf, sizeof(buf), "%d %.6f %.6f %.6f %.6f %.6f %.6f", scene_id, d.score, d.box.cx,
                d.box.cy, d.box.w, d.box.l, d.box.yaw);
  return buf;
}

}  // namespace coopbev::detect
