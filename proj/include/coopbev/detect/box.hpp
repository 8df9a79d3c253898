#pragma once

#include <array>
#include <string>
#include <vector>

#include "coopbev/geom/pose.hpp"

namespace coopbev::detect {

// Oriented BEV box in meters. Canonical form keeps w <= l and
// yaw in (-pi/2, pi/2]; the box is symmetric under yaw -> yaw + pi.
struct BoxBEV {
  double cx = 0.0;
  double cy = 0.0;
  double w = 1.0;  // across, meters
  double l = 1.0;  // along heading, meters
  double yaw = 0.0;
};

BoxBEV canonical_box(BoxBEV b);

// Corner order: counterclockwise starting at (+l/2, +w/2) in box frame.
std::array<geom::Vec2, 4> box_corners(const BoxBEV& b);

bool point_in_box(const BoxBEV& b, geom::Vec2 p);

// Exact intersection-over-union via convex polygon clipping.
// Near-zero-area degenerate boxes give 0.
double rotated_iou(const BoxBEV& a, const BoxBEV& b);

// Re-expresses a box given in `from`'s frame in `to`'s frame.
BoxBEV transform_box(const BoxBEV& b, const geom::Pose2& from, const geom::Pose2& to);

struct Detection {
  BoxBEV box;
  double score = 0.0;
};

// Greedy score-descending suppression of overlaps >= iou_thresh.
std::vector<Detection> nms(std::vector<Detection> dets, double iou_thresh = 0.15,
                           std::size_t max_out = 100);

// All-point interpolated area under the precision/recall curve, detections
// matched to ground truth greedily in score order, one truth per detection.
// No truth anywhere: 1.0 with no detections, else 0.0.
double average_precision(const std::vector<std::vector<Detection>>& dets_per_scene,
                         const std::vector<std::vector<BoxBEV>>& gts_per_scene,
                         double iou_thresh);

// Baselines: everyone detects locally; late fusion pools the boxes in the
// ego frame and suppresses duplicates, no-fusion keeps only the ego's own.
std::vector<Detection> no_fusion(const std::vector<Detection>& ego_dets);
std::vector<Detection> late_fusion(const std::vector<std::vector<Detection>>& per_agent,
                                   const std::vector<geom::Pose2>& poses, int ego_index,
                                   double iou_thresh = 0.15);

// "scene score cx cy w l yaw", fixed 6-decimal, one line per box.
std::string format_detection(int scene_id, const Detection& d);

}  // namespace coopbev::detect
