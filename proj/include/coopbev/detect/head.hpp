#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "coopbev/ad/ops.hpp"
#include "coopbev/ad/param_store.hpp"
#include "coopbev/attn/modality.hpp"
#include "coopbev/detect/box.hpp"
#include "coopbev/geom/pose.hpp"

namespace coopbev::detect {

// Single size prior for the one vehicle class; offsets are scaled by the
// prior's diagonal so all six regression channels live on similar scales.
constexpr double kAnchorW = 2.0;
constexpr double kAnchorL = 4.5;
inline double anchor_diag() { return std::sqrt(kAnchorW * kAnchorW + kAnchorL * kAnchorL); }

struct HeadSpec {
  int channels = 32;
};

// Two 3x3 conv+BN+ReLU stages then a 1x1 projection to 1 score + 6
// regression channels. Camera and lidar egos own disjoint copies.
struct HeadLayer {
  ad::TensorPtr conv1_w, conv1_b, bn1_g, bn1_b, bn1_m, bn1_v;
  ad::TensorPtr conv2_w, conv2_b, bn2_g, bn2_b, bn2_m, bn2_v;
  ad::TensorPtr out_w, out_b;
};

struct HeadModel {
  HeadSpec spec;
  std::array<HeadLayer, attn::kNumModalities> per_mod;
};

HeadModel register_head(ad::ParamStore& ps, const std::string& prefix, const HeadSpec& spec,
                        uint64_t seed);

struct HeadOutput {
  ad::TensorPtr cls;  // [H,W,1] logits
  ad::TensorPtr reg;  // [H,W,6]
};

HeadOutput head_forward(const HeadModel& m, const ad::TensorPtr& features, attn::Modality ego,
                        bool training);

// Regression channels at a cell: ((cx-cell.x)/diag, (cy-cell.y)/diag,
// log(w/anchor_w), log(l/anchor_l), sin 2yaw, cos 2yaw) of the canonical box.
std::array<double, 6> encode_box(const BoxBEV& b, geom::Vec2 cell);
BoxBEV decode_box(const std::array<double, 6>& r, geom::Vec2 cell);

struct Targets {
  ad::MaskPtr pos;     // [H,W]; positives double as the one-class score target
  ad::TensorPtr reg;   // [H,W,6], zero outside positives
};

// A cell is positive when its center lies inside a box; overlaps resolve to
// the nearest box center.
Targets assign_targets(const std::vector<BoxBEV>& boxes, const geom::BevGrid& grid);

// Mean over cells of -alpha_t (1-p_t)^gamma log p_t with p_t the predicted
// probability of the true class. Differentiable in the logits.
ad::TensorPtr focal_loss(const ad::TensorPtr& logits, const ad::MaskPtr& target,
                         double alpha = 0.25, double gamma = 2.0);

// Mean over positive-cell components of huber(pred-target); exact zero (and
// zero gradient) when nothing is positive.
ad::TensorPtr smooth_l1_masked(const ad::TensorPtr& pred, const ad::TensorPtr& target,
                               const ad::MaskPtr& pos);

struct DetectionLoss {
  ad::TensorPtr total;  // focal + 2 * smooth_l1
  double focal_value = 0.0;
  double reg_value = 0.0;
};

DetectionLoss detection_loss(const HeadOutput& out, const Targets& t, double alpha = 0.25,
                             double gamma = 2.0, double reg_weight = 2.0);

// Thresholded sigmoid scores decoded to boxes, descending by score.
std::vector<Detection> decode_detections(const HeadOutput& out, const geom::BevGrid& grid,
                                         double score_thresh = 0.1);

}  // namespace coopbev::detect
