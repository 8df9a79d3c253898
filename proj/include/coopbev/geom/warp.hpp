#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <vector>

#include "coopbev/ad/ops.hpp"
#include "coopbev/geom/pose.hpp"

namespace coopbev::geom {

// Precomputed resampling of a sender's BEV grid onto a receiver's grid.
// Destination cells whose source point lands exactly on a source cell center
// take the direct-copy path, so identity and whole-cell shifts or quarter
// turns reproduce source values bitwise.
struct WarpPlan {
  enum Kind : uint8_t { kOutside = 0, kExact = 1, kBilinear = 2 };

  int h = 0, w = 0;
  std::vector<uint8_t> kind;                    // per destination cell
  std::vector<int32_t> exact_src;               // flat source index (kExact)
  std::vector<std::array<int32_t, 4>> corners;  // flat source indices (kBilinear)
  std::vector<std::array<double, 4>> weights;
  std::vector<uint8_t> valid;  // in-bounds flag per destination cell

  int64_t cells() const { return static_cast<int64_t>(h) * w; }
};

using WarpPlanPtr = std::shared_ptr<const WarpPlan>;

// receiver/sender are agent->world poses; both agents share the grid spec.
// Shared ownership: recorded backward nodes keep their plan alive.
WarpPlanPtr build_warp_plan(const Pose2& receiver, const Pose2& sender, const BevGrid& grid);

// Resamples src [H,W,C] through the plan; outside cells come back zero.
// Differentiable: gradients scatter through the same weights.
ad::TensorPtr warp_features(const ad::TensorPtr& src, const WarpPlanPtr& plan);

// True where the receiver's cell center lies within `radius` of the sender.
// Shape [H,W]; combine with WarpPlan::valid for full neighbor validity.
ad::MaskPtr fov_mask(const Pose2& receiver, const Pose2& sender, const BevGrid& grid, double radius);

}  // namespace coopbev::geom
