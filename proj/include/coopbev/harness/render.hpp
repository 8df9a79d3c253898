#pragma once

#include <string>
#include <vector>

#include "coopbev/detect/box.hpp"
#include "coopbev/harness/config.hpp"
#include "coopbev/sim/scenario.hpp"

namespace coopbev::harness {

// World meters -> pixels: px = (x + extent/2) * kPxPerMeter,
// py = (extent/2 - y) * kPxPerMeter (ground y up, image y down).
constexpr double kPxPerMeter = 12.0;

geom::Vec2 svg_point(double extent_m, geom::Vec2 world);

// Static SVG of the scene: extent frame, per-agent sensing discs and heading
// ticks, green ground-truth boxes, red detection boxes. Boxes arrive in the
// world frame. Output bytes are a pure function of the inputs.
std::string render_svg(const sim::Scenario& s, const std::vector<detect::Detection>& dets,
                       const std::vector<detect::BoxBEV>& gts, const RangeConfig& ranges);

void save_svg(const std::string& path, const std::string& svg);

}  // namespace coopbev::harness
