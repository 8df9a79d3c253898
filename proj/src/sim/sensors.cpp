#include "coopbev/sim/sensors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "coopbev/common/rng.hpp"

namespace coopbev::sim {

using ad::Tensor;
using ad::TensorPtr;
using detect::BoxBEV;
using geom::BevGrid;
using geom::Pose2;
using geom::Vec2;

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr double kInf = std::numeric_limits<double>::infinity();

// World point -> agent frame.
Vec2 to_agent(const Pose2& agent, Vec2 p) {
  const double c = std::cos(agent.yaw), s = std::sin(agent.yaw);
  const double dx = p.x - agent.x, dy = p.y - agent.y;
  return {c * dx + s * dy, -s * dx + c * dy};
}

// Cell of an agent-frame point, or false when off the raster.
bool point_cell(const BevGrid& g, Vec2 p_agent, int* i, int* j) {
  const Vec2 cc = g.cell_coords(p_agent);
  const int ci = static_cast<int>(std::floor(cc.x + 0.5));
  const int cj = static_cast<int>(std::floor(cc.y + 0.5));
  if (ci < 0 || ci >= g.h || cj < 0 || cj >= g.w) return false;
  *i = ci;
  *j = cj;
  return true;
}

}  // namespace

double ray_first_hit(const std::vector<BoxBEV>& boxes, Vec2 origin, double angle,
                     double max_range, int skip_box) {
  const double ux = std::cos(angle), uy = std::sin(angle);
  double best = kInf;
  for (std::size_t b = 0; b < boxes.size(); ++b) {
    if (static_cast<int>(b) == skip_box) continue;
    const auto corners = detect::box_corners(boxes[b]);
    for (int e = 0; e < 4; ++e) {
      const Vec2 a = corners[e], c = corners[(e + 1) % 4];
      const double ex = c.x - a.x, ey = c.y - a.y;
      const double denom = ux * ey - uy * ex;
      if (std::abs(denom) < 1e-12) continue;  // ray parallel to the edge
      const double rx = a.x - origin.x, ry = a.y - origin.y;
      const double t = (rx * ey - ry * ex) / denom;  // along the ray
      const double s = (rx * uy - ry * ux) / denom;  // along the edge
      if (t > 1e-9 && s >= 0.0 && s <= 1.0) best = std::min(best, t);
    }
  }
  return best <= max_range ? best : kInf;
}

TensorPtr raycast_occupancy(const Scenario& s, const Pose2& agent, const BevGrid& grid, int n_rays,
                            double max_range) {
  if (n_rays < 90) throw ad::ConfigError("too few rays for boundary coverage");
  auto obs = Tensor::zeros({grid.h, grid.w, kObsChannels});
  const Vec2 origin{agent.x, agent.y};
  for (int r = 0; r < n_rays; ++r) {
    const double local = 2.0 * kPi * r / n_rays;
    const double d = ray_first_hit(s.vehicles, origin, agent.yaw + local, max_range);
    if (!std::isfinite(d)) continue;
    const Vec2 hit_w{origin.x + d * std::cos(agent.yaw + local),
                     origin.y + d * std::sin(agent.yaw + local)};
    int i, j;
    if (!point_cell(grid, to_agent(agent, hit_w), &i, &j)) continue;
    const int64_t base = (static_cast<int64_t>(i) * grid.w + j) * kObsChannels;
    obs->data[base] = 1.0;
    obs->data[base + 1] = std::max(obs->data[base + 1], 1.0 - d / max_range);
  }
  return obs;
}

double camera_sigma(const CameraNoise& n, double d) { return n.sigma0 * (1.0 + d / n.d0); }

TensorPtr camera_observe(const Scenario& s, int agent_index, const BevGrid& grid, double max_range,
                         const CameraNoise& noise) {
  if (agent_index < 0 || agent_index >= static_cast<int>(s.agents.size()))
    throw ad::ConfigError("camera agent index out of range");
  const Pose2 agent = s.agents[agent_index].pose;
  auto obs = Tensor::zeros({grid.h, grid.w, kObsChannels});
  const Vec2 origin{agent.x, agent.y};

  for (std::size_t b = 0; b < s.vehicles.size(); ++b) {
    const BoxBEV& box = s.vehicles[b];
    const double dx = box.cx - origin.x, dy = box.cy - origin.y;
    const double d = std::hypot(dx, dy);
    if (d > max_range || d < 1e-9) continue;
    // Line of sight to the center, other vehicles as occluders.
    const double block =
        ray_first_hit(s.vehicles, origin, std::atan2(dy, dx), d, static_cast<int>(b));
    if (block < d - 1e-6) continue;

    Rng rng(hash_str(hash_u64(hash_u64(s.seed, 0xca3e7aULL), agent_index),
                     std::to_string(b)));
    const double sig = camera_sigma(noise, d);
    const Vec2 jittered{box.cx + sig * rng.normal(), box.cy + sig * rng.normal()};
    const Vec2 center = grid.cell_coords(to_agent(agent, jittered));

    const double sb = noise.blob_sigma;
    const int reach = static_cast<int>(std::ceil(3.0 * sb)) + 1;
    const int ci = static_cast<int>(std::floor(center.x)), cj = static_cast<int>(std::floor(center.y));
    for (int i = std::max(0, ci - reach); i <= std::min(grid.h - 1, ci + reach); ++i)
      for (int j = std::max(0, cj - reach); j <= std::min(grid.w - 1, cj + reach); ++j) {
        const Vec2 cc = grid.cell_center(i, j);
        if (std::hypot(cc.x, cc.y) > max_range) continue;  // stay inside range
        const double di = i - center.x, dj = j - center.y;
        const double g = std::exp(-(di * di + dj * dj) / (2.0 * sb * sb));
        const int64_t base = (static_cast<int64_t>(i) * grid.w + j) * kObsChannels;
        obs->data[base] = std::max(obs->data[base], noise.occupancy_gain * g);
        obs->data[base + 1] = std::max(obs->data[base + 1], g);
      }
  }
  return obs;
}

}  // namespace coopbev::sim
