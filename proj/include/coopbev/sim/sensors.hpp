#pragma once

#include "coopbev/ad/tensor.hpp"
#include "coopbev/geom/pose.hpp"
#include "coopbev/sim/scenario.hpp"

namespace coopbev::sim {

// Observations are [O,O,2] rasters in the sensing agent's frame:
// channel 0 carries occupancy evidence, channel 1 intensity/semantics.
// All values stay in [0,1] and vanish beyond the sensor range.
constexpr int kObsChannels = 2;

// Distance along the ray (world frame) to the first box edge, or +inf when
// nothing is hit within max_range. skip_box ignores that vehicle's edges.
double ray_first_hit(const std::vector<detect::BoxBEV>& boxes, geom::Vec2 origin, double angle,
                     double max_range, int skip_box = -1);

// Spinning-scanner model: rays fan out in the agent frame; the first edge
// hit per ray marks occupancy 1 and intensity 1 - d/max_range at the hit
// cell. Everything behind a hit stays unobserved.
ad::TensorPtr raycast_occupancy(const Scenario& s, const geom::Pose2& agent,
                                const geom::BevGrid& grid, int n_rays, double max_range);

struct CameraNoise {
  double sigma0 = 0.25;       // position jitter at zero distance, meters
  double d0 = 20.0;           // distance doubling the jitter
  double blob_sigma = 1.0;    // blob footprint, cells
  double occupancy_gain = 0.3;  // weak geometric evidence vs semantics
};

// Jitter scale at distance d: sigma0 * (1 + d / d0).
double camera_sigma(const CameraNoise& n, double d);

// Camera-like model: every line-of-sight vehicle within range becomes a
// Gaussian blob at a jittered center; semantics strong, occupancy weak.
// agent_index selects the sensing agent and keys its jitter stream.
ad::TensorPtr camera_observe(const Scenario& s, int agent_index, const geom::BevGrid& grid,
                             double max_range, const CameraNoise& noise);

}  // namespace coopbev::sim
