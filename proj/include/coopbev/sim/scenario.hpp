#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "coopbev/attn/modality.hpp"
#include "coopbev/detect/box.hpp"
#include "coopbev/geom/pose.hpp"

namespace coopbev::sim {

struct AgentSpec {
  attn::Modality modality = attn::Modality::kLidar;
  geom::Pose2 pose;
};

// A world: parked vehicles (the detection targets) plus sensing agents.
// Every coordinate is quantized to 1e-6 at generation so that the decimal
// text form below reloads bit-identically.
struct Scenario {
  uint64_t seed = 0;
  double extent_m = 50.0;
  std::vector<detect::BoxBEV> vehicles;
  std::vector<AgentSpec> agents;
};

double quantize6(double v);

// Deterministic per seed. Vehicles are rejection-placed with a clearance gap
// (pairwise overlap exactly zero); agents land outside every vehicle.
// lidar_ratio is the chance each agent senses with lidar instead of camera.
Scenario generate_scenario(uint64_t seed, int n_vehicles, int n_agents, double lidar_ratio,
                           double extent_m = 50.0);

// Six-decimal fixed-point JSON. parse(format(s)) == s exactly.
std::string format_scenario(const Scenario& s);
Scenario parse_scenario(const std::string& text);

void save_scenario(const std::string& path, const Scenario& s);
Scenario load_scenario(const std::string& path);

}  // namespace coopbev::sim
