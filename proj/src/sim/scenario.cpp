#include "coopbev/sim/scenario.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "json.hpp"

#include "coopbev/ad/tensor.hpp"
#include "coopbev/common/rng.hpp"

namespace coopbev::sim {

using attn::Modality;
using detect::BoxBEV;

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr double kVehicleGap = 0.3;     // clearance between placed vehicles
constexpr double kAgentClearance = 0.5; // agents keep off the vehicles
constexpr int kMaxTries = 400;

// Grow a box by a margin on every side; zero overlap of grown boxes implies
// a real gap between the originals.
BoxBEV inflate(BoxBEV b, double m) {
  b.w += 2.0 * m;
  b.l += 2.0 * m;
  return b;
}

std::string fmt6(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

}  // namespace

double quantize6(double v) { return std::round(v * 1e6) / 1e6; }

Scenario generate_scenario(uint64_t seed, int n_vehicles, int n_agents, double lidar_ratio,
                           double extent_m) {
  if (n_agents < 1) throw ad::ConfigError("a scenario needs at least one agent");
  if (n_vehicles < 0 || extent_m <= 0.0) throw ad::ConfigError("bad scenario parameters");

  Scenario s;
  s.seed = seed;
  s.extent_m = quantize6(extent_m);
  Rng rng(hash_u64(seed, 0x5ce7a1105eedULL));

  const double half = 0.5 * extent_m;
  const double margin = 3.0;  // keep boxes clear of the map edge

  for (int v = 0; v < n_vehicles; ++v) {
    bool placed = false;
    for (int attempt = 0; attempt < kMaxTries && !placed; ++attempt) {
      BoxBEV b;
      b.cx = quantize6(rng.uniform(-half + margin, half - margin));
      b.cy = quantize6(rng.uniform(-half + margin, half - margin));
      b.w = quantize6(rng.uniform(1.8, 2.2));
      b.l = quantize6(rng.uniform(4.0, 5.0));
      b.yaw = quantize6(rng.uniform(-0.5 * kPi, 0.5 * kPi));
      bool clear = true;
      for (const auto& other : s.vehicles)
        if (detect::rotated_iou(inflate(b, 0.5 * kVehicleGap), inflate(other, 0.5 * kVehicleGap)) >
            0.0) {
          clear = false;
          break;
        }
      if (clear) {
        s.vehicles.push_back(b);
        placed = true;
      }
    }
    if (!placed)
      throw ad::ConfigError("could not place " + std::to_string(n_vehicles) + " vehicles in " +
                            std::to_string(extent_m) + " m");
  }

  for (int a = 0; a < n_agents; ++a) {
    bool placed = false;
    for (int attempt = 0; attempt < kMaxTries && !placed; ++attempt) {
      AgentSpec ag;
      ag.pose.x = quantize6(rng.uniform(-half + margin, half - margin));
      ag.pose.y = quantize6(rng.uniform(-half + margin, half - margin));
      ag.pose.yaw = quantize6(rng.uniform(-kPi, kPi));
      bool clear = true;
      for (const auto& veh : s.vehicles)
        if (detect::point_in_box(inflate(veh, kAgentClearance), {ag.pose.x, ag.pose.y})) {
          clear = false;
          break;
        }
      if (!clear) continue;
      ag.modality = rng.uniform() < lidar_ratio ? Modality::kLidar : Modality::kCamera;
      s.agents.push_back(ag);
      placed = true;
    }
    if (!placed) throw ad::ConfigError("could not place agents between the vehicles");
  }
  return s;
}

std::string format_scenario(const Scenario& s) {
  std::ostringstream out;
  out << "{\n";
  out << "  \"seed\": " << s.seed << ",\n";
  out << "  \"extent_m\": " << fmt6(s.extent_m) << ",\n";
  out << "  \"vehicles\": [";
  for (std::size_t i = 0; i < s.vehicles.size(); ++i) {
    const auto& b = s.vehicles[i];
    out << (i ? ",\n    " : "\n    ");
    out << "{\"cx\": " << fmt6(b.cx) << ", \"cy\": " << fmt6(b.cy) << ", \"w\": " << fmt6(b.w)
        << ", \"l\": " << fmt6(b.l) << ", \"yaw\": " << fmt6(b.yaw) << "}";
  }
  out << (s.vehicles.empty() ? "]" : "\n  ]") << ",\n";
  out << "  \"agents\": [";
  for (std::size_t i = 0; i < s.agents.size(); ++i) {
    const auto& a = s.agents[i];
    out << (i ? ",\n    " : "\n    ");
    out << "{\"modality\": \"" << attn::modality_name(a.modality) << "\", \"x\": " << fmt6(a.pose.x)
        << ", \"y\": " << fmt6(a.pose.y) << ", \"yaw\": " << fmt6(a.pose.yaw) << "}";
  }
  out << (s.agents.empty() ? "]" : "\n  ]") << "\n";
  out << "}\n";
  return out.str();
}

Scenario parse_scenario(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ad::ConfigError(std::string("scenario parse: ") + e.what());
  }
  Scenario s;
  try {
    s.seed = j.at("seed").get<uint64_t>();
    s.extent_m = j.at("extent_m").get<double>();
    for (const auto& v : j.at("vehicles")) {
      BoxBEV b;
      b.cx = v.at("cx").get<double>();
      b.cy = v.at("cy").get<double>();
      b.w = v.at("w").get<double>();
      b.l = v.at("l").get<double>();
      b.yaw = v.at("yaw").get<double>();
      s.vehicles.push_back(b);
    }
    for (const auto& a : j.at("agents")) {
      AgentSpec ag;
      ag.modality = attn::modality_from_name(a.at("modality").get<std::string>());
      ag.pose.x = a.at("x").get<double>();
      ag.pose.y = a.at("y").get<double>();
      ag.pose.yaw = a.at("yaw").get<double>();
      s.agents.push_back(ag);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ad::ConfigError(std::string("scenario fields: ") + e.what());
  }
  if (s.agents.empty()) throw ad::ConfigError("scenario has no agents");
  return s;
}

void save_scenario(const std::string& path, const Scenario& s) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw ad::ConfigError("cannot write " + path);
  f << format_scenario(s);
}

Scenario load_scenario(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ad::ConfigError("cannot read " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return parse_scenario(ss.str());
}

}  // namespace coopbev::sim
