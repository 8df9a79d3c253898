#pragma once

#include <string>
#include <vector>

#include "coopbev/harness/config.hpp"
#include "coopbev/sim/scenario.hpp"

namespace coopbev::harness {

enum class Split { kTrain, kVal, kTest };

const char* split_name(Split s);

// Disjoint seed streams: train base+i, val base+10000+i, test base+20000+i.
uint64_t split_seed(uint64_t base, Split split, int index);

// Scene built around a blocked line of sight: agent 0 sits where occluder
// vehicles fully cover further vehicles (angular containment, so no ray from
// agent 0 reaches any part of a hidden box), while agent 1 views the hidden
// ones from the side. Extra vehicles stay visible to agent 0. Agent 0 is
// camera, agent 1 lidar; evaluators may reassign modalities freely.
sim::Scenario make_occlusion_scene(uint64_t seed, double extent_m);

// Train/val alternate generic and occlusion layouts (even index generic);
// the test split is occlusion-only so held-out scoring stresses cooperation.
sim::Scenario make_split_scene(const Config& cfg, Split split, int index);

std::vector<sim::Scenario> make_split(const Config& cfg, Split split, int count);

struct GenerateReport {
  int train = 0;
  int val = 0;
  int test = 0;
};

// Writes <out_dir>/<split>/scene_NNNN.json for all three splits.
GenerateReport cmd_generate(const Config& cfg, const std::string& out_dir);

// Loads every scene_*.json in the directory, sorted by filename.
std::vector<sim::Scenario> load_split_dir(const std::string& dir);

}  // namespace coopbev::harness
