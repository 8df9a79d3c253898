#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "coopbev/attn/h3gat.hpp"
#include "coopbev/geom/pose.hpp"
#include "coopbev/geom/warp.hpp"

namespace coopbev::fusion {

struct AgentState {
  uint32_t id = 0;
  attn::Modality modality = attn::Modality::kLidar;
  geom::Pose2 pose;          // agent -> world
  ad::TensorPtr features;    // [H,W,C] in the agent's own frame
};

struct FusionSpec {
  int channels = 32;
  int heads = 4;
  int window = 4;      // partition size P
  int iterations = 2;  // rounds of local+global updates
  int mlp_ratio = 4;
  int rate = 1;        // channel compression factor for broadcast messages
  double range = 50.0; // sensing radius for neighbor validity
};

// Per-iteration distinct local and global blocks, plus per-modality 1x1
// compress/expand convolutions applied to broadcast messages.
struct FusionModel {
  FusionSpec spec;
  std::vector<attn::BlockParams> local_blocks;
  std::vector<attn::BlockParams> global_blocks;
  std::array<ad::TensorPtr, attn::kNumModalities> comp_w, comp_b;
  std::array<ad::TensorPtr, attn::kNumModalities> dec_w, dec_b;
};

FusionModel register_fusion_model(ad::ParamStore& ps, const std::string& prefix, const FusionSpec& spec,
                                  uint64_t seed);

struct FusionStats {
  int fully_masked_rows = 0;
  int messages = 0;
  int64_t payload_bytes = 0;  // f32 wire payload received by the ego
};

// The ego's fused map [H,W,C]. The ego holds its own raw features plus each
// neighbor's compressed broadcast; it then simulates the whole collective
// graph: every round updates all nodes with windowed local attention over
// pose-aligned tokens, then sparse global attention over stride-P stripes.
// Internally agents process in ascending-id order, so any permutation of
// `agents` yields a bitwise identical result.
ad::TensorPtr fuse_for_ego(const FusionModel& fm, const std::vector<AgentState>& agents, int ego_index,
                           const geom::BevGrid& grid, FusionStats* stats = nullptr);

}  // namespace coopbev::fusion
