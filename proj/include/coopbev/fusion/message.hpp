#pragma once

#include <cstdint>
#include <vector>

#include "coopbev/fusion/fuse.hpp"

namespace coopbev::fusion {

// Broadcast wire format, little-endian:
//   u32 magic 'CBM1' | u32 agent_id | u8 modality | u8 rate | u16 zero
//   f64 x | f64 y | f64 yaw | u32 h | u32 w | u32 c | f32 payload[h*w*c]
struct Message {
  uint32_t agent_id = 0;
  attn::Modality modality = attn::Modality::kLidar;
  geom::Pose2 pose;
  uint32_t h = 0, w = 0, c = 0;
  uint8_t rate = 1;
  std::vector<float> payload;
};

constexpr std::size_t kMessageHeaderBytes = 48;

std::vector<uint8_t> encode_message(const Message& m);
Message decode_message(const std::vector<uint8_t>& bytes);

// Compresses the agent's features through its modality bottleneck and packs
// them for the wire. Runs untaped; this is the transport path, not training.
Message make_broadcast(const AgentState& agent, const FusionModel& fm);

// Payload back to a dense [h,w,c] tensor (f32 -> f64 widening).
ad::TensorPtr message_features(const Message& m);

}  // namespace coopbev::fusion
