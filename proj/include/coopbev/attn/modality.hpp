#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace coopbev::attn {

enum class Modality : uint8_t { kCamera = 0, kLidar = 1 };
constexpr int kNumModalities = 2;
constexpr int kNumEdgeTypes = kNumModalities * kNumModalities;

inline const char* modality_name(Modality m) { return m == Modality::kCamera ? "cam" : "lidar"; }

inline Modality modality_from_name(const std::string& s) {
  if (s == "cam" || s == "camera") return Modality::kCamera;
  if (s == "lidar") return Modality::kLidar;
  throw std::runtime_error("unknown modality: " + s);
}

// Directed edge receiver <- sender.
inline int edge_index(Modality receiver, Modality sender) {
  return static_cast<int>(receiver) * kNumModalities + static_cast<int>(sender);
}

inline const char* edge_name(int e) {
  static const char* names[kNumEdgeTypes] = {"cc", "cl", "lc", "ll"};
  return names[e];
}

}  // namespace coopbev::attn
