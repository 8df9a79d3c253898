#pragma once

#include <string>

#include "coopbev/ad/tensor.hpp"
#include "coopbev/common/rng.hpp"

namespace coopbev::ad {

// Every parameter draws from its own stream keyed by (seed, name), so adding
// or removing parameters never shifts anyone else's initial values.
inline uint64_t param_seed(uint64_t global_seed, const std::string& name) {
  return hash_str(hash_u64(0x5eedba5eULL, global_seed), name);
}

inline void fill_xavier_uniform(Tensor& t, int fan_in, int fan_out, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  for (auto& v : t.data) v = rng.uniform(-limit, limit);
}

}  // namespace coopbev::ad
