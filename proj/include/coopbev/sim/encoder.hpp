#pragma once

#include <array>
#include <cstdint>
#include <string>

#include "coopbev/ad/ops.hpp"
#include "coopbev/ad/param_store.hpp"
#include "coopbev/attn/modality.hpp"

namespace coopbev::sim {

struct EncoderSpec {
  int in_channels = 2;
  int channels = 32;
};

// Two 3x3 conv+BN+ReLU stages lifting a raw observation to BEV features.
// Camera and lidar encoders are disjoint parameter sets.
struct EncoderLayer {
  ad::TensorPtr conv1_w, conv1_b, bn1_g, bn1_b, bn1_m, bn1_v;
  ad::TensorPtr conv2_w, conv2_b, bn2_g, bn2_b, bn2_m, bn2_v;
};

struct EncoderModel {
  EncoderSpec spec;
  std::array<EncoderLayer, attn::kNumModalities> per_mod;
};

EncoderModel register_encoder(ad::ParamStore& ps, const std::string& prefix,
                              const EncoderSpec& spec, uint64_t seed);

ad::TensorPtr encode(const EncoderModel& m, const ad::TensorPtr& obs, attn::Modality modality,
                     bool training);

}  // namespace coopbev::sim
