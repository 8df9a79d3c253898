#pragma once

#include <map>
#include <mutex>
#include <tuple>
#include <vector>

#include "coopbev/common/rng.hpp"
#include "coopbev/detect/head.hpp"
#include "coopbev/fusion/fuse.hpp"
#include "coopbev/harness/config.hpp"
#include "coopbev/sim/encoder.hpp"
#include "coopbev/sim/scenario.hpp"

namespace coopbev::harness {

// Every pipeline (trainer, evaluator, tools) derives its parameter init from
// the config seed through this, so a checkpoint always meets an identically
// shaped and identically initialized store.
inline uint64_t bundle_seed(const Config& cfg) { return hash_u64(cfg.training.seed, 0xb0075ULL); }

struct ModelBundle {
  sim::EncoderModel enc;
  fusion::FusionModel fuse;
  detect::HeadModel head;
};

// Registers encoder/fusion/head under the prefixes "enc"/"fuse"/"head".
ModelBundle register_bundle(ad::ParamStore& ps, const Config& cfg, uint64_t seed);

// Marks every "enc."-prefixed entry non-trainable; returns how many.
int freeze_encoder(ad::ParamStore& ps);

enum class FuseMode { kNone, kHmvit };

ad::TensorPtr observe(const sim::Scenario& s, int agent_index, attn::Modality m, const Config& cfg);

// Observations are pure functions of (scenario seed, agent, modality) for a
// fixed grid/range config, so one cache serves a whole run. Thread-safe; a
// racing miss just recomputes the same deterministic raster.
class ObsCache {
 public:
  ad::TensorPtr get(const sim::Scenario& s, int agent_index, attn::Modality m, const Config& cfg);
  void clear();

 private:
  std::mutex mu_;
  std::map<std::tuple<uint64_t, int, int>, ad::TensorPtr> cache_;
};

// Ground truth in the ego frame, restricted to centers on the ego raster
// (the scored detection range).
std::vector<detect::BoxBEV> gt_boxes_ego(const sim::Scenario& s, int ego_index, const Config& cfg);

struct PipelineResult {
  detect::HeadOutput out;
  fusion::FusionStats stats;
};

// modalities[i] overrides agent i's sensor and must cover every agent.
// enc_training=false pins the encoder's batch norm to eval statistics even
// while the rest of the model trains (the stage-2 backbone freeze).
PipelineResult run_pipeline(const ModelBundle& bundle, const sim::Scenario& s,
                            const std::vector<attn::Modality>& modalities, int ego_index,
                            const Config& cfg, FuseMode mode, bool training, bool enc_training,
                            ObsCache* cache = nullptr);

std::vector<attn::Modality> stored_modalities(const sim::Scenario& s);
std::vector<attn::Modality> uniform_modalities(const sim::Scenario& s, attn::Modality m);

}  // namespace coopbev::harness
