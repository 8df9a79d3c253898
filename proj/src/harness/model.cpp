#include "coopbev/harness/model.hpp"

#include <algorithm>
#include <cmath>

#include "coopbev/common/rng.hpp"
#include "coopbev/sim/sensors.hpp"

namespace coopbev::harness {
namespace {

using ad::ConfigError;

constexpr int kLidarRays = 720;

}  // namespace

ModelBundle register_bundle(ad::ParamStore& ps, const Config& cfg, uint64_t seed) {
  ModelBundle b;
  sim::EncoderSpec es;
  es.in_channels = sim::kObsChannels;
  es.channels = cfg.model.channels;
  b.enc = sim::register_encoder(ps, "enc", es, hash_u64(seed, 1));

  fusion::FusionSpec fs;
  fs.channels = cfg.model.channels;
  fs.heads = cfg.model.heads;
  fs.window = cfg.model.window;
  fs.iterations = cfg.model.iterations;
  fs.mlp_ratio = cfg.model.mlp_ratio;
  fs.rate = cfg.model.rate;
  fs.range = std::max(cfg.ranges.lidar, cfg.ranges.camera);
  b.fuse = fusion::register_fusion_model(ps, "fuse", fs, hash_u64(seed, 2));

  detect::HeadSpec hs;
  hs.channels = cfg.model.channels;
  b.head = detect::register_head(ps, "head", hs, hash_u64(seed, 3));
  return b;
}

int freeze_encoder(ad::ParamStore& ps) {
  int n = 0;
  for (auto& [name, entry] : ps.entries())
    if (name.rfind("enc.", 0) == 0) {
      if (entry.trainable) ++n;
      entry.trainable = false;
      // Untaped encoder forward: nothing upstream needs its gradients.
      entry.tensor->requires_grad = false;
    }
  return n;
}

ad::TensorPtr observe(const sim::Scenario& s, int agent_index, attn::Modality m, const Config& cfg) {
  if (agent_index < 0 || agent_index >= static_cast<int>(s.agents.size()))
    throw ConfigError("observe: agent index out of range");
  geom::BevGrid grid = cfg.bev();
  if (m == attn::Modality::kLidar)
    return sim::raycast_occupancy(s, s.agents[agent_index].pose, grid, kLidarRays, cfg.ranges.lidar);
  return sim::camera_observe(s, agent_index, grid, cfg.ranges.camera, sim::CameraNoise{});
}

ad::TensorPtr ObsCache::get(const sim::Scenario& s, int agent_index, attn::Modality m,
                            const Config& cfg) {
  auto key = std::make_tuple(s.seed, agent_index, static_cast<int>(m));
  {
    std::lock_guard<std::mutex> lock(mu_);
    auto it = cache_.find(key);
    if (it != cache_.end()) return it->second;
  }
  ad::TensorPtr obs = observe(s, agent_index, m, cfg);
  std::lock_guard<std::mutex> lock(mu_);
  return cache_.emplace(key, obs).first->second;
}

void ObsCache::clear() {
  std::lock_guard<std::mutex> lock(mu_);
  cache_.clear();
}

std::vector<detect::BoxBEV> gt_boxes_ego(const sim::Scenario& s, int ego_index, const Config& cfg) {
  geom::BevGrid grid = cfg.bev();
  geom::Pose2 world{0.0, 0.0, 0.0};
  std::vector<detect::BoxBEV> out;
  for (const detect::BoxBEV& v : s.vehicles) {
    detect::BoxBEV b = detect::transform_box(v, world, s.agents[ego_index].pose);
    if (std::abs(b.cx) <= grid.extent_x() / 2 && std::abs(b.cy) <= grid.extent_y() / 2)
      out.push_back(b);
  }
  return out;
}

PipelineResult run_pipeline(const ModelBundle& bundle, const sim::Scenario& s,
                            const std::vector<attn::Modality>& modalities, int ego_index,
                            const Config& cfg, FuseMode mode, bool training, bool enc_training,
                            ObsCache* cache) {
  int n = static_cast<int>(s.agents.size());
  if (static_cast<int>(modalities.size()) != n)
    throw ConfigError("run_pipeline: modality override must cover every agent");
  if (ego_index < 0 || ego_index >= n) throw ConfigError("run_pipeline: ego index out of range");

  auto obs_for = [&](int i) {
    return cache ? cache->get(s, i, modalities[i], cfg) : observe(s, i, modalities[i], cfg);
  };
  bool enc_train = training && enc_training;

  PipelineResult res;
  ad::TensorPtr fused;
  if (mode == FuseMode::kNone || n == 1) {
    fused = sim::encode(bundle.enc, obs_for(ego_index), modalities[ego_index], enc_train);
    if (mode == FuseMode::kHmvit) {
      geom::BevGrid grid = cfg.bev();
      std::vector<fusion::AgentState> ags(1);
      ags[0] = {0, modalities[ego_index], s.agents[ego_index].pose, fused};
      fused = fusion::fuse_for_ego(bundle.fuse, ags, 0, grid, &res.stats);
    }
  } else {
    geom::BevGrid grid = cfg.bev();
    std::vector<fusion::AgentState> ags(n);
    for (int i = 0; i < n; ++i) {
      ad::TensorPtr feats = sim::encode(bundle.enc, obs_for(i), modalities[i], enc_train);
      ags[i] = {static_cast<uint32_t>(i), modalities[i], s.agents[i].pose, feats};
    }
    fused = fusion::fuse_for_ego(bundle.fuse, ags, ego_index, grid, &res.stats);
  }
  res.out = detect::head_forward(bundle.head, fused, modalities[ego_index], training);
  return res;
}

std::vector<attn::Modality> stored_modalities(const sim::Scenario& s) {
  std::vector<attn::Modality> out;
  out.reserve(s.agents.size());
  for (const sim::AgentSpec& a : s.agents) out.push_back(a.modality);
  return out;
}

std::vector<attn::Modality> uniform_modalities(const sim::Scenario& s, attn::Modality m) {
  return std::vector<attn::Modality>(s.agents.size(), m);
}

}  // namespace coopbev::harness
