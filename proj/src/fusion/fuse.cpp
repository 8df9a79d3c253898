#include "coopbev/fusion/fuse.hpp"

#include <algorithm>
#include <numeric>

#include "coopbev/ad/init.hpp"
#include "coopbev/attn/partition.hpp"

namespace coopbev::fusion {

using namespace ad;
using namespace attn;
using geom::BevGrid;
using geom::Pose2;

FusionModel register_fusion_model(ParamStore& ps, const std::string& prefix, const FusionSpec& spec,
                                  uint64_t seed) {
  if (spec.channels % spec.rate != 0)
    throw ConfigError("compression rate " + std::to_string(spec.rate) + " must divide channels");
  FusionModel fm;
  fm.spec = spec;
  for (int l = 0; l < spec.iterations; ++l) {
    const std::string base = prefix + ".l" + std::to_string(l);
    fm.local_blocks.push_back(
        register_block_params(ps, base + ".local", spec.channels, spec.heads, spec.mlp_ratio, seed));
    fm.global_blocks.push_back(
        register_block_params(ps, base + ".global", spec.channels, spec.heads, spec.mlp_ratio, seed));
  }
  const int cc = spec.channels / spec.rate;
  for (int m = 0; m < kNumModalities; ++m) {
    const std::string mn = modality_name(static_cast<Modality>(m));
    auto cw = Tensor::create({1, 1, spec.channels, cc});
    {
      Rng rng(param_seed(seed, prefix + ".comp.w." + mn));
      fill_xavier_uniform(*cw, spec.channels, cc, rng);
    }
    fm.comp_w[m] = ps.add(prefix + ".comp.w." + mn, cw, mn);
    fm.comp_b[m] = ps.add(prefix + ".comp.b." + mn, Tensor::zeros({cc}), mn);
    auto dw = Tensor::create({1, 1, cc, spec.channels});
    {
      Rng rng(param_seed(seed, prefix + ".dec.w." + mn));
      fill_xavier_uniform(*dw, cc, spec.channels, rng);
    }
    fm.dec_w[m] = ps.add(prefix + ".dec.w." + mn, dw, mn);
    fm.dec_b[m] = ps.add(prefix + ".dec.b." + mn, Tensor::zeros({spec.channels}), mn);
  }
  return fm;
}

TensorPtr fuse_for_ego(const FusionModel& fm, const std::vector<AgentState>& agents, int ego_index,
                       const BevGrid& grid, FusionStats* stats) {
  const int n = static_cast<int>(agents.size());
  if (n == 0) throw ConfigError("fuse_for_ego: no agents");
  if (ego_index < 0 || ego_index >= n) throw ConfigError("fuse_for_ego: bad ego index");
  const FusionSpec& spec = fm.spec;
  for (const auto& a : agents) {
    if (a.features->shape != Shape{grid.h, grid.w, spec.channels})
      throw DimError("agent features " + shape_str(a.features->shape) + " do not match grid/channels");
  }

  // Canonical processing order: ascending agent id.
  std::vector<int> canon(static_cast<std::size_t>(n));
  std::iota(canon.begin(), canon.end(), 0);
  std::sort(canon.begin(), canon.end(), [&](int a, int b) { return agents[a].id < agents[b].id; });
  for (int i = 1; i < n; ++i)
    if (agents[canon[i - 1]].id == agents[canon[i]].id) throw ConfigError("duplicate agent id");
  std::vector<int> slot(static_cast<std::size_t>(n));  // agent index -> canonical slot
  for (int s = 0; s < n; ++s) slot[canon[s]] = s;

  std::vector<Modality> slot_mod(static_cast<std::size_t>(n));
  for (int s = 0; s < n; ++s) slot_mod[s] = agents[canon[s]].modality;

  // Initial node states in each agent's own frame: the ego keeps raw
  // features, every neighbor enters through its modality's compress/expand
  // bottleneck, exactly like the broadcast it would have sent.
  std::vector<TensorPtr> state(static_cast<std::size_t>(n));
  for (int s = 0; s < n; ++s) {
    const AgentState& ag = agents[canon[s]];
    if (canon[s] == ego_index) {
      state[s] = ag.features;
    } else {
      const int m = static_cast<int>(ag.modality);
      auto packed = conv2d(ag.features, fm.comp_w[m], fm.comp_b[m]);
      state[s] = conv2d(packed, fm.dec_w[m], fm.dec_b[m]);
      if (stats) {
        stats->messages += 1;
        stats->payload_bytes += static_cast<int64_t>(packed->numel()) * 4;
      }
    }
  }

  // Pose-pair warps and validity, fixed across iterations.
  std::vector<std::vector<geom::WarpPlanPtr>> plan(static_cast<std::size_t>(n));
  std::vector<std::vector<MaskPtr>> valid(static_cast<std::size_t>(n));
  for (int r = 0; r < n; ++r) {
    plan[r].resize(static_cast<std::size_t>(n));
    valid[r].resize(static_cast<std::size_t>(n));
    for (int s = 0; s < n; ++s) {
      if (r == s) {
        valid[r][s] = Mask::create({grid.h, grid.w}, true);  // own cells always count
        continue;
      }
      plan[r][s] = geom::build_warp_plan(agents[canon[r]].pose, agents[canon[s]].pose, grid);
      auto fov = geom::fov_mask(agents[canon[r]].pose, agents[canon[s]].pose, grid, spec.range);
      auto v = Mask::create({grid.h, grid.w});
      const auto& inb = plan[r][s]->valid;
      for (std::size_t k = 0; k < v->data.size(); ++k) v->data[k] = inb[k] && fov->data[k];
      valid[r][s] = v;
    }
  }

  // Receiver-side token bookkeeping, also fixed across iterations.
  const int p = spec.window;
  const int pp = p * p;
  const int g_count = (grid.h / p) * (grid.w / p);
  std::vector<Modality> local_types, global_types;
  for (int s = 0; s < n; ++s) {
    local_types.insert(local_types.end(), static_cast<std::size_t>(pp), slot_mod[s]);
    global_types.insert(global_types.end(), static_cast<std::size_t>(g_count), slot_mod[s]);
  }
  std::vector<MaskPtr> local_mask(static_cast<std::size_t>(n)), global_mask(static_cast<std::size_t>(n));
  for (int r = 0; r < n; ++r) {
    std::vector<MaskPtr> stack;
    for (int s = 0; s < n; ++s) stack.push_back(valid[r][s]);
    local_mask[r] = partition_local_mask(stack, p);
    global_mask[r] = partition_global_mask(stack, p);
  }

  auto run_pass = [&](const std::vector<TensorPtr>& in, const BlockParams& bp, bool global) {
    std::vector<TensorPtr> out(static_cast<std::size_t>(n));
    for (int r = 0; r < n; ++r) {
      std::vector<TensorPtr> stack(static_cast<std::size_t>(n));
      for (int s = 0; s < n; ++s)
        stack[s] = (s == r) ? in[s] : geom::warp_features(in[s], plan[r][s]);
      AttnStats as;
      if (global) {
        auto tokens = partition_global(stack, p);
        auto upd = h3gat_block(bp, tokens, global_types, r * g_count, g_count, slot_mod[r], global_mask[r], &as);
        out[r] = unpartition_global(upd, grid.h, grid.w, p);
      } else {
        auto tokens = partition_local(stack, p);
        auto upd = h3gat_block(bp, tokens, local_types, r * pp, pp, slot_mod[r], local_mask[r], &as);
        out[r] = unpartition_local(upd, grid.h, grid.w, p);
      }
      if (stats) stats->fully_masked_rows += as.fully_masked_rows;
    }
    return out;
  };

  for (int l = 0; l < spec.iterations; ++l) {
    state = run_pass(state, fm.local_blocks[static_cast<std::size_t>(l)], false);
    state = run_pass(state, fm.global_blocks[static_cast<std::size_t>(l)], true);
  }
  return state[slot[ego_index]];
}

}  // namespace coopbev::fusion
