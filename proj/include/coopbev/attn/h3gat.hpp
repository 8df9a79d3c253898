#pragma once

#include <array>
#include <string>
#include <vector>

#include "coopbev/ad/ops.hpp"
#include "coopbev/ad/param_store.hpp"
#include "coopbev/attn/modality.hpp"

namespace coopbev::attn {

// One typed pre-norm transformer block. Node-typed tensors are indexed by
// the token's modality; edge-typed tensors by (receiver, sender) modality.
struct BlockParams {
  int channels = 0;
  int heads = 0;
  int mlp_ratio = 4;
  std::array<ad::TensorPtr, kNumModalities> wq, bq, wk, bk, wo, bo;
  std::array<ad::TensorPtr, kNumModalities> ln1_g, ln1_b, ln2_g, ln2_b;
  std::array<ad::TensorPtr, kNumModalities> mlp_w1, mlp_b1, mlp_w2, mlp_b2;
  std::array<ad::TensorPtr, kNumEdgeTypes> wv, bv;
  std::array<ad::TensorPtr, kNumEdgeTypes> we;  // per-head relation matrices [h,d,d]
};

// Registers every tensor under "<prefix>." with owners cam/lidar for
// node-typed weights and edge_cc/cl/lc/ll for edge-typed ones. Weight
// matrices draw Xavier values keyed by name; relation matrices start as the
// identity so an untyped collective reduces to plain attention.
BlockParams register_block_params(ad::ParamStore& ps, const std::string& prefix, int channels, int heads,
                                  int mlp_ratio, uint64_t seed);

struct AttnStats {
  int fully_masked_rows = 0;
};

// Updates the receiver's token rows [recv_start, recv_start+recv_len) of
// x [S,T,C]: pre-norm typed attention over all unmasked tokens, residual,
// then the receiver-typed MLP. token_type[t] gives row t's modality (shared
// across windows); key_valid [S,T] gates keys. Returns [S, recv_len, C].
ad::TensorPtr h3gat_block(const BlockParams& p, const ad::TensorPtr& x,
                          const std::vector<Modality>& token_type, int recv_start, int recv_len,
                          Modality recv_type, const ad::MaskPtr& key_valid, AttnStats* stats = nullptr);

}  // namespace coopbev::attn
