#pragma once

#include <vector>

#include "coopbev/ad/ops.hpp"

namespace coopbev::attn {

// Axis-decomposed window partitions over a stack of N agent maps [H,W,C].
// Both partitions are pure permutations, so they invert bitwise.
//
// Local: dense PxP windows. Window s = (i/P)*(W/P) + (j/P) holds token
// a*P*P + (i%P)*P + (j%P) for agent a's cell (i,j)  ->  [(H/P)*(W/P), N*P*P, C].
//
// Global: sparse stride-P stripes. Window s = (i%P)*P + (j%P) holds token
// a*G + (i/P)*(W/P) + (j/P) with G = (H/P)*(W/P)     ->  [P*P, N*G, C].
// Every window sees all agents, so global attention is cross-agent.
ad::TensorPtr partition_local(const std::vector<ad::TensorPtr>& maps, int p);
ad::TensorPtr partition_global(const std::vector<ad::TensorPtr>& maps, int p);

// Inverse for one agent's token rows ([S, P*P, C] local, [P*P, G, C] global).
ad::TensorPtr unpartition_local(const ad::TensorPtr& tokens, int h, int w, int p);
ad::TensorPtr unpartition_global(const ad::TensorPtr& tokens, int h, int w, int p);

// The same permutations applied to per-cell validity masks [H,W] -> [S, T].
ad::MaskPtr partition_local_mask(const std::vector<ad::MaskPtr>& valid, int p);
ad::MaskPtr partition_global_mask(const std::vector<ad::MaskPtr>& valid, int p);

// Per-agent global layout [N*P*P, G, C]: each window holds a single agent's
// stripe, matching the single-collective shape convention. Kept for shape
// parity checks; the cross-agent layout above is what fusion uses.
ad::TensorPtr partition_global_striped(const std::vector<ad::TensorPtr>& maps, int p);

}  // namespace coopbev::attn
