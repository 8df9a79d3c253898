#include "coopbev/attn/h3gat.hpp"

#include <cmath>
#include <functional>

#include "coopbev/ad/init.hpp"

namespace coopbev::attn {

using namespace ad;

namespace {

// Rows of each modality take their own transform; rows of the other modality
// are multiplied by an exact 0.0, so absent-type parameters can never leak
// into present-type outputs. Single-type inputs skip the blend outright.
TensorPtr blend_rows_by_type(const std::vector<Modality>& token_type,
                             const std::function<TensorPtr(Modality)>& f) {
  bool present[kNumModalities] = {false, false};
  for (Modality t : token_type) present[static_cast<int>(t)] = true;
  if (!present[1]) return f(Modality::kCamera);
  if (!present[0]) return f(Modality::kLidar);

  const int t_count = static_cast<int>(token_type.size());
  TensorPtr acc;
  for (int m = 0; m < kNumModalities; ++m) {
    auto rowmask = Tensor::create({t_count, 1});
    for (int t = 0; t < t_count; ++t)
      rowmask->data[static_cast<std::size_t>(t)] = static_cast<int>(token_type[static_cast<std::size_t>(t)]) == m ? 1.0 : 0.0;
    auto term = mul(f(static_cast<Modality>(m)), rowmask);
    acc = acc ? add(acc, term) : term;
  }
  return acc;
}

}  // namespace

BlockParams register_block_params(ParamStore& ps, const std::string& prefix, int channels, int heads,
                                  int mlp_ratio, uint64_t seed) {
  if (channels % heads != 0) throw ConfigError("channels must divide by heads");
  BlockParams bp;
  bp.channels = channels;
  bp.heads = heads;
  bp.mlp_ratio = mlp_ratio;
  const int d = channels / heads;
  const int hidden = channels * mlp_ratio;

  auto mat = [&](const std::string& name, const std::string& owner, int in, int out) {
    auto t = Tensor::create({in, out});
    Rng rng(param_seed(seed, prefix + "." + name));
    fill_xavier_uniform(*t, in, out, rng);
    return ps.add(prefix + "." + name, t, owner);
  };
  auto vec = [&](const std::string& name, const std::string& owner, int n, double fill) {
    return ps.add(prefix + "." + name, Tensor::full({n}, fill), owner);
  };

  for (int m = 0; m < kNumModalities; ++m) {
    const std::string mn = modality_name(static_cast<Modality>(m));
    bp.wq[m] = mat("wq." + mn, mn, channels, channels);
    bp.bq[m] = vec("bq." + mn, mn, channels, 0.0);
    bp.wk[m] = mat("wk." + mn, mn, channels, channels);
    bp.bk[m] = vec("bk." + mn, mn, channels, 0.0);
    bp.wo[m] = mat("wo." + mn, mn, channels, channels);
    bp.bo[m] = vec("bo." + mn, mn, channels, 0.0);
    bp.ln1_g[m] = vec("ln1.gamma." + mn, mn, channels, 1.0);
    bp.ln1_b[m] = vec("ln1.beta." + mn, mn, channels, 0.0);
    bp.ln2_g[m] = vec("ln2.gamma." + mn, mn, channels, 1.0);
    bp.ln2_b[m] = vec("ln2.beta." + mn, mn, channels, 0.0);
    bp.mlp_w1[m] = mat("mlp.w1." + mn, mn, channels, hidden);
    bp.mlp_b1[m] = vec("mlp.b1." + mn, mn, hidden, 0.0);
    bp.mlp_w2[m] = mat("mlp.w2." + mn, mn, hidden, channels);
    bp.mlp_b2[m] = vec("mlp.b2." + mn, mn, channels, 0.0);
  }
  for (int e = 0; e < kNumEdgeTypes; ++e) {
    const std::string en = edge_name(e);
    const std::string owner = std::string("edge_") + en;
    bp.wv[e] = mat("wv." + en, owner, channels, channels);
    bp.bv[e] = vec("bv." + en, owner, channels, 0.0);
    auto we = Tensor::create({heads, d, d});
    for (int h = 0; h < heads; ++h)
      for (int i = 0; i < d; ++i) we->at({h, i, i}) = 1.0;
    bp.we[e] = ps.add(prefix + ".we." + en, we, owner);
  }
  return bp;
}

TensorPtr h3gat_block(const BlockParams& p, const TensorPtr& x, const std::vector<Modality>& token_type,
                      int recv_start, int recv_len, Modality recv_type, const MaskPtr& key_valid,
                      AttnStats* stats) {
  if (x->rank() != 3) throw DimError("h3gat_block expects [S,T,C]");
  const int s_count = x->shape[0], t_count = x->shape[1], c = x->shape[2];
  if (static_cast<int>(token_type.size()) != t_count) throw DimError("token_type length mismatch");
  if (key_valid->shape != Shape{s_count, t_count}) throw DimError("key_valid must be [S,T]");
  if (recv_start < 0 || recv_len <= 0 || recv_start + recv_len > t_count)
    throw DimError("receiver row range out of bounds");
  const int r = static_cast<int>(recv_type);
  const int d = c / p.heads;

  auto ln_all = blend_rows_by_type(token_type, [&](Modality m) {
    return layer_norm(x, p.ln1_g[static_cast<int>(m)], p.ln1_b[static_cast<int>(m)]);
  });

  auto xq = slice_axis(ln_all, 1, recv_start, recv_len);
  auto q = split_heads(linear(xq, p.wq[r], p.bq[r]), p.heads);  // [S,h,Tq,d]

  auto k = split_heads(blend_rows_by_type(token_type,
                                          [&](Modality m) {
                                            return linear(ln_all, p.wk[static_cast<int>(m)], p.bk[static_cast<int>(m)]);
                                          }),
                       p.heads);  // [S,h,T,d]
  auto v = split_heads(blend_rows_by_type(token_type,
                                          [&](Modality m) {
                                            const int e = edge_index(recv_type, m);
                                            return linear(ln_all, p.wv[e], p.bv[e]);
                                          }),
                       p.heads);

  // Relation transform per sender type: key j becomes We[edge] @ k_j, so the
  // logit is q . We . k for that directed edge.
  auto kt = blend_rows_by_type(token_type, [&](Modality m) {
    const int e = edge_index(recv_type, m);
    return matmul(k, transpose_last2(p.we[e]));
  });

  auto logits = scale(matmul(q, transpose_last2(kt)), 1.0 / std::sqrt(static_cast<double>(d)));

  auto mask4 = std::make_shared<Mask>(*key_valid);
  mask4->shape = {s_count, 1, 1, t_count};
  auto attn = masked_softmax(logits, mask4, stats ? &stats->fully_masked_rows : nullptr);

  auto ctx = merge_heads(matmul(attn, v));  // [S,Tq,C]
  auto o = linear(ctx, p.wo[r], p.bo[r]);

  auto x1 = add(slice_axis(x, 1, recv_start, recv_len), o);
  auto ln2 = layer_norm(x1, p.ln2_g[r], p.ln2_b[r]);
  auto mlp = linear(gelu(linear(ln2, p.mlp_w1[r], p.mlp_b1[r])), p.mlp_w2[r], p.mlp_b2[r]);
  return add(x1, mlp);
}

}  // namespace coopbev::attn
