#include "coopbev/sim/encoder.hpp"

#include "coopbev/ad/init.hpp"
#include "coopbev/common/rng.hpp"

namespace coopbev::sim {

using namespace coopbev::ad;
using attn::kNumModalities;
using attn::Modality;
using attn::modality_name;

EncoderModel register_encoder(ParamStore& ps, const std::string& prefix, const EncoderSpec& spec,
                              uint64_t seed) {
  EncoderModel em;
  em.spec = spec;
  for (int mi = 0; mi < kNumModalities; ++mi) {
    const std::string mn = modality_name(static_cast<Modality>(mi));
    EncoderLayer& L = em.per_mod[mi];
    auto conv = [&](const std::string& tag, int cin, int cout) {
      auto w = Tensor::create({3, 3, cin, cout});
      Rng rng(param_seed(seed, prefix + "." + tag + ".w." + mn));
      fill_xavier_uniform(*w, 9 * cin, cout, rng);
      return ps.add(prefix + "." + tag + ".w." + mn, w, mn);
    };
    const int c = spec.channels;
    L.conv1_w = conv("conv1", spec.in_channels, c);
    L.conv1_b = ps.add(prefix + ".conv1.b." + mn, Tensor::zeros({c}), mn);
    L.bn1_g = ps.add(prefix + ".bn1.gamma." + mn, Tensor::full({c}, 1.0), mn);
    L.bn1_b = ps.add(prefix + ".bn1.beta." + mn, Tensor::zeros({c}), mn);
    L.bn1_m = ps.add(prefix + ".bn1.mean." + mn, Tensor::zeros({c}), mn, false);
    L.bn1_v = ps.add(prefix + ".bn1.var." + mn, Tensor::full({c}, 1.0), mn, false);
    L.conv2_w = conv("conv2", c, c);
    L.conv2_b = ps.add(prefix + ".conv2.b." + mn, Tensor::zeros({c}), mn);
    L.bn2_g = ps.add(prefix + ".bn2.gamma." + mn, Tensor::full({c}, 1.0), mn);
    L.bn2_b = ps.add(prefix + ".bn2.beta." + mn, Tensor::zeros({c}), mn);
    L.bn2_m = ps.add(prefix + ".bn2.mean." + mn, Tensor::zeros({c}), mn, false);
    L.bn2_v = ps.add(prefix + ".bn2.var." + mn, Tensor::full({c}, 1.0), mn, false);
  }
  return em;
}

TensorPtr encode(const EncoderModel& m, const TensorPtr& obs, Modality modality, bool training) {
  if (obs->rank() != 3 || obs->shape[2] != m.spec.in_channels)
    throw DimError("encode: observation must be [H,W," + std::to_string(m.spec.in_channels) + "]");
  const EncoderLayer& L = m.per_mod[static_cast<int>(modality)];
  auto h1 = relu(batch_norm2d(conv2d(obs, L.conv1_w, L.conv1_b), L.bn1_g, L.bn1_b, L.bn1_m, L.bn1_v,
                              training));
  return relu(batch_norm2d(conv2d(h1, L.conv2_w, L.conv2_b), L.bn2_g, L.bn2_b, L.bn2_m, L.bn2_v,
                           training));
}

}  // namespace coopbev::sim
