#include "coopbev/ad/optim.hpp"

#include <cmath>

namespace coopbev::ad {

void AdamW::step() {
  for (auto& [name, e] : store_.entries()) {
    if (!e.trainable) continue;
    Tensor& p = *e.tensor;
    if (p.grad.empty()) continue;

    auto& st = moments_[name];
    if (st.m.empty()) {
      st.m.assign(p.data.size(), 0.0);
      st.v.assign(p.data.size(), 0.0);
    }
    st.t += 1;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(st.t));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(st.t));
    const double decay = 1.0 - cfg_.lr * cfg_.weight_decay;
    for (std::size_t i = 0; i < p.data.size(); ++i) {
      const double g = p.grad[i];
      p.data[i] *= decay;
      st.m[i] = cfg_.beta1 * st.m[i] + (1.0 - cfg_.beta1) * g;
      st.v[i] = cfg_.beta2 * st.v[i] + (1.0 - cfg_.beta2) * g * g;
      const double mhat = st.m[i] / bc1;
      const double vhat = st.v[i] / bc2;
      p.data[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
    }
  }
}

double cosine_lr(double lr_max, double lr_min, int64_t step, int64_t total) {
  if (total <= 0) return lr_min;
  if (step < 0) step = 0;
  if (step > total) step = total;
  const double frac = static_cast<double>(step) / static_cast<double>(total);
  return lr_min + (lr_max - lr_min) * 0.5 * (1.0 + std::cos(3.14159265358979323846 * frac));
}

}  // namespace coopbev::ad
