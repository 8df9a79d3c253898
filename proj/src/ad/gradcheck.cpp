#include "coopbev/ad/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "coopbev/common/rng.hpp"

namespace coopbev::ad {

double rel_err(double a, double b) {
  return std::abs(a - b) / std::max({1.0, std::abs(a), std::abs(b)});
}

GradCheckResult grad_check(const std::function<TensorPtr()>& f,
                           const std::vector<std::pair<std::string, TensorPtr>>& leaves, double h,
                           int64_t probes_per_leaf, uint64_t probe_seed) {
  for (auto& [name, t] : leaves) {
    t->requires_grad = true;
    t->leaf = true;
    t->grad.clear();
  }
  {
    Tape tape;
    TapeScope scope(tape);
    auto loss = f();
    tape.backward(loss);
    tape.add_into_tensor_grads();
  }

  GradCheckResult res;
  Rng rng(probe_seed);
  for (auto& [name, t] : leaves) {
    const int64_t n = t->numel();
    std::vector<int64_t> picks;
    if (probes_per_leaf <= 0 || probes_per_leaf >= n) {
      picks.resize(static_cast<std::size_t>(n));
      for (int64_t i = 0; i < n; ++i) picks[static_cast<std::size_t>(i)] = i;
    } else {
      for (int64_t i = 0; i < probes_per_leaf; ++i)
        picks.push_back(rng.uniform_int(0, static_cast<int>(n - 1)));
      std::sort(picks.begin(), picks.end());
      picks.erase(std::unique(picks.begin(), picks.end()), picks.end());
    }
    for (int64_t i : picks) {
      const double saved = t->data[static_cast<std::size_t>(i)];
      t->data[static_cast<std::size_t>(i)] = saved + h;
      const double fp = f()->data[0];
      t->data[static_cast<std::size_t>(i)] = saved - h;
      const double fm = f()->data[0];
      t->data[static_cast<std::size_t>(i)] = saved;
      const double fd = (fp - fm) / (2.0 * h);
      const double an = t->grad.empty() ? 0.0 : t->grad[static_cast<std::size_t>(i)];
      const double abs_err = std::abs(fd - an);
      const double rel = rel_err(fd, an);
      if (rel > res.max_rel_err) {
        res.max_rel_err = rel;
        res.worst = name + "[" + std::to_string(i) + "]";
      }
      res.max_abs_err = std::max(res.max_abs_err, abs_err);
      ++res.probes;
    }
  }
  return res;
}

}  // namespace coopbev::ad
