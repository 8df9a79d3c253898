#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "coopbev/ad/param_store.hpp"

namespace coopbev::ad {

struct AdamWConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

// Decoupled weight decay; update order per parameter is decay, moment update,
// bias-corrected step. Parameters whose grad buffer is empty are skipped
// outright — no decay, no moment advance — so untouched weights stay put.
class AdamW {
 public:
  struct Moments {
    std::vector<double> m, v;
    int64_t t = 0;
  };

  AdamW(ParamStore& store, AdamWConfig cfg) : store_(store), cfg_(cfg) {}

  void step();
  void zero_grad() { store_.zero_grads(); }

  void set_lr(double lr) { cfg_.lr = lr; }
  double lr() const { return cfg_.lr; }
  const AdamWConfig& config() const { return cfg_; }

  std::map<std::string, Moments>& moments() { return moments_; }
  const std::map<std::string, Moments>& moments() const { return moments_; }

 private:
  ParamStore& store_;
  AdamWConfig cfg_;
  std::map<std::string, Moments> moments_;
};

// Half-cosine decay from lr_max at step 0 to lr_min at step total.
double cosine_lr(double lr_max, double lr_min, int64_t step, int64_t total);

}  // namespace coopbev::ad
