#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "coopbev/ad/tape.hpp"
#include "coopbev/ad/tensor.hpp"

namespace coopbev::ad {

struct GradCheckResult {
  double max_abs_err = 0.0;
  double max_rel_err = 0.0;
  int64_t probes = 0;
  std::string worst;  // "name[i]" of the worst coordinate
};

// Central-difference check of d f / d leaves for a scalar-valued f. The
// analytic gradient comes from one taped run; each probed coordinate is then
// perturbed +/-h with f evaluated untaped. probes_per_leaf = 0 checks every
// coordinate, otherwise that many are sampled per leaf from probe_seed.
GradCheckResult grad_check(const std::function<TensorPtr()>& f,
                           const std::vector<std::pair<std::string, TensorPtr>>& leaves, double h = 1e-5,
                           int64_t probes_per_leaf = 0, uint64_t probe_seed = 7);

// rel = |a-b| / max(1, |a|, |b|), the scale-free comparison used everywhere.
double rel_err(double a, double b);

}  // namespace coopbev::ad
