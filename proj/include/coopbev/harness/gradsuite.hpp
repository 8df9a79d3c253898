#pragma once

#include <ostream>

namespace coopbev::harness {

struct SuiteResult {
  int checks = 0;
  int failures = 0;
  double max_rel_err = 0.0;
  double seconds = 0.0;
};

// Central-difference sweep at tiny shapes: every differentiable op, the
// typed attention block in window and stripe arrangements, a full two-agent
// fusion (8x8, 8 channels, window 2), the encoder, and the detection
// head+loss. Pass threshold is max rel-err < 1e-4 per check. inject_fault
// adds a deliberately skewed backward so the harness can prove it fails.
SuiteResult run_gradcheck_suite(std::ostream& out, bool inject_fault = false);

}  // namespace coopbev::harness
