#pragma once

#include <functional>
#include <map>
#include <string>

#include "coopbev/ad/optim.hpp"
#include "coopbev/ad/param_store.hpp"

namespace coopbev::ad {

// File layout: one JSON header line (names, owners, shapes, blob offsets in
// elements), then '\n', then the raw little-endian f64 blob. Optimizer
// moments ride along as opt.m.<name> / opt.v.<name> / opt.t.<name> entries.
void save_checkpoint(const std::string& path, const ParamStore& store, const AdamW* opt = nullptr,
                     const std::map<std::string, std::string>& meta = {});

struct LoadReport {
  int loaded = 0;
  int skipped = 0;
};

// filter(name, owner) -> keep; a non-null filter also drops optimizer state,
// which is what partial weight transplants want. Shape mismatches throw.
LoadReport load_checkpoint(const std::string& path, ParamStore& store, AdamW* opt = nullptr,
                           const std::function<bool(const std::string&, const std::string&)>& filter = nullptr,
                           std::map<std::string, std::string>* meta_out = nullptr);

}  // namespace coopbev::ad
