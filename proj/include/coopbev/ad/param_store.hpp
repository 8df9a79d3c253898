#pragma once

#include <map>
#include <string>

#include "coopbev/ad/tensor.hpp"

namespace coopbev::ad {

struct ParamEntry {
  TensorPtr tensor;
  std::string owner;  // weight-sharing group the entry belongs to
  bool trainable = true;
};

// Name-keyed parameter registry. std::map keeps iteration in name order,
// which pins optimizer update order and serialization order.
class ParamStore {
 public:
  TensorPtr add(const std::string& name, TensorPtr t, std::string owner, bool trainable = true);
  bool has(const std::string& name) const;
  TensorPtr get(const std::string& name) const;
  ParamEntry& entry(const std::string& name);
  const ParamEntry& entry(const std::string& name) const;

  std::map<std::string, ParamEntry>& entries() { return entries_; }
  const std::map<std::string, ParamEntry>& entries() const { return entries_; }

  void zero_grads();
  int64_t total_elements() const;

 private:
  std::map<std::string, ParamEntry> entries_;
};

}  // namespace coopbev::ad
