#include "coopbev/ad/param_store.hpp"

namespace coopbev::ad {

TensorPtr ParamStore::add(const std::string& name, TensorPtr t, std::string owner, bool trainable) {
  if (entries_.count(name)) throw ConfigError("duplicate parameter name: " + name);
  t->requires_grad = trainable;  // stat buffers register as non-trainable
  t->leaf = true;
  entries_[name] = ParamEntry{t, std::move(owner), trainable};
  return t;
}

bool ParamStore::has(const std::string& name) const { return entries_.count(name) != 0; }

TensorPtr ParamStore::get(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw ConfigError("unknown parameter: " + name);
  return it->second.tensor;
}

ParamEntry& ParamStore::entry(const std::string& name) {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw ConfigError("unknown parameter: " + name);
  return it->second;
}

const ParamEntry& ParamStore::entry(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw ConfigError("unknown parameter: " + name);
  return it->second;
}

void ParamStore::zero_grads() {
  for (auto& [name, e] : entries_) e.tensor->grad.clear();
}

int64_t ParamStore::total_elements() const {
  int64_t n = 0;
  for (const auto& [name, e] : entries_) n += e.tensor->numel();
  return n;
}

}  // namespace coopbev::ad
