#include "coopbev/ad/tape.hpp"

#include <stdexcept>

namespace coopbev::ad {

namespace {
thread_local Tape* g_active_tape = nullptr;
}

void Tape::record(std::function<void()> backward) { nodes_.push_back(std::move(backward)); }

std::vector<double>& Tape::grad_acc(const TensorPtr& t) {
  auto it = grads_.find(t.get());
  if (it == grads_.end()) {
    it = grads_.emplace(t.get(), std::vector<double>(t->data.size(), 0.0)).first;
    held_.emplace(t.get(), t);
  }
  return it->second;
}

const std::vector<double>* Tape::grad_read(const Tensor* t) const {
  auto it = grads_.find(t);
  return it == grads_.end() ? nullptr : &it->second;
}

void Tape::backward(const TensorPtr& loss) {
  if (loss->numel() != 1) throw DimError("backward() expects a scalar, got " + shape_str(loss->shape));
  grad_acc(loss)[0] = 1.0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
}

void Tape::add_into_tensor_grads() {
  for (auto& [raw, buf] : grads_) {
    auto held = held_.find(raw);
    if (held == held_.end()) continue;
    Tensor& t = *held->second;
    if (!t.leaf || !t.requires_grad) continue;
    t.ensure_grad();
    for (std::size_t i = 0; i < buf.size(); ++i) t.grad[i] += buf[i];
  }
}

void Tape::clear() {
  nodes_.clear();
  grads_.clear();
  held_.clear();
}

Tape* active_tape() { return g_active_tape; }

TapeScope::TapeScope(Tape& tape) : prev_(g_active_tape) { g_active_tape = &tape; }
TapeScope::~TapeScope() { g_active_tape = prev_; }

Tape* tape_for(std::initializer_list<const TensorPtr*> inputs) {
  Tape* t = g_active_tape;
  if (!t) return nullptr;
  for (const TensorPtr* p : inputs) {
    if (*p && (*p)->requires_grad) return t;
  }
  return nullptr;
}

}  // namespace coopbev::ad
