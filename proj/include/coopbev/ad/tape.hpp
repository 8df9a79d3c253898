#pragma once

#include <functional>
#include <unordered_map>
#include <vector>

#include "coopbev/ad/tensor.hpp"

namespace coopbev::ad {

// Reverse-mode tape. Nodes are recorded in forward order and replayed exactly
// once in reverse. Gradients accumulate additively in tape-owned buffers so
// independent tapes on different threads never touch shared state; callers
// merge them into Tensor::grad afterwards.
class Tape {
 public:
  void record(std::function<void()> backward);

  // Accumulation buffer for t, zero-initialized on first access.
  std::vector<double>& grad_acc(const TensorPtr& t);
  // Read-only view; nullptr when t received no gradient (node skips itself).
  const std::vector<double>* grad_read(const Tensor* t) const;

  // Seeds d(loss)/d(loss) = 1 and runs all nodes in reverse order.
  void backward(const TensorPtr& loss);

  // Adds buffered gradients of leaf tensors into their Tensor::grad.
  void add_into_tensor_grads();

  std::size_t node_count() const { return nodes_.size(); }
  void clear();

 private:
  std::vector<std::function<void()>> nodes_;
  std::unordered_map<const Tensor*, std::vector<double>> grads_;
  std::unordered_map<const Tensor*, TensorPtr> held_;
};

// Active tape is thread-local: one logical execution thread per tape.
Tape* active_tape();

class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* prev_;
};

// Tape to record onto if any input requires grad, else nullptr.
Tape* tape_for(std::initializer_list<const TensorPtr*> inputs);

}  // namespace coopbev::ad
