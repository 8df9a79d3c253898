#pragma once

#include <cstdint>
#include <initializer_list>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace coopbev::ad {

using Shape = std::vector<int>;

int64_t numel_of(const Shape& s);
std::vector<int64_t> strides_of(const Shape& s);
std::string shape_str(const Shape& s);

struct DimError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

class Tensor;
using TensorPtr = std::shared_ptr<Tensor>;

// Dense row-major double tensor. Data is treated as immutable once an op has
// consumed it; grad is the only accumulator that mutates afterwards.
class Tensor {
 public:
  Shape shape;
  std::vector<double> data;
  bool requires_grad = false;
  bool leaf = true;
  std::vector<double> grad;  // same length as data once ensure_grad() ran

  static TensorPtr create(Shape s, bool requires_grad = false);
  static TensorPtr zeros(Shape s, bool requires_grad = false);
  static TensorPtr full(Shape s, double v, bool requires_grad = false);
  static TensorPtr from(Shape s, std::vector<double> vals, bool requires_grad = false);
  static TensorPtr scalar(double v, bool requires_grad = false);

  int64_t numel() const { return static_cast<int64_t>(data.size()); }
  int rank() const { return static_cast<int>(shape.size()); }

  double& at(std::initializer_list<int> idx);
  double at(std::initializer_list<int> idx) const;

  void ensure_grad();
  void zero_grad();
  bool all_finite() const;
};

// Boolean mask with tensor-like shape; broadcasts against tensors the same
// way elementwise ops do (right-aligned, extent 1 repeats).
struct Mask {
  Shape shape;
  std::vector<uint8_t> data;

  static std::shared_ptr<Mask> create(Shape s, bool value = false);
  int64_t numel() const { return static_cast<int64_t>(data.size()); }
  bool at(std::initializer_list<int> idx) const;
  void set(std::initializer_list<int> idx, bool v);
  int64_t count_true() const;
};
using MaskPtr = std::shared_ptr<Mask>;

void check_finite(const Tensor& t, const char* what);

}  // namespace coopbev::ad
