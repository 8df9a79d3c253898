#include "coopbev/ad/tensor.hpp"

#include <cmath>
#include <sstream>

namespace coopbev::ad {

int64_t numel_of(const Shape& s) {
  int64_t n = 1;
  for (int d : s) {
    if (d < 0) throw DimError("negative extent in shape " + shape_str(s));
    n *= d;
  }
  return n;
}

std::vector<int64_t> strides_of(const Shape& s) {
  std::vector<int64_t> st(s.size(), 1);
  for (int i = static_cast<int>(s.size()) - 2; i >= 0; --i) {
    st[i] = st[i + 1] * s[i + 1];
  }
  return st;
}

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << ',';
    os << s[i];
  }
  os << ']';
  return os.str();
}

TensorPtr Tensor::create(Shape s, bool requires_grad) {
  auto t = std::make_shared<Tensor>();
  t->shape = std::move(s);
  t->data.resize(static_cast<std::size_t>(numel_of(t->shape)));
  t->requires_grad = requires_grad;
  return t;
}

TensorPtr Tensor::zeros(Shape s, bool requires_grad) { return create(std::move(s), requires_grad); }

TensorPtr Tensor::full(Shape s, double v, bool requires_grad) {
  auto t = create(std::move(s), requires_grad);
  for (auto& x : t->data) x = v;
  return t;
}

TensorPtr Tensor::from(Shape s, std::vector<double> vals, bool requires_grad) {
  if (numel_of(s) != static_cast<int64_t>(vals.size()))
    throw DimError("from(): " + shape_str(s) + " does not hold " + std::to_string(vals.size()) + " values");
  auto t = std::make_shared<Tensor>();
  t->shape = std::move(s);
  t->data = std::move(vals);
  t->requires_grad = requires_grad;
  return t;
}

TensorPtr Tensor::scalar(double v, bool requires_grad) { return from({1}, {v}, requires_grad); }

static int64_t flat_index(const Shape& shape, std::initializer_list<int> idx) {
  if (static_cast<int>(idx.size()) != static_cast<int>(shape.size()))
    throw DimError("index rank mismatch for " + shape_str(shape));
  int64_t off = 0;
  int i = 0;
  auto st = strides_of(shape);
  for (int v : idx) {
    if (v < 0 || v >= shape[i]) throw DimError("index out of range");
    off += st[i] * v;
    ++i;
  }
  return off;
}

double& Tensor::at(std::initializer_list<int> idx) { return data[static_cast<std::size_t>(flat_index(shape, idx))]; }
double Tensor::at(std::initializer_list<int> idx) const {
  return data[static_cast<std::size_t>(flat_index(shape, idx))];
}

void Tensor::ensure_grad() {
  if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
}

void Tensor::zero_grad() {
  if (!grad.empty()) grad.assign(grad.size(), 0.0);
}

bool Tensor::all_finite() const {
  for (double v : data)
    if (!std::isfinite(v)) return false;
  return true;
}

void check_finite(const Tensor& t, const char* what) {
  if (!t.all_finite()) throw std::runtime_error(std::string("non-finite values in ") + what);
}

std::shared_ptr<Mask> Mask::create(Shape s, bool value) {
  auto m = std::make_shared<Mask>();
  m->shape = std::move(s);
  m->data.assign(static_cast<std::size_t>(numel_of(m->shape)), value ? 1 : 0);
  return m;
}

bool Mask::at(std::initializer_list<int> idx) const {
  return data[static_cast<std::size_t>(flat_index(shape, idx))] != 0;
}

void Mask::set(std::initializer_list<int> idx, bool v) {
  data[static_cast<std::size_t>(flat_index(shape, idx))] = v ? 1 : 0;
}

int64_t Mask::count_true() const {
  int64_t n = 0;
  for (auto b : data) n += (b != 0);
  return n;
}

}  // namespace coopbev::ad
