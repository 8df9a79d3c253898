#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <vector>

#include "coopbev/ad/gradcheck.hpp"
#include "coopbev/ad/ops.hpp"
#include "coopbev/ad/tape.hpp"
#include "coopbev/ad/tensor.hpp"
#include "coopbev/common/rng.hpp"

using namespace coopbev;
using namespace coopbev::ad;

namespace {

TensorPtr random_tensor(Shape s, Rng& rng, double lo = -1.0, double hi = 1.0) {
  auto t = Tensor::create(std::move(s));
  for (auto& v : t->data) v = rng.uniform(lo, hi);
  return t;
}

// Scalar probe loss: dot the op output against fixed random weights so every
// output coordinate influences the loss.
TensorPtr probe_loss(const TensorPtr& y, uint64_t seed = 99) {
  Rng rng(seed);
  auto w = Tensor::create(y->shape);
  for (auto& v : w->data) v = rng.uniform(-1.0, 1.0);
  return sum_all(mul(y, w));
}

}  // namespace

TEST_CASE("broadcast shape rules") {
  CHECK(broadcast_shape({2, 3}, {3}) == Shape{2, 3});
  CHECK(broadcast_shape({2, 1, 4}, {5, 1}) == Shape{2, 5, 4});
  CHECK(broadcast_shape({1}, {7}) == Shape{7});
  CHECK_THROWS_AS(broadcast_shape({2, 3}, {4}), DimError);
}

TEST_CASE("add/mul broadcast against explicit loops") {
  Rng rng(1);
  auto a = random_tensor({2, 3, 4}, rng);
  auto b = random_tensor({3, 1}, rng);
  auto s = add(a, b);
  auto m = mul(a, b);
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 3; ++j)
      for (int k = 0; k < 4; ++k) {
        CHECK(s->at({i, j, k}) == a->at({i, j, k}) + b->at({j, 0}));
        CHECK(m->at({i, j, k}) == a->at({i, j, k}) * b->at({j, 0}));
      }
}

TEST_CASE("elementwise gradients match central differences") {
  Rng rng(2);
  auto a = random_tensor({2, 3}, rng);
  auto b = random_tensor({3}, rng);

  auto check = [&](auto&& f) {
    auto res = grad_check(f, {{"a", a}, {"b", b}});
    CHECK(res.max_rel_err < 1e-7);
  };
  check([&] { return probe_loss(add(a, b)); });
  check([&] { return probe_loss(sub(a, b)); });
  check([&] { return probe_loss(mul(a, b)); });
  check([&] { return probe_loss(scale(add(a, b), -2.5)); });
}

TEST_CASE("activation values and gradients") {
  auto x = Tensor::from({5}, {-2.0, -0.5, 0.0, 0.7, 3.0});
  auto r = relu(x);
  CHECK(r->data == std::vector<double>{0.0, 0.0, 0.0, 0.7, 3.0});

  auto g = gelu(x);
  for (int i = 0; i < 5; ++i) {
    double v = x->data[i];
    double want = 0.5 * v * (1.0 + std::erf(v / std::sqrt(2.0)));
    CHECK(g->data[i] == doctest::Approx(want).epsilon(1e-12));
  }

  auto s = sigmoid(x);
  for (int i = 0; i < 5; ++i) CHECK(s->data[i] == doctest::Approx(1.0 / (1.0 + std::exp(-x->data[i]))).epsilon(1e-12));

  // Keep clear of relu's kink where central differences lie.
  auto xs = Tensor::from({4}, {-1.5, -0.3, 0.4, 2.0});
  auto res = grad_check([&] { return probe_loss(relu(xs)); }, {{"x", xs}});
  CHECK(res.max_rel_err < 1e-7);
  res = grad_check([&] { return probe_loss(gelu(xs)); }, {{"x", xs}});
  CHECK(res.max_rel_err < 1e-7);
  res = grad_check([&] { return probe_loss(sigmoid(xs)); }, {{"x", xs}});
  CHECK(res.max_rel_err < 1e-7);
}

TEST_CASE("matmul against identity and hand product") {
  auto a = Tensor::from({2, 2}, {1.0, 2.0, 3.0, 4.0});
  auto eye = Tensor::from({2, 2}, {1.0, 0.0, 0.0, 1.0});
  auto p = matmul(a, eye);
  CHECK(p->data == a->data);

  auto b = Tensor::from({2, 3}, {5.0, 6.0, 7.0, 8.0, 9.0, 10.0});
  auto c = matmul(a, b);
  CHECK(c->shape == Shape{2, 3});
  CHECK(c->at({0, 0}) == doctest::Approx(1 * 5 + 2 * 8));
  CHECK(c->at({1, 2}) == doctest::Approx(3 * 7 + 4 * 10));
}

TEST_CASE("batched matmul broadcasts batch dims and backprops") {
  Rng rng(3);
  auto a = random_tensor({2, 2, 3, 4}, rng);
  auto b = random_tensor({2, 4, 4}, rng);  // broadcast over leading 2
  auto y = matmul(a, b);
  CHECK(y->shape == Shape{2, 2, 3, 4});
  // Reference: per-slice loops.
  for (int s = 0; s < 2; ++s)
    for (int h = 0; h < 2; ++h)
      for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 4; ++j) {
          double want = 0.0;
          for (int k = 0; k < 4; ++k) want += a->at({s, h, i, k}) * b->at({h, k, j});
          CHECK(y->at({s, h, i, j}) == doctest::Approx(want).epsilon(1e-12));
        }
  auto res = grad_check([&] { return probe_loss(matmul(a, b)); }, {{"a", a}, {"b", b}});
  CHECK(res.max_rel_err < 1e-6);
}

TEST_CASE("linear fuses matmul and bias broadcast") {
  Rng rng(4);
  auto x = random_tensor({3, 5}, rng);
  auto w = random_tensor({5, 2}, rng);
  auto b = random_tensor({2}, rng);
  auto y = linear(x, w, b);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 2; ++j) {
      double want = b->data[j];
      for (int k = 0; k < 5; ++k) want += x->at({i, k}) * w->at({k, j});
      CHECK(y->at({i, j}) == doctest::Approx(want).epsilon(1e-12));
    }
  auto res = grad_check([&] { return probe_loss(linear(x, w, b)); }, {{"x", x}, {"w", w}, {"b", b}});
  CHECK(res.max_rel_err < 1e-6);
}

TEST_CASE("transpose_last2 is its own inverse bitwise") {
  Rng rng(5);
  auto x = random_tensor({2, 3, 4}, rng);
  auto back = transpose_last2(transpose_last2(x));
  CHECK(back->data == x->data);
  auto res = grad_check([&] { return probe_loss(transpose_last2(x)); }, {{"x", x}});
  CHECK(res.max_rel_err < 1e-7);
}

TEST_CASE("masked softmax frozen example") {
  auto logits = Tensor::from({3}, {1.0, 2.0, 1.0});
  auto mask = Mask::create({3}, true);
  mask->set({1}, false);
  int flagged = 0;
  auto y = masked_softmax(logits, mask, &flagged);
  CHECK(flagged == 0);
  CHECK(y->data[0] == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(y->data[1] == 0.0);  // exactly
  CHECK(y->data[2] == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("masked softmax rows sum to one and masked grads are exactly zero") {
  Rng rng(6);
  auto logits = random_tensor({2, 4, 5}, rng, -3.0, 3.0);
  logits->requires_grad = true;
  auto mask = Mask::create({2, 1, 5}, true);
  mask->set({0, 0, 2}, false);
  mask->set({1, 0, 0}, false);
  mask->set({1, 0, 4}, false);

  Tape tape;
  {
    TapeScope scope(tape);
    auto y = masked_softmax(logits, mask);
    for (int s = 0; s < 2; ++s)
      for (int q = 0; q < 4; ++q) {
        double sum = 0.0;
        for (int j = 0; j < 5; ++j) sum += y->at({s, q, j});
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
        for (int j = 0; j < 5; ++j)
          if (!mask->at({s, 0, j})) CHECK(y->at({s, q, j}) == 0.0);
      }
    tape.backward(probe_loss(y));
    tape.add_into_tensor_grads();
  }
  for (int s = 0; s < 2; ++s)
    for (int q = 0; q < 4; ++q)
      for (int j = 0; j < 5; ++j) {
        double g = logits->grad[static_cast<std::size_t>((s * 4 + q) * 5 + j)];
        if (!mask->at({s, 0, j}))
          CHECK(g == 0.0);  // exactly zero, not merely small
      }

  auto res = grad_check([&] { return probe_loss(masked_softmax(logits, mask)); }, {{"logits", logits}});
  CHECK(res.max_rel_err < 1e-6);
}

TEST_CASE("fully masked rows come back zero and are counted") {
  auto logits = Tensor::from({2, 3}, {1.0, 2.0, 3.0, 4.0, 5.0, 6.0});
  auto mask = Mask::create({2, 3}, true);
  mask->set({1, 0}, false);
  mask->set({1, 1}, false);
  mask->set({1, 2}, false);
  int flagged = 0;
  auto y = masked_softmax(logits, mask, &flagged);
  CHECK(flagged == 1);
  CHECK(y->at({1, 0}) == 0.0);
  CHECK(y->at({1, 1}) == 0.0);
  CHECK(y->at({1, 2}) == 0.0);
  double s0 = y->at({0, 0}) + y->at({0, 1}) + y->at({0, 2});
  CHECK(s0 == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("layer norm normalizes rows and matches finite differences") {
  Rng rng(7);
  auto x = random_tensor({3, 6}, rng, -2.0, 2.0);
  auto gamma = Tensor::full({6}, 1.0);
  auto beta = Tensor::zeros({6});
  auto y = layer_norm(x, gamma, beta);
  for (int r = 0; r < 3; ++r) {
    double mean = 0.0, var = 0.0;
    for (int j = 0; j < 6; ++j) mean += y->at({r, j});
    mean /= 6.0;
    for (int j = 0; j < 6; ++j) var += (y->at({r, j}) - mean) * (y->at({r, j}) - mean);
    var /= 6.0;
    CHECK(mean == doctest::Approx(0.0).epsilon(1e-10));
    CHECK(std::abs(var - 1.0) < 1e-4);  // eps shifts it slightly below 1
  }
  auto g2 = random_tensor({6}, rng, 0.5, 1.5);
  auto b2 = random_tensor({6}, rng);
  auto res = grad_check([&] { return probe_loss(layer_norm(x, g2, b2)); }, {{"x", x}, {"gamma", g2}, {"beta", b2}});
  CHECK(res.max_rel_err < 1e-6);
}

TEST_CASE("conv2d matches a direct convolution loop") {
  Rng rng(8);
  const int h = 4, w = 5, cin = 2, cout = 3, k = 3, pad = 1;
  auto x = random_tensor({h, w, cin}, rng);
  auto kern = random_tensor({k, k, cin, cout}, rng);
  auto bias = random_tensor({cout}, rng);
  auto y = conv2d(x, kern, bias);
  CHECK(y->shape == Shape{h, w, cout});
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j)
      for (int co = 0; co < cout; ++co) {
        double want = bias->data[co];
        for (int ki = 0; ki < k; ++ki)
          for (int kj = 0; kj < k; ++kj) {
            int si = i + ki - pad, sj = j + kj - pad;
            if (si < 0 || si >= h || sj < 0 || sj >= w) continue;
            for (int c = 0; c < cin; ++c) want += x->at({si, sj, c}) * kern->at({ki, kj, c, co});
          }
        CHECK(y->at({i, j, co}) == doctest::Approx(want).epsilon(1e-12));
      }
  auto res = grad_check([&] { return probe_loss(conv2d(x, kern, bias)); },
                        {{"x", x}, {"kernel", kern}, {"bias", bias}});
  CHECK(res.max_rel_err < 1e-6);

  // 1x1 kernels reduce to a per-cell linear map.
  auto k1 = random_tensor({1, 1, cin, cout}, rng);
  auto y1 = conv2d(x, k1);
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j)
      for (int co = 0; co < cout; ++co) {
        double want = 0.0;
        for (int c = 0; c < cin; ++c) want += x->at({i, j, c}) * k1->at({0, 0, c, co});
        CHECK(y1->at({i, j, co}) == doctest::Approx(want).epsilon(1e-12));
      }
}

TEST_CASE("batch norm training stats, running update, eval path") {
  Rng rng(9);
  const int h = 3, w = 4, c = 2;
  auto x = random_tensor({h, w, c}, rng, -2.0, 2.0);
  auto gamma = Tensor::full({c}, 1.0);
  auto beta = Tensor::zeros({c});
  auto rm = Tensor::zeros({c});
  auto rv = Tensor::full({c}, 1.0);

  auto y = batch_norm2d(x, gamma, beta, rm, rv, true, 0.1);
  const int n = h * w;
  for (int j = 0; j < c; ++j) {
    double mean = 0.0, var = 0.0;
    for (int i = 0; i < h; ++i)
      for (int jj = 0; jj < w; ++jj) mean += x->at({i, jj, j});
    mean /= n;
    for (int i = 0; i < h; ++i)
      for (int jj = 0; jj < w; ++jj) var += (x->at({i, jj, j}) - mean) * (x->at({i, jj, j}) - mean);
    var /= n;
    // normalized output stats
    double omean = 0.0;
    for (int i = 0; i < h; ++i)
      for (int jj = 0; jj < w; ++jj) omean += y->at({i, jj, j});
    omean /= n;
    CHECK(omean == doctest::Approx(0.0).epsilon(1e-10));
    // running stats blended with momentum 0.1 and unbiased variance
    CHECK(rm->data[j] == doctest::Approx(0.1 * mean).epsilon(1e-12));
    CHECK(rv->data[j] == doctest::Approx(0.9 * 1.0 + 0.1 * var * n / (n - 1)).epsilon(1e-12));
  }

  // Eval mode uses running stats and never touches them.
  auto rm_copy = rm->data;
  auto rv_copy = rv->data;
  auto ye = batch_norm2d(x, gamma, beta, rm, rv, false);
  CHECK(rm->data == rm_copy);
  CHECK(rv->data == rv_copy);
  for (int j = 0; j < c; ++j) {
    double want = (x->at({0, 0, j}) - rm->data[j]) / std::sqrt(rv->data[j] + 1e-5);
    CHECK(ye->at({0, 0, j}) == doctest::Approx(want).epsilon(1e-12));
  }

  // Gradients in both modes. momentum 0 keeps the running stats fixed across
  // repeated forward evaluations inside the checker.
  auto g2 = random_tensor({c}, rng, 0.5, 1.5);
  auto b2 = random_tensor({c}, rng);
  auto res = grad_check([&] { return probe_loss(batch_norm2d(x, g2, b2, rm, rv, true, 0.0)); },
                        {{"x", x}, {"gamma", g2}, {"beta", b2}});
  CHECK(res.max_rel_err < 1e-6);
  res = grad_check([&] { return probe_loss(batch_norm2d(x, g2, b2, rm, rv, false)); },
                   {{"x", x}, {"gamma", g2}, {"beta", b2}});
  CHECK(res.max_rel_err < 1e-6);
}

TEST_CASE("reshape, slice, concat round trips and gradients") {
  Rng rng(10);
  auto x = random_tensor({2, 3, 4}, rng);
  auto r = reshape(x, {6, 4});
  CHECK(r->data == x->data);
  CHECK_THROWS_AS(reshape(x, {5, 5}), DimError);

  auto s = slice_axis(x, 1, 1, 2);
  CHECK(s->shape == Shape{2, 2, 4});
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j)
      for (int k = 0; k < 4; ++k) CHECK(s->at({i, j, k}) == x->at({i, j + 1, k}));

  auto a = slice_axis(x, 1, 0, 1);
  auto b = slice_axis(x, 1, 1, 2);
  auto cat = concat({a, b}, 1);
  CHECK(cat->data == x->data);

  auto res = grad_check([&] { return probe_loss(slice_axis(x, 1, 1, 2)); }, {{"x", x}});
  CHECK(res.max_rel_err < 1e-7);
  res = grad_check([&] { return probe_loss(concat({slice_axis(x, 1, 0, 1), slice_axis(x, 1, 1, 2)}, 1)); },
                   {{"x", x}});
  CHECK(res.max_rel_err < 1e-7);
}

TEST_CASE("split/merge heads are bitwise inverses") {
  Rng rng(11);
  auto x = random_tensor({2, 6, 8}, rng);
  auto split = split_heads(x, 4);
  CHECK(split->shape == Shape{2, 4, 6, 2});
  // spot-check the permutation
  CHECK(split->at({1, 2, 3, 1}) == x->at({1, 3, 2 * 2 + 1}));
  auto back = merge_heads(split);
  CHECK(back->data == x->data);
  auto res = grad_check([&] { return probe_loss(merge_heads(split_heads(x, 4))); }, {{"x", x}});
  CHECK(res.max_rel_err < 1e-7);
}

TEST_CASE("reductions") {
  auto x = Tensor::from({2, 2}, {1.0, 2.0, 3.0, 4.0});
  CHECK(sum_all(x)->data[0] == 10.0);
  CHECK(mean_all(x)->data[0] == 2.5);
  auto res = grad_check([&] { return mean_all(mul(x, x)); }, {{"x", x}});
  CHECK(res.max_rel_err < 1e-7);
}

TEST_CASE("tape isolates gradients per tape and merges into leaves additively") {
  auto x = Tensor::from({2}, {1.0, 2.0}, true);
  Tape t1, t2;
  {
    TapeScope scope(t1);
    t1.backward(sum_all(mul(x, x)));  // d/dx = 2x
  }
  {
    TapeScope scope(t2);
    t2.backward(sum_all(scale(x, 3.0)));  // d/dx = 3
  }
  t1.add_into_tensor_grads();
  CHECK(x->grad == std::vector<double>{2.0, 4.0});
  t2.add_into_tensor_grads();
  CHECK(x->grad == std::vector<double>{5.0, 7.0});
}

TEST_CASE("ops outside a tape record nothing") {
  auto x = Tensor::from({2}, {1.0, 2.0}, true);
  auto y = mul(x, x);
  CHECK_FALSE(y->requires_grad);
  CHECK(y->leaf);
}

TEST_CASE("diamond reuse accumulates both paths") {
  auto x = Tensor::from({1}, {3.0}, true);
  Tape tape;
  {
    TapeScope scope(tape);
    auto a = mul(x, x);          // x^2
    auto loss = sum_all(add(a, a));  // 2 x^2, d/dx = 4x = 12
    tape.backward(loss);
    tape.add_into_tensor_grads();
  }
  CHECK(x->grad[0] == doctest::Approx(12.0).epsilon(1e-12));
}
