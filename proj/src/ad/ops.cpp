#include "coopbev/ad/ops.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>

namespace coopbev::ad {

namespace {

using MatRM = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapM = Eigen::Map<MatRM>;
using MapC = Eigen::Map<const MatRM>;

// Right-aligned broadcast plan: per-output-dim strides into each operand,
// zero where the operand repeats.
struct BCast {
  Shape out;
  std::vector<int64_t> sa, sb;
  int64_t n = 0;
};

BCast bcast_plan(const Shape& a, const Shape& b) {
  BCast p;
  p.out = broadcast_shape(a, b);
  const int r = static_cast<int>(p.out.size());
  auto sta = strides_of(a);
  auto stb = strides_of(b);
  p.sa.assign(r, 0);
  p.sb.assign(r, 0);
  const int ra = static_cast<int>(a.size()), rb = static_cast<int>(b.size());
  for (int i = 0; i < r; ++i) {
    int ia = i - (r - ra), ib = i - (r - rb);
    if (ia >= 0 && a[ia] != 1) p.sa[i] = sta[ia];
    if (ib >= 0 && b[ib] != 1) p.sb[i] = stb[ib];
  }
  p.n = numel_of(p.out);
  return p;
}

// Applies f(out_index, a_offset, b_offset) over the whole broadcast domain.
template <typename F>
void bcast_foreach(const BCast& p, F&& f) {
  const int r = static_cast<int>(p.out.size());
  std::vector<int> idx(r, 0);
  int64_t oa = 0, ob = 0;
  for (int64_t i = 0; i < p.n; ++i) {
    f(i, oa, ob);
    for (int d = r - 1; d >= 0; --d) {
      oa += p.sa[d];
      ob += p.sb[d];
      if (++idx[d] < p.out[d]) break;
      idx[d] = 0;
      oa -= p.sa[d] * p.out[d];
      ob -= p.sb[d] * p.out[d];
    }
  }
}

// Sums grad over axes that were broadcast to reach `shape` from `target`.
void reduce_into(const std::vector<double>& g, const Shape& gshape, std::vector<double>& dst,
                 const Shape& dshape) {
  if (gshape == dshape) {
    for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
    return;
  }
  BCast p = bcast_plan(gshape, dshape);
  bcast_foreach(p, [&](int64_t i, int64_t, int64_t ob) { dst[static_cast<std::size_t>(ob)] += g[static_cast<std::size_t>(i)]; });
}

struct BinaryGrad {
  // go * factor accumulated into dst with broadcast reduction.
  static void apply(const std::vector<double>* go, const Shape& oshape, const TensorPtr& t,
                    Tape* tp, const std::vector<double>& factor_or_empty, double cfactor) {
    auto& acc = tp->grad_acc(t);
    if (oshape == t->shape && factor_or_empty.empty()) {
      for (std::size_t i = 0; i < go->size(); ++i) acc[i] += (*go)[i] * cfactor;
      return;
    }
    std::vector<double> tmp(go->size());
    if (factor_or_empty.empty()) {
      for (std::size_t i = 0; i < go->size(); ++i) tmp[i] = (*go)[i] * cfactor;
    } else {
      for (std::size_t i = 0; i < go->size(); ++i) tmp[i] = (*go)[i] * factor_or_empty[i] * cfactor;
    }
    reduce_into(tmp, oshape, acc, t->shape);
  }
};

int64_t outer_extent(const Shape& s, int upto) {
  int64_t n = 1;
  for (int i = 0; i < upto; ++i) n *= s[i];
  return n;
}
int64_t inner_extent(const Shape& s, int from) {
  int64_t n = 1;
  for (int i = from; i < static_cast<int>(s.size()); ++i) n *= s[i];
  return n;
}

}  // namespace

Shape broadcast_shape(const Shape& a, const Shape& b) {
  const int r = std::max(a.size(), b.size());
  Shape out(r, 1);
  for (int i = 0; i < r; ++i) {
    int ia = i - (r - static_cast<int>(a.size()));
    int ib = i - (r - static_cast<int>(b.size()));
    int da = ia >= 0 ? a[ia] : 1;
    int db = ib >= 0 ? b[ib] : 1;
    if (da != db && da != 1 && db != 1)
      throw DimError("cannot broadcast " + shape_str(a) + " with " + shape_str(b));
    out[i] = std::max(da, db);
  }
  return out;
}

TensorPtr add(const TensorPtr& a, const TensorPtr& b) {
  BCast p = bcast_plan(a->shape, b->shape);
  auto out = Tensor::create(p.out);
  if (a->shape == b->shape) {
    for (std::size_t i = 0; i < out->data.size(); ++i) out->data[i] = a->data[i] + b->data[i];
  } else {
    bcast_foreach(p, [&](int64_t i, int64_t oa, int64_t ob) {
      out->data[static_cast<std::size_t>(i)] = a->data[static_cast<std::size_t>(oa)] + b->data[static_cast<std::size_t>(ob)];
    });
  }
  if (Tape* tp = tape_for({&a, &b})) {
    out->requires_grad = true;
    out->leaf = false;
    Shape oshape = out->shape;
    tp->record([tp, a, b, out, oshape] {
      const auto* go = tp->grad_read(out.get());
      if (!go) return;
      if (a->requires_grad) BinaryGrad::apply(go, oshape, a, tp, {}, 1.0);
      if (b->requires_grad) BinaryGrad::apply(go, oshape, b, tp, {}, 1.0);
    });
  }
  return out;
}

TensorPtr sub(const TensorPtr& a, const TensorPtr& b) {
  BCast p = bcast_plan(a->shape, b->shape);
  auto out = Tensor::create(p.out);
  bcast_foreach(p, [&](int64_t i, int64_t oa, int64_t ob) {
    out->data[static_cast<std::size_t>(i)] = a->data[static_cast<std::size_t>(oa)] - b->data[static_cast<std::size_t>(ob)];
  });
  if (Tape* tp = tape_for({&a, &b})) {
    out->requires_grad = true;
    out->leaf = false;
    Shape oshape = out->shape;
    tp->record([tp, a, b, out, oshape] {
      const auto* go = tp->grad_read(out.get());
      if (!go) return;
      if (a->requires_grad) BinaryGrad::apply(go, oshape, a, tp, {}, 1.0);
      if (b->requires_grad) BinaryGrad::apply(go, oshape, b, tp, {}, -1.0);
    });
  }
  return out;
}

TensorPtr mul(const TensorPtr& a, const TensorPtr& b) {
  BCast p = bcast_plan(a->shape, b->shape);
  auto out = Tensor::create(p.out);
  // Broadcast-expanded copies of each operand double as backward factors.
  std::vector<double> ea, eb;
  const bool same = a->shape == b->shape;
  if (same) {
    for (std::size_t i = 0; i < out->data.size(); ++i) out->data[i] = a->data[i] * b->data[i];
  } else {
    ea.resize(static_cast<std::size_t>(p.n));
    eb.resize(static_cast<std::size_t>(p.n));
    bcast_foreach(p, [&](int64_t i, int64_t oa, int64_t ob) {
      ea[static_cast<std::size_t>(i)] = a->data[static_cast<std::size_t>(oa)];
      eb[static_cast<std::size_t>(i)] = b->data[static_cast<std::size_t>(ob)];
      out->data[static_cast<std::size_t>(i)] = ea[static_cast<std::size_t>(i)] * eb[static_cast<std::size_t>(i)];
    });
  }
  if (Tape* tp = tape_for({&a, &b})) {
    out->requires_grad = true;
    out->leaf = false;
    Shape oshape = out->shape;
    tp->record([tp, a, b, out, oshape, ea = std::move(ea), eb = std::move(eb), same] {
      const auto* go = tp->grad_read(out.get());
      if (!go) return;
      if (a->requires_grad) BinaryGrad::apply(go, oshape, a, tp, same ? b->data : eb, 1.0);
      if (b->requires_grad) BinaryGrad::apply(go, oshape, b, tp, same ? a->data : ea, 1.0);
    });
  }
  return out;
}

TensorPtr scale(const TensorPtr& x, double s) {
  auto out = Tensor::create(x->shape);
  for (std::size_t i = 0; i < out->data.size(); ++i) out->data[i] = x->data[i] * s;
  if (Tape* tp = tape_for({&x})) {
    out->requires_grad = true;
    out->leaf = false;
    tp->record([tp, x, out, s] {
      const auto* go = tp->grad_read(out.get());
      if (!go || !x->requires_grad) return;
      auto& gx = tp->grad_acc(x);
      for (std::size_t i = 0; i < go->size(); ++i) gx[i] += (*go)[i] * s;
    });
  }
  return out;
}

TensorPtr relu(const TensorPtr& x) {
  auto out = Tensor::create(x->shape);
  for (std::size_t i = 0; i < out->data.size(); ++i) out->data[i] = x->data[i] > 0.0 ? x->data[i] : 0.0;
  if (Tape* tp = tape_for({&x})) {
    out->requires_grad = true;
    out->leaf = false;
    tp->record([tp, x, out] {
      const auto* go = tp->grad_read(out.get());
      if (!go || !x->requires_grad) return;
      auto& gx = tp->grad_acc(x);
      for (std::size_t i = 0; i < go->size(); ++i)
        if (x->data[i] > 0.0) gx[i] += (*go)[i];
    });
  }
  return out;
}

TensorPtr gelu(const TensorPtr& x) {
  constexpr double kInvSqrt2 = 0.70710678118654752440;
  constexpr double kInvSqrt2Pi = 0.39894228040143267794;
  auto out = Tensor::create(x->shape);
  for (std::size_t i = 0; i < out->data.size(); ++i) {
    double v = x->data[i];
    out->data[i] = 0.5 * v * (1.0 + std::erf(v * kInvSqrt2));
  }
  if (Tape* tp = tape_for({&x})) {
    out->requires_grad = true;
    out->leaf = false;
    tp->record([tp, x, out] {
      const auto* go = tp->grad_read(out.get());
      if (!go || !x->requires_grad) return;
      auto& gx = tp->grad_acc(x);
      for (std::size_t i = 0; i < go->size(); ++i) {
        double v = x->data[i];
        double cdf = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
        double pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
        gx[i] += (*go)[i] * (cdf + v * pdf);
      }
    });
  }
  return out;
}

TensorPtr sigmoid(const TensorPtr& x) {
  auto out = Tensor::create(x->shape);
  for (std::size_t i = 0; i < out->data.size(); ++i) {
    double v = x->data[i];
    out->data[i] = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
  }
  if (Tape* tp = tape_for({&x})) {
    out->requires_grad = true;
    out->leaf = false;
    tp->record([tp, x, out] {
      const auto* go = tp->grad_read(out.get());
      if (!go || !x->requires_grad) return;
      auto& gx = tp->grad_acc(x);
      for (std::size_t i = 0; i < go->size(); ++i) {
        double y = out->data[i];
        gx[i] += (*go)[i] * y * (1.0 - y);
      }
    });
  }
  return out;
}

TensorPtr matmul(const TensorPtr& a, const TensorPtr& b) {
  if (a->rank() < 2 || b->rank() < 2) throw DimError("matmul needs rank >= 2 operands");
  const int m = a->shape[a->rank() - 2];
  const int k = a->shape[a->rank() - 1];
  const int k2 = b->shape[b->rank() - 2];
  const int n = b->shape[b->rank() - 1];
  if (k != k2)
    throw DimError("matmul inner extents differ: " + shape_str(a->shape) + " x " + shape_str(b->shape));
  Shape ba(a->shape.begin(), a->shape.end() - 2);
  Shape bb(b->shape.begin(), b->shape.end() - 2);
  BCast p = bcast_plan(ba, bb);
  Shape oshape = p.out;
  oshape.push_back(m);
  oshape.push_back(n);
  auto out = Tensor::create(oshape);

  const int64_t amk = static_cast<int64_t>(m) * k;
  const int64_t bkn = static_cast<int64_t>(k) * n;
  const int64_t omn = static_cast<int64_t>(m) * n;
  // Batch strides above are in units of whole matrices.
  std::vector<int64_t> batch_a, batch_b;
  bcast_foreach(p, [&](int64_t i, int64_t oa, int64_t ob) {
    (void)i;
    batch_a.push_back(oa);
    batch_b.push_back(ob);
  });
  if (batch_a.empty()) {
    batch_a.push_back(0);
    batch_b.push_back(0);
  }
  for (std::size_t bi = 0; bi < batch_a.size(); ++bi) {
    MapC A(a->data.data() + batch_a[bi] * amk, m, k);
    MapC B(b->data.data() + batch_b[bi] * bkn, k, n);
    MapM C(out->data.data() + static_cast<int64_t>(bi) * omn, m, n);
    C.noalias() = A * B;
  }
  if (Tape* tp = tape_for({&a, &b})) {
    out->requires_grad = true;
    out->leaf = false;
    tp->record([tp, a, b, out, batch_a = std::move(batch_a), batch_b = std::move(batch_b), m, k, n, amk, bkn, omn] {
      const auto* go = tp->grad_read(out.get());
      if (!go) return;
      if (a->requires_grad) {
        auto& ga = tp->grad_acc(a);
        for (std::size_t bi = 0; bi < batch_a.size(); ++bi) {
          MapC G(go->data() + static_cast<int64_t>(bi) * omn, m, n);
          MapC B(b->data.data() + batch_b[bi] * bkn, k, n);
          MapM GA(ga.data() + batch_a[bi] * amk, m, k);
          GA.noalias() += G * B.transpose();
        }
      }
      if (b->requires_grad) {
        auto& gb = tp->grad_acc(b);
        for (std::size_t bi = 0; bi < batch_a.size(); ++bi) {
          MapC G(go->data() + static_cast<int64_t>(bi) * omn, m, n);
          MapC A(a->data.data() + batch_a[bi] * amk, m, k);
          MapM GB(gb.data() + batch_b[bi] * bkn, k, n);
          GB.noalias() += A.transpose() * G;
        }
      }
    });
  }
  return out;
}

TensorPtr transpose_last2(const TensorPtr& x) {
  if (x->rank() < 2) throw DimError("transpose_last2 needs rank >= 2");
  const int m = x->shape[x->rank() - 2];
  const int n = x->shape[x->rank() - 1];
  Shape oshape = x->shape;
  std::swap(oshape[x->rank() - 2], oshape[x->rank() - 1]);
  auto out = Tensor::create(oshape);
  const int64_t batches = outer_extent(x->shape, x->rank() - 2);
  const int64_t mn = static_cast<int64_t>(m) * n;
  for (int64_t bi = 0; bi < batches; ++bi) {
    const double* src = x->data.data() + bi * mn;
    double* dst = out->data.data() + bi * mn;
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j) dst[static_cast<int64_t>(j) * m + i] = src[static_cast<int64_t>(i) * n + j];
  }
  if (Tape* tp = tape_for({&x})) {
    out->requires_grad = true;
    out->leaf = false;
    tp->record([tp, x, out, batches, m, n, mn] {
      const auto* go = tp->grad_read(out.get());
      if (!go || !x->requires_grad) return;
      auto& gx = tp->grad_acc(x);
      for (int64_t bi = 0; bi < batches; ++bi) {
        const double* src = go->data() + bi * mn;
        double* dst = gx.data() + bi * mn;
        for (int j = 0; j < n; ++j)
          for (int i = 0; i < m; ++i) dst[static_cast<int64_t>(i) * n + j] += src[static_cast<int64_t>(j) * m + i];
      }
    });
  }
  return out;
}

TensorPtr linear(const TensorPtr& x, const TensorPtr& w, const TensorPtr& b) {
  auto y = matmul(x, w);
  return b ? add(y, b) : y;
}

TensorPtr masked_softmax(const TensorPtr& logits, const MaskPtr& mask, int* fully_masked_rows) {
  const int n = logits->shape.back();
  if (mask->shape.back() != n)
    throw DimError("masked_softmax: mask last extent " + shape_str(mask->shape) + " vs logits " +
                   shape_str(logits->shape));
  // Mask leading dims broadcast against the logits' leading dims.
  Shape lead(logits->shape.begin(), logits->shape.end() - 1);
  Shape mlead(mask->shape.begin(), mask->shape.end() - 1);
  BCast p = bcast_plan(lead, mlead);
  if (p.out != lead) throw DimError("masked_softmax: mask does not broadcast over logits");
  std::vector<int64_t> mask_row;  // mask row base per logits row
  bcast_foreach(p, [&](int64_t, int64_t, int64_t ob) { mask_row.push_back(ob * n); });
  if (mask_row.empty()) mask_row.push_back(0);

  auto out = Tensor::create(logits->shape);
  int flagged = 0;
  const int64_t rows = static_cast<int64_t>(mask_row.size());
  for (int64_t r = 0; r < rows; ++r) {
    const double* in = logits->data.data() + r * n;
    const uint8_t* mk = mask->data.data() + mask_row[static_cast<std::size_t>(r)];
    double* yy = out->data.data() + r * n;
    double mx = -std::numeric_limits<double>::infinity();
    for (int j = 0; j < n; ++j)
      if (mk[j]) mx = std::max(mx, in[j]);
    if (!std::isfinite(mx)) {  // no unmasked entry
      for (int j = 0; j < n; ++j) yy[j] = 0.0;
      ++flagged;
      continue;
    }
    double sum = 0.0;
    for (int j = 0; j < n; ++j) {
      yy[j] = mk[j] ? std::exp(in[j] - mx) : 0.0;
      sum += yy[j];
    }
    const double inv = 1.0 / sum;
    for (int j = 0; j < n; ++j) yy[j] *= inv;
  }
  if (fully_masked_rows) *fully_masked_rows += flagged;

  if (Tape* tp = tape_for({&logits})) {
    out->requires_grad = true;
    out->leaf = false;
    tp->record([tp, logits, mask, out, mask_row = std::move(mask_row), n] {
      const auto* go = tp->grad_read(out.get());
      if (!go || !logits->requires_grad) return;
      auto& gx = tp->grad_acc(logits);
      const int64_t rows = static_cast<int64_t>(mask_row.size());
      for (int64_t r = 0; r < rows; ++r) {
        const double* y = out->data.data() + r * n;
        const double* g = go->data() + r * n;
        const uint8_t* mk = mask->data.data() + mask_row[static_cast<std::size_t>(r)];
        double dot = 0.0;
        for (int j = 0; j < n; ++j)
          if (mk[j]) dot += g[j] * y[j];
        double* dst = gx.data() + r * n;
        for (int j = 0; j < n; ++j)
          if (mk[j]) dst[j] += y[j] * (g[j] - dot);
      }
    });
  }
  return out;
}

TensorPtr layer_norm(const TensorPtr& x, const TensorPtr& gamma, const TensorPtr& beta, double eps) {
  const int c = x->shape.back();
  if (gamma->numel() != c || beta->numel() != c) throw DimError("layer_norm: gamma/beta must have extent C");
  const int64_t rows = x->numel() / c;
  auto out = Tensor::create(x->shape);
  std::vector<double> mu(static_cast<std::size_t>(rows)), inv_sigma(static_cast<std::size_t>(rows));
  for (int64_t r = 0; r < rows; ++r) {
    const double* in = x->data.data() + r * c;
    double m = 0.0;
    for (int j = 0; j < c; ++j) m += in[j];
    m /= c;
    double v = 0.0;
    for (int j = 0; j < c; ++j) v += (in[j] - m) * (in[j] - m);
    v /= c;
    const double is = 1.0 / std::sqrt(v + eps);
    mu[static_cast<std::size_t>(r)] = m;
    inv_sigma[static_cast<std::size_t>(r)] = is;
    double* yy = out->data.data() + r * c;
    for (int j = 0; j < c; ++j) yy[j] = (in[j] - m) * is * gamma->data[j] + beta->data[j];
  }
  if (Tape* tp = tape_for({&x, &gamma, &beta})) {
    out->requires_grad = true;
    out->leaf = false;
    tp->record([tp, x, gamma, beta, out, mu = std::move(mu), inv_sigma = std::move(inv_sigma), c, rows] {
      const auto* go = tp->grad_read(out.get());
      if (!go) return;
      std::vector<double>* gx = x->requires_grad ? &tp->grad_acc(x) : nullptr;
      std::vector<double>* gg = gamma->requires_grad ? &tp->grad_acc(gamma) : nullptr;
      std::vector<double>* gb = beta->requires_grad ? &tp->grad_acc(beta) : nullptr;
      for (int64_t r = 0; r < rows; ++r) {
        const double* in = x->data.data() + r * c;
        const double* g = go->data() + r * c;
        const double m = mu[static_cast<std::size_t>(r)];
        const double is = inv_sigma[static_cast<std::size_t>(r)];
        double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
        for (int j = 0; j < c; ++j) {
          const double xhat = (in[j] - m) * is;
          const double dxhat = g[j] * gamma->data[j];
          sum_dxhat += dxhat;
          sum_dxhat_xhat += dxhat * xhat;
          if (gg) (*gg)[j] += g[j] * xhat;
          if (gb) (*gb)[j] += g[j];
        }
        if (gx) {
          double* dst = gx->data() + r * c;
          for (int j = 0; j < c; ++j) {
            const double xhat = (in[j] - m) * is;
            const double dxhat = g[j] * gamma->data[j];
            dst[j] += is * (dxhat - sum_dxhat / c - xhat * sum_dxhat_xhat / c);
          }
        }
      }
    });
  }
  return out;
}

TensorPtr conv2d(const TensorPtr& x, const TensorPtr& kernel, const TensorPtr& bias) {
  if (x->rank() != 3 || kernel->rank() != 4) throw DimError("conv2d expects x[H,W,Cin], kernel[k,k,Cin,Cout]");
  const int h = x->shape[0], w = x->shape[1], cin = x->shape[2];
  const int k = kernel->shape[0];
  if (kernel->shape[1] != k || kernel->shape[2] != cin) throw DimError("conv2d kernel shape mismatch");
  if (k != 1 && k != 3) throw ConfigError("conv2d supports k in {1,3}");
  const int cout = kernel->shape[3];
  if (bias && bias->numel() != cout) throw DimError("conv2d bias extent mismatch");
  const int pad = (k - 1) / 2;
  const int64_t hw = static_cast<int64_t>(h) * w;
  const int64_t patch = static_cast<int64_t>(k) * k * cin;

  // im2col + GEMM; the kernel's [k,k,Cin,Cout] layout is already the GEMM
  // weight matrix in row-major.
  auto col = std::make_shared<std::vector<double>>(static_cast<std::size_t>(hw * patch), 0.0);
  for (int i = 0; i < h; ++i) {
    for (int j = 0; j < w; ++j) {
      double* row = col->data() + (static_cast<int64_t>(i) * w + j) * patch;
      for (int ki = 0; ki < k; ++ki) {
        const int si = i + ki - pad;
        if (si < 0 || si >= h) continue;
        for (int kj = 0; kj < k; ++kj) {
          const int sj = j + kj - pad;
          if (sj < 0 || sj >= w) continue;
          const double* src = x->data.data() + (static_cast<int64_t>(si) * w + sj) * cin;
          std::memcpy(row + (static_cast<int64_t>(ki) * k + kj) * cin, src, sizeof(double) * cin);
        }
      }
    }
  }
  auto out = Tensor::create({h, w, cout});
  {
    MapC A(col->data(), hw, patch);
    MapC K(kernel->data.data(), patch, cout);
    MapM C(out->data.data(), hw, cout);
    C.noalias() = A * K;
    if (bias) {
      for (int64_t r = 0; r < hw; ++r)
        for (int co = 0; co < cout; ++co) out->data[static_cast<std::size_t>(r * cout + co)] += bias->data[co];
    }
  }
  if (Tape* tp = tape_for({&x, &kernel, &bias})) {
    out->requires_grad = true;
    out->leaf = false;
    tp->record([tp, x, kernel, bias, out, col, h, w, cin, cout, k, pad, hw, patch] {
      const auto* go = tp->grad_read(out.get());
      if (!go) return;
      MapC G(go->data(), hw, cout);
      if (kernel->requires_grad) {
        auto& gk = tp->grad_acc(kernel);
        MapM GK(gk.data(), patch, cout);
        MapC A(col->data(), hw, patch);
        GK.noalias() += A.transpose() * G;
      }
      if (bias && bias->requires_grad) {
        auto& gb = tp->grad_acc(bias);
        for (int64_t r = 0; r < hw; ++r)
          for (int co = 0; co < cout; ++co) gb[co] += (*go)[static_cast<std::size_t>(r * cout + co)];
      }
      if (x->requires_grad) {
        std::vector<double> dcol(static_cast<std::size_t>(hw * patch));
        {
          MapM DC(dcol.data(), hw, patch);
          MapC K(kernel->data.data(), patch, cout);
          DC.noalias() = G * K.transpose();
        }
        auto& gx = tp->grad_acc(x);
        for (int i = 0; i < h; ++i) {
          for (int j = 0; j < w; ++j) {
            const double* row = dcol.data() + (static_cast<int64_t>(i) * w + j) * patch;
            for (int ki = 0; ki < k; ++ki) {
              const int si = i + ki - pad;
              if (si < 0 || si >= h) continue;
              for (int kj = 0; kj < k; ++kj) {
                const int sj = j + kj - pad;
                if (sj < 0 || sj >= w) continue;
                double* dst = gx.data() + (static_cast<int64_t>(si) * w + sj) * cin;
                const double* src = row + (static_cast<int64_t>(ki) * k + kj) * cin;
                for (int c = 0; c < cin; ++c) dst[c] += src[c];
              }
            }
          }
        }
      }
    });
  }
  return out;
}

TensorPtr batch_norm2d(const TensorPtr& x, const TensorPtr& gamma, const TensorPtr& beta,
                       const TensorPtr& running_mean, const TensorPtr& running_var, bool training,
                       double momentum, double eps) {
  if (x->rank() != 3) throw DimError("batch_norm2d expects [H,W,C]");
  const int c = x->shape[2];
  if (gamma->numel() != c || beta->numel() != c || running_mean->numel() != c || running_var->numel() != c)
    throw DimError("batch_norm2d parameter extent mismatch");
  const int64_t n = static_cast<int64_t>(x->shape[0]) * x->shape[1];
  auto out = Tensor::create(x->shape);

  std::vector<double> mu(c), inv_sigma(c);
  if (training) {
    std::vector<double> var(c, 0.0);
    for (int j = 0; j < c; ++j) mu[j] = 0.0;
    for (int64_t r = 0; r < n; ++r) {
      const double* in = x->data.data() + r * c;
      for (int j = 0; j < c; ++j) mu[j] += in[j];
    }
    for (int j = 0; j < c; ++j) mu[j] /= static_cast<double>(n);
    for (int64_t r = 0; r < n; ++r) {
      const double* in = x->data.data() + r * c;
      for (int j = 0; j < c; ++j) var[j] += (in[j] - mu[j]) * (in[j] - mu[j]);
    }
    for (int j = 0; j < c; ++j) var[j] /= static_cast<double>(n);
    for (int j = 0; j < c; ++j) {
      inv_sigma[j] = 1.0 / std::sqrt(var[j] + eps);
      const double unbiased = n > 1 ? var[j] * static_cast<double>(n) / static_cast<double>(n - 1) : var[j];
      running_mean->data[j] = (1.0 - momentum) * running_mean->data[j] + momentum * mu[j];
      running_var->data[j] = (1.0 - momentum) * running_var->data[j] + momentum * unbiased;
    }
  } else {
    for (int j = 0; j < c; ++j) {
      mu[j] = running_mean->data[j];
      inv_sigma[j] = 1.0 / std::sqrt(running_var->data[j] + eps);
    }
  }
  for (int64_t r = 0; r < n; ++r) {
    const double* in = x->data.data() + r * c;
    double* yy = out->data.data() + r * c;
    for (int j = 0; j < c; ++j) yy[j] = (in[j] - mu[j]) * inv_sigma[j] * gamma->data[j] + beta->data[j];
  }

  if (Tape* tp = tape_for({&x, &gamma, &beta})) {
    out->requires_grad = true;
    out->leaf = false;
    tp->record([tp, x, gamma, beta, out, mu = std::move(mu), inv_sigma = std::move(inv_sigma), c, n, training] {
      const auto* go = tp->grad_read(out.get());
      if (!go) return;
      std::vector<double>* gg = gamma->requires_grad ? &tp->grad_acc(gamma) : nullptr;
      std::vector<double>* gb = beta->requires_grad ? &tp->grad_acc(beta) : nullptr;
      if (gg || gb) {
        for (int64_t r = 0; r < n; ++r) {
          const double* in = x->data.data() + r * c;
          const double* g = go->data() + r * c;
          for (int j = 0; j < c; ++j) {
            if (gg) (*gg)[j] += g[j] * (in[j] - mu[j]) * inv_sigma[j];
            if (gb) (*gb)[j] += g[j];
          }
        }
      }
      if (x->requires_grad) {
        auto& gx = tp->grad_acc(x);
        if (!training) {
          for (int64_t r = 0; r < n; ++r) {
            const double* g = go->data() + r * c;
            double* dst = gx.data() + r * c;
            for (int j = 0; j < c; ++j) dst[j] += g[j] * gamma->data[j] * inv_sigma[j];
          }
        } else {
          // Batch statistics are a function of the input.
          std::vector<double> sum_dxhat(c, 0.0), sum_dxhat_xhat(c, 0.0);
          for (int64_t r = 0; r < n; ++r) {
            const double* in = x->data.data() + r * c;
            const double* g = go->data() + r * c;
            for (int j = 0; j < c; ++j) {
              const double xhat = (in[j] - mu[j]) * inv_sigma[j];
              const double dxhat = g[j] * gamma->data[j];
              sum_dxhat[j] += dxhat;
              sum_dxhat_xhat[j] += dxhat * xhat;
            }
          }
          const double invn = 1.0 / static_cast<double>(n);
          for (int64_t r = 0; r < n; ++r) {
            const double* in = x->data.data() + r * c;
            const double* g = go->data() + r * c;
            double* dst = gx.data() + r * c;
            for (int j = 0; j < c; ++j) {
              const double xhat = (in[j] - mu[j]) * inv_sigma[j];
              const double dxhat = g[j] * gamma->data[j];
              dst[j] += inv_sigma[j] * (dxhat - sum_dxhat[j] * invn - xhat * sum_dxhat_xhat[j] * invn);
            }
          }
        }
      }
    });
  }
  return out;
}

TensorPtr reshape(const TensorPtr& x, Shape s) {
  if (numel_of(s) != x->numel())
    throw DimError("reshape " + shape_str(x->shape) + " -> " + shape_str(s) + " changes element count");
  auto out = Tensor::create(std::move(s));
  out->data = x->data;
  if (Tape* tp = tape_for({&x})) {
    out->requires_grad = true;
    out->leaf = false;
    tp->record([tp, x, out] {
      const auto* go = tp->grad_read(out.get());
      if (!go || !x->requires_grad) return;
      auto& gx = tp->grad_acc(x);
      for (std::size_t i = 0; i < go->size(); ++i) gx[i] += (*go)[i];
    });
  }
  return out;
}

TensorPtr slice_axis(const TensorPtr& x, int axis, int start, int len) {
  if (axis < 0 || axis >= x->rank()) throw DimError("slice_axis: bad axis");
  if (start < 0 || len < 0 || start + len > x->shape[axis]) throw DimError("slice_axis: range out of bounds");
  Shape oshape = x->shape;
  oshape[axis] = len;
  auto out = Tensor::create(oshape);
  const int64_t outer = outer_extent(x->shape, axis);
  const int64_t inner = inner_extent(x->shape, axis + 1);
  const int64_t xstep = static_cast<int64_t>(x->shape[axis]) * inner;
  const int64_t ostep = static_cast<int64_t>(len) * inner;
  for (int64_t o = 0; o < outer; ++o) {
    std::memcpy(out->data.data() + o * ostep, x->data.data() + o * xstep + static_cast<int64_t>(start) * inner,
                sizeof(double) * static_cast<std::size_t>(ostep));
  }
  if (Tape* tp = tape_for({&x})) {
    out->requires_grad = true;
    out->leaf = false;
    tp->record([tp, x, out, outer, inner, xstep, ostep, start] {
      const auto* go = tp->grad_read(out.get());
      if (!go || !x->requires_grad) return;
      auto& gx = tp->grad_acc(x);
      for (int64_t o = 0; o < outer; ++o) {
        double* dst = gx.data() + o * xstep + static_cast<int64_t>(start) * inner;
        const double* src = go->data() + o * ostep;
        for (int64_t i = 0; i < ostep; ++i) dst[i] += src[i];
      }
    });
  }
  return out;
}

TensorPtr concat(const std::vector<TensorPtr>& xs, int axis) {
  if (xs.empty()) throw DimError("concat of nothing");
  Shape oshape = xs[0]->shape;
  if (axis < 0 || axis >= static_cast<int>(oshape.size())) throw DimError("concat: bad axis");
  int total = 0;
  for (const auto& t : xs) {
    if (t->rank() != static_cast<int>(oshape.size())) throw DimError("concat: rank mismatch");
    for (int d = 0; d < t->rank(); ++d)
      if (d != axis && t->shape[d] != oshape[d]) throw DimError("concat: extent mismatch");
    total += t->shape[axis];
  }
  oshape[axis] = total;
  auto out = Tensor::create(oshape);
  const int64_t outer = outer_extent(oshape, axis);
  const int64_t inner = inner_extent(oshape, axis + 1);
  const int64_t ostep = static_cast<int64_t>(total) * inner;
  int64_t written = 0;
  for (const auto& t : xs) {
    const int64_t tstep = static_cast<int64_t>(t->shape[axis]) * inner;
    for (int64_t o = 0; o < outer; ++o) {
      std::memcpy(out->data.data() + o * ostep + written, t->data.data() + o * tstep,
                  sizeof(double) * static_cast<std::size_t>(tstep));
    }
    written += tstep;
  }
  bool any_grad = false;
  for (const auto& t : xs) any_grad = any_grad || t->requires_grad;
  Tape* tp = active_tape();
  if (tp && any_grad) {
    out->requires_grad = true;
    out->leaf = false;
    tp->record([tp, xs, out, outer, ostep] {
      const auto* go = tp->grad_read(out.get());
      if (!go) return;
      int64_t offset = 0;
      for (const auto& t : xs) {
        const int64_t step = t->numel() / outer;
        if (t->requires_grad) {
          auto& gt = tp->grad_acc(t);
          for (int64_t o = 0; o < outer; ++o) {
            const double* src = go->data() + o * ostep + offset;
            double* dst = gt.data() + o * step;
            for (int64_t i = 0; i < step; ++i) dst[i] += src[i];
          }
        }
        offset += step;
      }
    });
  }
  return out;
}

TensorPtr split_heads(const TensorPtr& x, int heads) {
  if (x->rank() < 2) throw DimError("split_heads needs rank >= 2");
  const int t = x->shape[x->rank() - 2];
  const int c = x->shape[x->rank() - 1];
  if (c % heads != 0) throw ConfigError("split_heads: C=" + std::to_string(c) + " not divisible by h=" + std::to_string(heads));
  const int d = c / heads;
  Shape oshape(x->shape.begin(), x->shape.end() - 2);
  oshape.push_back(heads);
  oshape.push_back(t);
  oshape.push_back(d);
  auto out = Tensor::create(oshape);
  const int64_t batches = outer_extent(x->shape, x->rank() - 2);
  const int64_t tc = static_cast<int64_t>(t) * c;
  for (int64_t bi = 0; bi < batches; ++bi) {
    const double* src = x->data.data() + bi * tc;
    double* dst = out->data.data() + bi * tc;
    for (int hh = 0; hh < heads; ++hh)
      for (int tt = 0; tt < t; ++tt)
        std::memcpy(dst + (static_cast<int64_t>(hh) * t + tt) * d, src + static_cast<int64_t>(tt) * c + hh * d,
                    sizeof(double) * static_cast<std::size_t>(d));
  }
  if (Tape* tp = tape_for({&x})) {
    out->requires_grad = true;
    out->leaf = false;
    tp->record([tp, x, out, batches, heads, t, c, d, tc] {
      const auto* go = tp->grad_read(out.get());
      if (!go || !x->requires_grad) return;
      auto& gx = tp->grad_acc(x);
      for (int64_t bi = 0; bi < batches; ++bi) {
        const double* src = go->data() + bi * tc;
        double* dst = gx.data() + bi * tc;
        for (int hh = 0; hh < heads; ++hh)
          for (int tt = 0; tt < t; ++tt) {
            const double* s = src + (static_cast<int64_t>(hh) * t + tt) * d;
            double* e = dst + static_cast<int64_t>(tt) * c + hh * d;
            for (int j = 0; j < d; ++j) e[j] += s[j];
          }
      }
    });
  }
  return out;
}

TensorPtr merge_heads(const TensorPtr& x) {
  if (x->rank() < 3) throw DimError("merge_heads needs rank >= 3");
  const int heads = x->shape[x->rank() - 3];
  const int t = x->shape[x->rank() - 2];
  const int d = x->shape[x->rank() - 1];
  const int c = heads * d;
  Shape oshape(x->shape.begin(), x->shape.end() - 3);
  oshape.push_back(t);
  oshape.push_back(c);
  auto out = Tensor::create(oshape);
  const int64_t batches = outer_extent(x->shape, x->rank() - 3);
  const int64_t tc = static_cast<int64_t>(t) * c;
  for (int64_t bi = 0; bi < batches; ++bi) {
    const double* src = x->data.data() + bi * tc;
    double* dst = out->data.data() + bi * tc;
    for (int hh = 0; hh < heads; ++hh)
      for (int tt = 0; tt < t; ++tt)
        std::memcpy(dst + static_cast<int64_t>(tt) * c + hh * d, src + (static_cast<int64_t>(hh) * t + tt) * d,
                    sizeof(double) * static_cast<std::size_t>(d));
  }
  if (Tape* tp = tape_for({&x})) {
    out->requires_grad = true;
    out->leaf = false;
    tp->record([tp, x, out, batches, heads, t, c, d, tc] {
      const auto* go = tp->grad_read(out.get());
      if (!go || !x->requires_grad) return;
      auto& gx = tp->grad_acc(x);
      for (int64_t bi = 0; bi < batches; ++bi) {
        const double* src = go->data() + bi * tc;
        double* dst = gx.data() + bi * tc;
        for (int hh = 0; hh < heads; ++hh)
          for (int tt = 0; tt < t; ++tt) {
            const double* s = src + static_cast<int64_t>(tt) * c + hh * d;
            double* e = dst + (static_cast<int64_t>(hh) * t + tt) * d;
            for (int j = 0; j < d; ++j) e[j] += s[j];
          }
      }
    });
  }
  return out;
}

TensorPtr sum_all(const TensorPtr& x) {
  double s = 0.0;
  for (double v : x->data) s += v;
  auto out = Tensor::from({1}, {s});
  if (Tape* tp = tape_for({&x})) {
    out->requires_grad = true;
    out->leaf = false;
    tp->record([tp, x, out] {
      const auto* go = tp->grad_read(out.get());
      if (!go || !x->requires_grad) return;
      auto& gx = tp->grad_acc(x);
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += (*go)[0];
    });
  }
  return out;
}

TensorPtr mean_all(const TensorPtr& x) {
  return scale(sum_all(x), 1.0 / static_cast<double>(x->numel()));
}

}  // namespace coopbev::ad
