#include "coopbev/attn/partition.hpp"

#include <cstring>

namespace coopbev::attn {

using namespace ad;

namespace {

void check_maps(const std::vector<TensorPtr>& maps, int p) {
  if (maps.empty()) throw DimError("partition of an empty agent stack");
  const Shape& s0 = maps[0]->shape;
  if (s0.size() != 3) throw DimError("agent maps must be [H,W,C]");
  for (const auto& m : maps)
    if (m->shape != s0) throw DimError("agent maps disagree in shape");
  if (s0[0] % p != 0 || s0[1] % p != 0)
    throw ConfigError("window size " + std::to_string(p) + " does not divide " + shape_str(s0));
}

// src[k] = agent * H*W + cell for output token k; channels ride along.
TensorPtr gather_tokens(const std::vector<TensorPtr>& maps, Shape out_shape, std::vector<int64_t> src) {
  const int c = maps[0]->shape[2];
  const int64_t hw = static_cast<int64_t>(maps[0]->shape[0]) * maps[0]->shape[1];
  auto out = Tensor::create(std::move(out_shape));
  for (std::size_t k = 0; k < src.size(); ++k) {
    const int64_t a = src[k] / hw, cell = src[k] % hw;
    std::memcpy(out->data.data() + static_cast<int64_t>(k) * c, maps[a]->data.data() + cell * c,
                sizeof(double) * static_cast<std::size_t>(c));
  }
  bool any = false;
  for (const auto& m : maps) any = any || m->requires_grad;
  Tape* tp = active_tape();
  if (tp && any) {
    out->requires_grad = true;
    out->leaf = false;
    tp->record([tp, maps, out, src = std::move(src), hw, c] {
      const auto* go = tp->grad_read(out.get());
      if (!go) return;
      std::vector<std::vector<double>*> accs(maps.size(), nullptr);
      for (std::size_t a = 0; a < maps.size(); ++a)
        if (maps[a]->requires_grad) accs[a] = &tp->grad_acc(maps[a]);
      for (std::size_t k = 0; k < src.size(); ++k) {
        const int64_t a = src[k] / hw, cell = src[k] % hw;
        if (!accs[static_cast<std::size_t>(a)]) continue;
        double* dst = accs[static_cast<std::size_t>(a)]->data() + cell * c;
        const double* g = go->data() + static_cast<int64_t>(k) * c;
        for (int i = 0; i < c; ++i) dst[i] += g[i];
      }
    });
  }
  return out;
}

// tok_of_cell[cell] = flat token index in `tokens` (channels contiguous).
TensorPtr gather_cells(const TensorPtr& tokens, Shape out_shape, std::vector<int64_t> tok_of_cell) {
  const int c = tokens->shape.back();
  auto out = Tensor::create(std::move(out_shape));
  for (std::size_t cell = 0; cell < tok_of_cell.size(); ++cell) {
    std::memcpy(out->data.data() + static_cast<int64_t>(cell) * c, tokens->data.data() + tok_of_cell[cell] * c,
                sizeof(double) * static_cast<std::size_t>(c));
  }
  if (Tape* tp = tape_for({&tokens})) {
    out->requires_grad = true;
    out->leaf = false;
    tp->record([tp, tokens, out, tok_of_cell = std::move(tok_of_cell), c] {
      const auto* go = tp->grad_read(out.get());
      if (!go || !tokens->requires_grad) return;
      auto& gt = tp->grad_acc(tokens);
      for (std::size_t cell = 0; cell < tok_of_cell.size(); ++cell) {
        double* dst = gt.data() + tok_of_cell[cell] * c;
        const double* g = go->data() + static_cast<int64_t>(cell) * c;
        for (int i = 0; i < c; ++i) dst[i] += g[i];
      }
    });
  }
  return out;
}

}  // namespace

TensorPtr partition_local(const std::vector<TensorPtr>& maps, int p) {
  check_maps(maps, p);
  const int n = static_cast<int>(maps.size());
  const int h = maps[0]->shape[0], w = maps[0]->shape[1], c = maps[0]->shape[2];
  const int wp = w / p;
  const int s_count = (h / p) * wp;
  const int t_count = n * p * p;
  std::vector<int64_t> src(static_cast<std::size_t>(s_count) * t_count);
  for (int a = 0; a < n; ++a)
    for (int i = 0; i < h; ++i)
      for (int j = 0; j < w; ++j) {
        const int s = (i / p) * wp + (j / p);
        const int t = a * p * p + (i % p) * p + (j % p);
        src[static_cast<std::size_t>(s) * t_count + t] = static_cast<int64_t>(a) * h * w + static_cast<int64_t>(i) * w + j;
      }
  return gather_tokens(maps, {s_count, t_count, c}, std::move(src));
}

TensorPtr partition_global(const std::vector<TensorPtr>& maps, int p) {
  check_maps(maps, p);
  const int n = static_cast<int>(maps.size());
  const int h = maps[0]->shape[0], w = maps[0]->shape[1], c = maps[0]->shape[2];
  const int wp = w / p;
  const int g_count = (h / p) * wp;
  const int s_count = p * p;
  const int t_count = n * g_count;
  std::vector<int64_t> src(static_cast<std::size_t>(s_count) * t_count);
  for (int a = 0; a < n; ++a)
    for (int i = 0; i < h; ++i)
      for (int j = 0; j < w; ++j) {
        const int s = (i % p) * p + (j % p);
        const int t = a * g_count + (i / p) * wp + (j / p);
        src[static_cast<std::size_t>(s) * t_count + t] = static_cast<int64_t>(a) * h * w + static_cast<int64_t>(i) * w + j;
      }
  return gather_tokens(maps, {s_count, t_count, c}, std::move(src));
}

TensorPtr partition_global_striped(const std::vector<TensorPtr>& maps, int p) {
  check_maps(maps, p);
  const int n = static_cast<int>(maps.size());
  const int h = maps[0]->shape[0], w = maps[0]->shape[1], c = maps[0]->shape[2];
  const int wp = w / p;
  const int g_count = (h / p) * wp;
  std::vector<int64_t> src(static_cast<std::size_t>(n) * p * p * g_count);
  for (int a = 0; a < n; ++a)
    for (int i = 0; i < h; ++i)
      for (int j = 0; j < w; ++j) {
        const int s = a * p * p + (i % p) * p + (j % p);
        const int g = (i / p) * wp + (j / p);
        src[static_cast<std::size_t>(s) * g_count + g] = static_cast<int64_t>(a) * h * w + static_cast<int64_t>(i) * w + j;
      }
  return gather_tokens(maps, {n * p * p, g_count, c}, std::move(src));
}

TensorPtr unpartition_local(const TensorPtr& tokens, int h, int w, int p) {
  if (tokens->rank() != 3 || tokens->shape[0] != (h / p) * (w / p) || tokens->shape[1] != p * p)
    throw DimError("unpartition_local: tokens " + shape_str(tokens->shape) + " do not match grid");
  const int wp = w / p;
  std::vector<int64_t> tok(static_cast<std::size_t>(h) * w);
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j) {
      const int s = (i / p) * wp + (j / p);
      const int t = (i % p) * p + (j % p);
      tok[static_cast<std::size_t>(i) * w + j] = static_cast<int64_t>(s) * p * p + t;
    }
  return gather_cells(tokens, {h, w, tokens->shape[2]}, std::move(tok));
}

TensorPtr unpartition_global(const TensorPtr& tokens, int h, int w, int p) {
  const int wp = w / p;
  const int g_count = (h / p) * wp;
  if (tokens->rank() != 3 || tokens->shape[0] != p * p || tokens->shape[1] != g_count)
    throw DimError("unpartition_global: tokens " + shape_str(tokens->shape) + " do not match grid");
  std::vector<int64_t> tok(static_cast<std::size_t>(h) * w);
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j) {
      const int s = (i % p) * p + (j % p);
      const int g = (i / p) * wp + (j / p);
      tok[static_cast<std::size_t>(i) * w + j] = static_cast<int64_t>(s) * g_count + g;
    }
  return gather_cells(tokens, {h, w, tokens->shape[2]}, std::move(tok));
}

MaskPtr partition_local_mask(const std::vector<MaskPtr>& valid, int p) {
  const int n = static_cast<int>(valid.size());
  const int h = valid[0]->shape[0], w = valid[0]->shape[1];
  const int wp = w / p;
  const int s_count = (h / p) * wp;
  const int t_count = n * p * p;
  auto out = Mask::create({s_count, t_count});
  for (int a = 0; a < n; ++a)
    for (int i = 0; i < h; ++i)
      for (int j = 0; j < w; ++j) {
        const int s = (i / p) * wp + (j / p);
        const int t = a * p * p + (i % p) * p + (j % p);
        out->data[static_cast<std::size_t>(s) * t_count + t] = valid[a]->data[static_cast<std::size_t>(i) * w + j];
      }
  return out;
}

MaskPtr partition_global_mask(const std::vector<MaskPtr>& valid, int p) {
  const int n = static_cast<int>(valid.size());
  const int h = valid[0]->shape[0], w = valid[0]->shape[1];
  const int wp = w / p;
  const int g_count = (h / p) * wp;
  const int s_count = p * p;
  const int t_count = n * g_count;
  auto out = Mask::create({s_count, t_count});
  for (int a = 0; a < n; ++a)
    for (int i = 0; i < h; ++i)
      for (int j = 0; j < w; ++j) {
        const int s = (i % p) * p + (j % p);
        const int t = a * g_count + (i / p) * wp + (j / p);
        out->data[static_cast<std::size_t>(s) * t_count + t] = valid[a]->data[static_cast<std::size_t>(i) * w + j];
      }
  return out;
}

}  // namespace coopbev::attn
