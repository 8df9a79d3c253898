#include "coopbev/detect/head.hpp"

#include <algorithm>
#include <cmath>

#include "coopbev/ad/init.hpp"
#include "coopbev/ad/tape.hpp"
#include "coopbev/common/rng.hpp"

namespace coopbev::detect {

using namespace coopbev::ad;
using attn::kNumModalities;
using attn::Modality;
using attn::modality_name;
using geom::BevGrid;
using geom::Vec2;

namespace {

// log(1 + e^x) without overflow.
double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

TensorPtr conv_bn_relu(const TensorPtr& x, const TensorPtr& w, const TensorPtr& b,
                       const TensorPtr& g, const TensorPtr& beta, const TensorPtr& m,
                       const TensorPtr& v, bool training) {
  return relu(batch_norm2d(conv2d(x, w, b), g, beta, m, v, training));
}

}  // namespace

HeadModel register_head(ParamStore& ps, const std::string& prefix, const HeadSpec& spec,
                        uint64_t seed) {
  const int c = spec.channels;
  HeadModel hm;
  hm.spec = spec;
  for (int mi = 0; mi < kNumModalities; ++mi) {
    const std::string mn = modality_name(static_cast<Modality>(mi));
    HeadLayer& L = hm.per_mod[mi];
    auto conv = [&](const std::string& tag, int k, int cin, int cout) {
      auto w = Tensor::create({k, k, cin, cout});
      Rng rng(param_seed(seed, prefix + "." + tag + ".w." + mn));
      fill_xavier_uniform(*w, k * k * cin, cout, rng);
      return ps.add(prefix + "." + tag + ".w." + mn, w, mn);
    };
    L.conv1_w = conv("conv1", 3, c, c);
    L.conv1_b = ps.add(prefix + ".conv1.b." + mn, Tensor::zeros({c}), mn);
    L.bn1_g = ps.add(prefix + ".bn1.gamma." + mn, Tensor::full({c}, 1.0), mn);
    L.bn1_b = ps.add(prefix + ".bn1.beta." + mn, Tensor::zeros({c}), mn);
    L.bn1_m = ps.add(prefix + ".bn1.mean." + mn, Tensor::zeros({c}), mn, false);
    L.bn1_v = ps.add(prefix + ".bn1.var." + mn, Tensor::full({c}, 1.0), mn, false);
    L.conv2_w = conv("conv2", 3, c, c);
    L.conv2_b = ps.add(prefix + ".conv2.b." + mn, Tensor::zeros({c}), mn);
    L.bn2_g = ps.add(prefix + ".bn2.gamma." + mn, Tensor::full({c}, 1.0), mn);
    L.bn2_b = ps.add(prefix + ".bn2.beta." + mn, Tensor::zeros({c}), mn);
    L.bn2_m = ps.add(prefix + ".bn2.mean." + mn, Tensor::zeros({c}), mn, false);
    L.bn2_v = ps.add(prefix + ".bn2.var." + mn, Tensor::full({c}, 1.0), mn, false);
    L.out_w = conv("out", 1, c, 7);
    auto ob = Tensor::zeros({7});
    ob->data[0] = -std::log(99.0);  // start the score channel at p ~= 0.01
    L.out_b = ps.add(prefix + ".out.b." + mn, ob, mn);
  }
  return hm;
}

HeadOutput head_forward(const HeadModel& m, const TensorPtr& features, Modality ego,
                        bool training) {
  const HeadLayer& L = m.per_mod[static_cast<int>(ego)];
  auto h1 = conv_bn_relu(features, L.conv1_w, L.conv1_b, L.bn1_g, L.bn1_b, L.bn1_m, L.bn1_v,
                         training);
  auto h2 = conv_bn_relu(h1, L.conv2_w, L.conv2_b, L.bn2_g, L.bn2_b, L.bn2_m, L.bn2_v, training);
  auto out = conv2d(h2, L.out_w, L.out_b);
  return {slice_axis(out, 2, 0, 1), slice_axis(out, 2, 1, 6)};
}

std::array<double, 6> encode_box(const BoxBEV& b, Vec2 cell) {
  const BoxBEV cb = canonical_box(b);
  const double d = anchor_diag();
  return {(cb.cx - cell.x) / d, (cb.cy - cell.y) / d, std::log(cb.w / kAnchorW),
          std::log(cb.l / kAnchorL), std::sin(2.0 * cb.yaw), std::cos(2.0 * cb.yaw)};
}

BoxBEV decode_box(const std::array<double, 6>& r, Vec2 cell) {
  const double d = anchor_diag();
  BoxBEV b;
  b.cx = cell.x + r[0] * d;
  b.cy = cell.y + r[1] * d;
  b.w = kAnchorW * std::exp(r[2]);
  b.l = kAnchorL * std::exp(r[3]);
  b.yaw = 0.5 * std::atan2(r[4], r[5]);
  return canonical_box(b);
}

Targets assign_targets(const std::vector<BoxBEV>& boxes, const BevGrid& grid) {
  std::vector<BoxBEV> canon;
  canon.reserve(boxes.size());
  for (const auto& b : boxes) canon.push_back(canonical_box(b));

  Targets t;
  t.pos = Mask::create({grid.h, grid.w});
  t.reg = Tensor::zeros({grid.h, grid.w, 6});
  for (int i = 0; i < grid.h; ++i)
    for (int j = 0; j < grid.w; ++j) {
      const Vec2 c = grid.cell_center(i, j);
      int best = -1;
      double best_d2 = 0.0;
      for (std::size_t k = 0; k < canon.size(); ++k) {
        if (!point_in_box(canon[k], c)) continue;
        const double dx = canon[k].cx - c.x, dy = canon[k].cy - c.y;
        const double d2 = dx * dx + dy * dy;
        if (best < 0 || d2 < best_d2) {
          best = static_cast<int>(k);
          best_d2 = d2;
        }
      }
      if (best < 0) continue;
      t.pos->set({i, j}, true);
      const auto r = encode_box(canon[best], c);
      for (int q = 0; q < 6; ++q) t.reg->data[(static_cast<int64_t>(i) * grid.w + j) * 6 + q] = r[q];
    }
  return t;
}

TensorPtr focal_loss(const TensorPtr& logits, const MaskPtr& target, double alpha, double gamma) {
  const int64_t n = logits->numel();
  if (!target || n != target->numel())
    throw DimError("focal_loss: logit/target element counts differ");
  auto out = Tensor::create({});
  double acc = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    const bool pos = target->data[i] != 0;
    const double u = pos ? logits->data[i] : -logits->data[i];
    const double at = pos ? alpha : 1.0 - alpha;
    const double one_minus_p = 1.0 / (1.0 + std::exp(u));  // sigmoid(-u)
    acc += at * std::pow(one_minus_p, gamma) * softplus(-u);
  }
  out->data[0] = acc / static_cast<double>(n);

  if (Tape* tp = tape_for({&logits})) {
    out->requires_grad = true;
    out->leaf = false;
    auto tgt = target;  // shared ownership keeps the mask alive for backward
    tp->record([tp, logits, out, tgt, alpha, gamma, n] {
      const auto* go = tp->grad_read(out.get());
      if (!go || !logits->requires_grad) return;
      auto& gx = tp->grad_acc(logits);
      const double scale = (*go)[0] / static_cast<double>(n);
      for (int64_t i = 0; i < n; ++i) {
        const bool pos = tgt->data[i] != 0;
        const double s = pos ? 1.0 : -1.0;
        const double u = s * logits->data[i];
        const double at = pos ? alpha : 1.0 - alpha;
        const double q = 1.0 / (1.0 + std::exp(u));  // 1 - p_t
        const double p = 1.0 - q;
        // d/du of -(1-p)^g log p, with log p = -softplus(-u).
        const double dLdu = at * std::pow(q, gamma) * (-gamma * p * softplus(-u) - q);
        gx[i] += scale * s * dLdu;
      }
    });
  }
  return out;
}

TensorPtr smooth_l1_masked(const TensorPtr& pred, const TensorPtr& target, const MaskPtr& pos) {
  if (pred->shape != target->shape) throw DimError("smooth_l1: shape mismatch");
  if (!pos) throw DimError("smooth_l1: missing mask");
  const int64_t cells = pos->numel();
  if (cells == 0 || pred->numel() % cells != 0)
    throw DimError("smooth_l1: mask does not tile the predictions");
  const int64_t comps = pred->numel() / cells;
  const int64_t npos = pos->count_true();

  auto out = Tensor::create({});
  if (npos == 0) return out;  // defined as zero, nothing to differentiate

  const double denom = static_cast<double>(npos * comps);
  double acc = 0.0;
  for (int64_t c = 0; c < cells; ++c) {
    if (!pos->data[c]) continue;
    for (int64_t q = 0; q < comps; ++q) {
      const double x = pred->data[c * comps + q] - target->data[c * comps + q];
      const double ax = std::abs(x);
      acc += ax < 1.0 ? 0.5 * x * x : ax - 0.5;
    }
  }
  out->data[0] = acc / denom;

  if (Tape* tp = tape_for({&pred, &target})) {
    out->requires_grad = true;
    out->leaf = false;
    auto msk = pos;
    tp->record([tp, pred, target, out, msk, cells, comps, denom] {
      const auto* go = tp->grad_read(out.get());
      if (!go) return;
      const double scale = (*go)[0] / denom;
      for (int64_t c = 0; c < cells; ++c) {
        if (!msk->data[c]) continue;
        for (int64_t q = 0; q < comps; ++q) {
          const int64_t i = c * comps + q;
          const double x = pred->data[i] - target->data[i];
          const double d = std::abs(x) < 1.0 ? x : (x > 0.0 ? 1.0 : -1.0);
          if (pred->requires_grad) tp->grad_acc(pred)[i] += scale * d;
          if (target->requires_grad) tp->grad_acc(target)[i] -= scale * d;
        }
      }
    });
  }
  return out;
}

DetectionLoss detection_loss(const HeadOutput& out, const Targets& t, double alpha, double gamma,
                             double reg_weight) {
  DetectionLoss dl;
  auto fl = focal_loss(out.cls, t.pos, alpha, gamma);
  auto rl = smooth_l1_masked(out.reg, t.reg, t.pos);
  dl.focal_value = fl->data[0];
  dl.reg_value = rl->data[0];
  dl.total = add(fl, scale(rl, reg_weight));
  return dl;
}

std::vector<Detection> decode_detections(const HeadOutput& out, const BevGrid& grid,
                                         double score_thresh) {
  if (out.cls->shape != Shape{grid.h, grid.w, 1} || out.reg->shape != Shape{grid.h, grid.w, 6})
    throw DimError("decode: head output does not match the grid");
  std::vector<Detection> dets;
  for (int i = 0; i < grid.h; ++i)
    for (int j = 0; j < grid.w; ++j) {
      const int64_t c = static_cast<int64_t>(i) * grid.w + j;
      const double score = 1.0 / (1.0 + std::exp(-out.cls->data[c]));
      if (score < score_thresh) continue;
      std::array<double, 6> r;
      for (int q = 0; q < 6; ++q) r[q] = out.reg->data[c * 6 + q];
      dets.push_back({decode_box(r, grid.cell_center(i, j)), score});
    }
  std::stable_sort(dets.begin(), dets.end(),
                   [](const Detection& a, const Detection& b) { return a.score > b.score; });
  return dets;
}

}  // namespace coopbev::detect
