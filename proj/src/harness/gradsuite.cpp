#include "coopbev/harness/gradsuite.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <string>
#include <vector>

#include "coopbev/ad/gradcheck.hpp"
#include "coopbev/ad/ops.hpp"
#include "coopbev/ad/param_store.hpp"
#include "coopbev/attn/h3gat.hpp"
#include "coopbev/common/rng.hpp"
#include "coopbev/detect/head.hpp"
#include "coopbev/fusion/fuse.hpp"
#include "coopbev/geom/warp.hpp"
#include "coopbev/sim/encoder.hpp"

namespace coopbev::harness {
namespace {

using ad::MaskPtr;
using ad::TensorPtr;

constexpr double kThreshold = 1e-4;

TensorPtr rnd(ad::Shape shape, uint64_t salt, double lo = -1.0, double hi = 1.0) {
  TensorPtr t = ad::Tensor::create(shape, true);
  Rng r(hash_u64(0x9aadc43c5ULL, salt));
  for (double& v : t->data) v = lo + (hi - lo) * r.uniform();
  return t;
}

// Values pushed away from zero so kinked activations stay FD-safe.
TensorPtr rnd_offzero(ad::Shape shape, uint64_t salt) {
  TensorPtr t = rnd(shape, salt);
  for (double& v : t->data) v += v >= 0.0 ? 0.25 : -0.25;
  return t;
}

// Fixed-weight scalar probe; weights are constants so only the path under
// test contributes gradient.
TensorPtr probe(const TensorPtr& y, uint64_t salt) {
  TensorPtr w = ad::Tensor::create(y->shape);
  Rng r(hash_u64(0x9c0be5ULL, salt));
  for (double& v : w->data) v = -1.0 + 2.0 * r.uniform();
  return ad::sum_all(ad::mul(y, w));
}

struct Suite {
  std::ostream& out;
  SuiteResult res;

  void check(const std::string& name, const std::function<TensorPtr()>& f,
             const std::vector<std::pair<std::string, TensorPtr>>& leaves, int64_t probes = 0) {
    ad::GradCheckResult r = ad::grad_check(f, leaves, 1e-5, probes, 7);
    ++res.checks;
    res.max_rel_err = std::max(res.max_rel_err, r.max_rel_err);
    bool ok = r.max_rel_err < kThreshold;
    if (!ok) ++res.failures;
    char buf[192];
    std::snprintf(buf, sizeof(buf), "%-26s %s  rel=%.3e  probes=%lld  worst=%s\n", name.c_str(),
                  ok ? "ok  " : "FAIL", r.max_rel_err, static_cast<long long>(r.probes),
                  r.worst.c_str());
    out << buf;
  }
};

void add_store_leaves(std::vector<std::pair<std::string, TensorPtr>>& leaves,
                      const ad::ParamStore& ps) {
  for (const auto& [name, e] : ps.entries())
    if (e.trainable && e.tensor->requires_grad) leaves.emplace_back(name, e.tensor);
}

// Deliberately skewed backward (factor 1.001) for the self-test path.
TensorPtr skewed_sum(const TensorPtr& x) {
  TensorPtr out = ad::Tensor::create({1});
  double s = 0.0;
  for (double v : x->data) s += v;
  out->data[0] = s;
  if (ad::Tape* tp = ad::tape_for({&x})) {
    out->requires_grad = true;
    out->leaf = false;
    tp->record([tp, x, out] {
      const auto* go = tp->grad_read(out.get());
      if (!go || !x->requires_grad) return;
      auto& gx = tp->grad_acc(x);
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += (*go)[0] * 1.001;
    });
  }
  return out;
}

void op_checks(Suite& s) {
  {
    TensorPtr a = rnd({3, 4}, 1), b = rnd({4}, 2);
    s.check("op add broadcast", [&] { return probe(ad::add(a, b), 1); }, {{"a", a}, {"b", b}});
    s.check("op sub broadcast", [&] { return probe(ad::sub(a, b), 2); }, {{"a", a}, {"b", b}});
    s.check("op mul broadcast", [&] { return probe(ad::mul(a, b), 3); }, {{"a", a}, {"b", b}});
    s.check("op scale", [&] { return probe(ad::scale(a, -1.7), 4); }, {{"a", a}});
  }
  {
    TensorPtr x = rnd_offzero({3, 5}, 3);
    s.check("op relu", [&] { return probe(ad::relu(x), 5); }, {{"x", x}});
    s.check("op gelu", [&] { return probe(ad::gelu(x), 6); }, {{"x", x}});
    s.check("op sigmoid", [&] { return probe(ad::sigmoid(x), 7); }, {{"x", x}});
  }
  {
    TensorPtr a = rnd({2, 3, 4}, 4), b = rnd({2, 4, 5}, 5), c = rnd({4, 5}, 6);
    s.check("op matmul", [&] { return probe(ad::matmul(a, b), 8); }, {{"a", a}, {"b", b}});
    s.check("op matmul broadcast", [&] { return probe(ad::matmul(a, c), 9); }, {{"a", a}, {"c", c}});
    s.check("op transpose_last2", [&] { return probe(ad::transpose_last2(a), 10); }, {{"a", a}});
  }
  {
    TensorPtr x = rnd({5, 6}, 7), w = rnd({6, 4}, 8), b = rnd({4}, 9);
    s.check("op linear", [&] { return probe(ad::linear(x, w, b), 11); },
            {{"x", x}, {"w", w}, {"b", b}});
  }
  {
    TensorPtr logits = rnd({2, 3, 5}, 10, -2.0, 2.0);
    MaskPtr m = ad::Mask::create({2, 3, 5}, true);
    m->set({0, 0, 1}, false);
    m->set({0, 0, 3}, false);
    m->set({1, 2, 0}, false);
    for (int k = 0; k < 5; ++k) m->set({1, 0, k}, false);  // one fully masked row
    s.check("op masked_softmax", [&] { return probe(ad::masked_softmax(logits, m), 12); },
            {{"logits", logits}});
  }
  {
    TensorPtr x = rnd({4, 6}, 11), g = rnd({6}, 12, 0.5, 1.5), b = rnd({6}, 13);
    s.check("op layer_norm", [&] { return probe(ad::layer_norm(x, g, b), 13); },
            {{"x", x}, {"g", g}, {"b", b}});
  }
  {
    TensorPtr x = rnd({5, 5, 3}, 14), w = rnd({3, 3, 3, 4}, 15, -0.5, 0.5), b = rnd({4}, 16);
    TensorPtr w1 = rnd({1, 1, 3, 2}, 17, -0.5, 0.5);
    s.check("op conv2d 3x3", [&] { return probe(ad::conv2d(x, w, b), 14); },
            {{"x", x}, {"w", w}, {"b", b}});
    s.check("op conv2d 1x1", [&] { return probe(ad::conv2d(x, w1), 15); }, {{"x", x}, {"w1", w1}});
  }
  {
    TensorPtr x = rnd({6, 6, 3}, 18), g = rnd({3}, 19, 0.5, 1.5), b = rnd({3}, 20);
    TensorPtr rm = ad::Tensor::from({3}, {0.1, -0.2, 0.3});
    TensorPtr rv = ad::Tensor::from({3}, {1.1, 0.7, 1.4});
    s.check("op batch_norm train",
            [&] { return probe(ad::batch_norm2d(x, g, b, rm, rv, true, 0.0), 16); },
            {{"x", x}, {"g", g}, {"b", b}});
    s.check("op batch_norm eval",
            [&] { return probe(ad::batch_norm2d(x, g, b, rm, rv, false), 17); },
            {{"x", x}, {"g", g}, {"b", b}});
  }
  {
    TensorPtr x = rnd({3, 4}, 21);
    TensorPtr y = rnd({2, 3}, 22), z = rnd({1, 3}, 23);
    s.check("op reshape", [&] { return probe(ad::reshape(x, {2, 6}), 18); }, {{"x", x}});
    s.check("op slice_axis", [&] { return probe(ad::slice_axis(x, 1, 1, 2), 19); }, {{"x", x}});
    s.check("op concat",
            [&] { return probe(ad::concat({y, z}, 0), 20); }, {{"y", y}, {"z", z}});
  }
  {
    TensorPtr x = rnd({2, 4, 6}, 24);
    s.check("op split/merge heads",
            [&] { return probe(ad::merge_heads(ad::split_heads(x, 2)), 21); }, {{"x", x}});
    s.check("op sum_all", [&] { return ad::sum_all(x); }, {{"x", x}});
    s.check("op mean_all", [&] { return ad::mean_all(x); }, {{"x", x}});
  }
  {
    TensorPtr logits = rnd({4, 4, 1}, 25, -2.0, 2.0);
    MaskPtr pos = ad::Mask::create({4, 4});
    pos->set({1, 1}, true);
    pos->set({2, 3}, true);
    s.check("op focal_loss", [&] { return detect::focal_loss(logits, pos); }, {{"logits", logits}});
    TensorPtr pred = rnd({4, 4, 6}, 26, -0.6, 0.6);
    TensorPtr tgt = ad::Tensor::create({4, 4, 6});
    Rng r(99);
    for (double& v : tgt->data) v = 0.3 * (r.uniform() - 0.5);
    s.check("op smooth_l1_masked",
            [&] { return detect::smooth_l1_masked(pred, tgt, pos); }, {{"pred", pred}});
  }
  {
    geom::BevGrid grid{6, 6, 1.0};
    geom::Pose2 recv{0.3, -0.2, 0.25}, send{-0.4, 0.5, -0.4};
    geom::WarpPlanPtr plan = geom::build_warp_plan(recv, send, grid);
    TensorPtr src = rnd({6, 6, 3}, 27);
    s.check("op warp_features", [&] { return probe(geom::warp_features(src, plan), 22); },
            {{"src", src}});
  }
}

void block_checks(Suite& s) {
  using attn::Modality;
  ad::ParamStore ps;
  attn::BlockParams bp = attn::register_block_params(ps, "blk", 8, 2, 2, 42);

  {
    TensorPtr x = rnd({3, 8, 8}, 30, -0.8, 0.8);
    std::vector<Modality> types = {Modality::kCamera, Modality::kCamera, Modality::kCamera,
                                   Modality::kCamera, Modality::kLidar,  Modality::kLidar,
                                   Modality::kLidar,  Modality::kLidar};
    MaskPtr valid = ad::Mask::create({3, 8}, true);
    valid->set({0, 5}, false);
    valid->set({2, 1}, false);
    std::vector<std::pair<std::string, TensorPtr>> leaves = {{"x", x}};
    add_store_leaves(leaves, ps);
    s.check("block window mixed",
            [&] { return probe(attn::h3gat_block(bp, x, types, 0, 4, Modality::kCamera, valid), 30); },
            leaves, 2);
  }
  {
    TensorPtr x = rnd({4, 6, 8}, 31, -0.8, 0.8);
    std::vector<Modality> types = {Modality::kCamera, Modality::kCamera, Modality::kCamera,
                                   Modality::kLidar,  Modality::kLidar,  Modality::kLidar};
    MaskPtr valid = ad::Mask::create({4, 6}, true);
    valid->set({1, 0}, false);
    std::vector<std::pair<std::string, TensorPtr>> leaves = {{"x", x}};
    add_store_leaves(leaves, ps);
    s.check("block stripe mixed",
            [&] { return probe(attn::h3gat_block(bp, x, types, 3, 3, Modality::kLidar, valid), 31); },
            leaves, 2);
  }
}

void fuse_check(Suite& s) {
  ad::ParamStore ps;
  fusion::FusionSpec spec;
  spec.channels = 8;
  spec.heads = 2;
  spec.window = 2;
  spec.iterations = 2;
  spec.mlp_ratio = 2;
  spec.rate = 2;
  spec.range = 50.0;
  fusion::FusionModel fm = fusion::register_fusion_model(ps, "fuse", spec, 43);

  geom::BevGrid grid{8, 8, 1.0};
  TensorPtr f0 = rnd({8, 8, 8}, 40, -0.8, 0.8);
  TensorPtr f1 = rnd({8, 8, 8}, 41, -0.8, 0.8);
  std::vector<fusion::AgentState> agents(2);
  agents[0] = {0, attn::Modality::kCamera, {0.0, 0.0, 0.0}, f0};
  agents[1] = {1, attn::Modality::kLidar, {1.0, 0.5, 0.3}, f1};

  std::vector<std::pair<std::string, TensorPtr>> leaves = {{"feat0", f0}, {"feat1", f1}};
  add_store_leaves(leaves, ps);
  s.check("fuse two-agent 8x8",
          [&] { return probe(fusion::fuse_for_ego(fm, agents, 0, grid), 40); }, leaves, 2);
}

void encoder_check(Suite& s) {
  ad::ParamStore ps;
  sim::EncoderSpec spec;
  spec.in_channels = 2;
  spec.channels = 8;
  sim::EncoderModel enc = sim::register_encoder(ps, "enc", spec, 44);
  Rng r(4040);
  for (int m = 0; m < attn::kNumModalities; ++m) {
    for (double& v : enc.per_mod[m].bn1_m->data) v = 0.2 * (r.uniform() - 0.5);
    for (double& v : enc.per_mod[m].bn1_v->data) v = 0.8 + 0.4 * r.uniform();
    for (double& v : enc.per_mod[m].bn2_m->data) v = 0.2 * (r.uniform() - 0.5);
    for (double& v : enc.per_mod[m].bn2_v->data) v = 0.8 + 0.4 * r.uniform();
  }
  TensorPtr obs = rnd({6, 6, 2}, 42, 0.0, 1.0);
  std::vector<std::pair<std::string, TensorPtr>> leaves = {{"obs", obs}};
  add_store_leaves(leaves, ps);
  s.check("encoder eval stack",
          [&] { return probe(sim::encode(enc, obs, attn::Modality::kLidar, false), 42); }, leaves,
          3);
}

void head_check(Suite& s) {
  ad::ParamStore ps;
  detect::HeadSpec spec;
  spec.channels = 8;
  detect::HeadModel head = detect::register_head(ps, "head", spec, 45);
  Rng r(5050);
  for (int m = 0; m < attn::kNumModalities; ++m) {
    for (double& v : head.per_mod[m].bn1_m->data) v = 0.2 * (r.uniform() - 0.5);
    for (double& v : head.per_mod[m].bn1_v->data) v = 0.8 + 0.4 * r.uniform();
    for (double& v : head.per_mod[m].bn2_m->data) v = 0.2 * (r.uniform() - 0.5);
    for (double& v : head.per_mod[m].bn2_v->data) v = 0.8 + 0.4 * r.uniform();
  }
  geom::BevGrid grid{8, 8, 1.0};
  std::vector<detect::BoxBEV> boxes = {{0.5, 0.5, 2.5, 5.0, 0.3}};
  detect::Targets t = detect::assign_targets(boxes, grid);
  TensorPtr feats = rnd({8, 8, 8}, 43, -0.8, 0.8);
  std::vector<std::pair<std::string, TensorPtr>> leaves = {{"feats", feats}};
  add_store_leaves(leaves, ps);
  s.check("head eval + loss",
          [&] {
            detect::HeadOutput out = detect::head_forward(head, feats, attn::Modality::kCamera, false);
            return detect::detection_loss(out, t).total;
          },
          leaves, 2);
}

}  // namespace

SuiteResult run_gradcheck_suite(std::ostream& out, bool inject_fault) {
  auto t0 = std::chrono::steady_clock::now();
  Suite s{out};
  op_checks(s);
  block_checks(s);
  fuse_check(s);
  encoder_check(s);
  head_check(s);
  if (inject_fault) {
    TensorPtr x = rnd({3, 3}, 60);
    s.check("self-test skewed backward", [&] { return skewed_sum(x); }, {{"x", x}});
  }
  s.res.seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  char buf[160];
  std::snprintf(buf, sizeof(buf), "suite: %d checks, %d failures, max_rel=%.3e, %.2fs\n",
                s.res.checks, s.res.failures, s.res.max_rel_err, s.res.seconds);
  out << buf;
  return s.res;
}

}  // namespace coopbev::harness
