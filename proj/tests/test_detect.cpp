#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <vector>

#include "coopbev/ad/gradcheck.hpp"
#include "coopbev/ad/ops.hpp"
#include "coopbev/ad/tape.hpp"
#include "coopbev/common/rng.hpp"
#include "coopbev/detect/box.hpp"
#include "coopbev/detect/head.hpp"

using namespace coopbev;
using namespace coopbev::ad;
using namespace coopbev::detect;
using attn::Modality;
using geom::BevGrid;
using geom::Pose2;
using geom::Vec2;

namespace {

constexpr double kPi = 3.14159265358979323846;

// Independent point-in-rectangle used by the raster and assignment oracles.
bool ref_inside(const BoxBEV& b, double px, double py) {
  const double c = std::cos(b.yaw), s = std::sin(b.yaw);
  const double dx = px - b.cx, dy = py - b.cy;
  const double u = c * dx + s * dy;
  const double v = -s * dx + c * dy;
  return std::abs(u) <= 0.5 * b.l && std::abs(v) <= 0.5 * b.w;
}

// IoU by dense sampling over the joint bounding rectangle.
double raster_iou(const BoxBEV& a, const BoxBEV& b, int res = 2000) {
  const double ra = 0.5 * std::hypot(a.w, a.l), rb = 0.5 * std::hypot(b.w, b.l);
  const double lo_x = std::min(a.cx - ra, b.cx - rb), hi_x = std::max(a.cx + ra, b.cx + rb);
  const double lo_y = std::min(a.cy - ra, b.cy - rb), hi_y = std::max(a.cy + ra, b.cy + rb);
  const double sx = (hi_x - lo_x) / res, sy = (hi_y - lo_y) / res;
  int64_t inter = 0, uni = 0;
  for (int i = 0; i < res; ++i) {
    const double px = lo_x + (i + 0.5) * sx;
    for (int j = 0; j < res; ++j) {
      const double py = lo_y + (j + 0.5) * sy;
      const bool ia = ref_inside(a, px, py), ib = ref_inside(b, px, py);
      inter += (ia && ib);
      uni += (ia || ib);
    }
  }
  return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

BoxBEV random_box(Rng& rng) {
  BoxBEV b;
  b.cx = rng.uniform(-5.0, 5.0);
  b.cy = rng.uniform(-5.0, 5.0);
  b.w = rng.uniform(0.5, 3.0);
  b.l = rng.uniform(0.5, 5.0);
  b.yaw = rng.uniform(-kPi, kPi);
  return canonical_box(b);
}

TensorPtr probe_loss(const TensorPtr& y, uint64_t seed) {
  Rng rng(seed);
  auto w = Tensor::create(y->shape);
  for (auto& v : w->data) v = rng.uniform(-1.0, 1.0);
  return sum_all(mul(y, w));
}

}  // namespace

TEST_CASE("canonical boxes keep width across and yaw in the half-turn range") {
  auto b = canonical_box({1.0, 2.0, 4.0, 2.0, 0.3});  // wider than long
  CHECK(b.w == doctest::Approx(2.0));
  CHECK(b.l == doctest::Approx(4.0));
  CHECK(b.yaw == doctest::Approx(0.3 - 0.5 * kPi));  // swap then wrap

  auto c = canonical_box({0.0, 0.0, 1.0, 2.0, 2.5});  // yaw beyond pi/2
  CHECK(c.yaw > -0.5 * kPi);
  CHECK(c.yaw <= 0.5 * kPi);
  CHECK(c.yaw == doctest::Approx(2.5 - kPi));

  CHECK_THROWS_AS(canonical_box({0, 0, -1.0, 2.0, 0}), ConfigError);

  // A canonicalized box covers the same points as the original.
  Rng rng(31);
  for (int t = 0; t < 50; ++t) {
    BoxBEV raw{rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(0.5, 3), rng.uniform(0.5, 3),
               rng.uniform(-4.0, 4.0)};
    BoxBEV cb = canonical_box(raw);
    double px = rng.uniform(-4, 4), py = rng.uniform(-4, 4);
    CHECK(ref_inside(raw, px, py) == ref_inside(cb, px, py));
  }
}

TEST_CASE("rotated iou on known configurations") {
  BoxBEV sq{0, 0, 1, 1, 0};
  CHECK(rotated_iou(sq, sq) == doctest::Approx(1.0));
  CHECK(rotated_iou(sq, {5, 5, 1, 1, 0}) == 0.0);

  // Unit squares offset by half a side: intersection 0.5, union 1.5.
  CHECK(rotated_iou(sq, {0.5, 0, 1, 1, 0}) == doctest::Approx(1.0 / 3.0).epsilon(1e-9));

  // Rotated-over-aligned square against the dense-sampling oracle.
  BoxBEV rot{0, 0, 1, 1, 0.25 * kPi};
  CHECK(std::abs(rotated_iou(sq, rot) - raster_iou(sq, rot)) < 1e-3);

  BoxBEV degenerate{0, 0, 1e-9, 1e-9, 0};
  CHECK(rotated_iou(sq, degenerate) == 0.0);
}

TEST_CASE("rotated iou matches dense sampling on random pairs") {
  Rng rng(32);
  for (int t = 0; t < 8; ++t) {
    BoxBEV a = random_box(rng), b = random_box(rng);
    b.cx = a.cx + rng.uniform(-2.0, 2.0);  // keep most pairs overlapping
    b.cy = a.cy + rng.uniform(-2.0, 2.0);
    CHECK(std::abs(rotated_iou(a, b) - raster_iou(a, b)) < 1e-3);
  }
}

TEST_CASE("rotated iou is symmetric and rigid-transform invariant") {
  Rng rng(33);
  for (int t = 0; t < 40; ++t) {
    BoxBEV a = random_box(rng), b = random_box(rng);
    CHECK(std::abs(rotated_iou(a, b) - rotated_iou(b, a)) < 1e-12);

    Pose2 shared{rng.uniform(-3, 3), rng.uniform(-3, 3), rng.uniform(-kPi, kPi)};
    Pose2 origin{};
    BoxBEV ta = transform_box(a, shared, origin);
    BoxBEV tb = transform_box(b, shared, origin);
    CHECK(std::abs(rotated_iou(a, b) - rotated_iou(ta, tb)) < 1e-9);
  }
}

TEST_CASE("box frame changes round trip") {
  Rng rng(34);
  for (int t = 0; t < 20; ++t) {
    BoxBEV b = random_box(rng);
    Pose2 pa{rng.uniform(-3, 3), rng.uniform(-3, 3), rng.uniform(-kPi, kPi)};
    Pose2 pb{rng.uniform(-3, 3), rng.uniform(-3, 3), rng.uniform(-kPi, kPi)};
    BoxBEV back = transform_box(transform_box(b, pa, pb), pb, pa);
    CHECK(back.cx == doctest::Approx(b.cx).epsilon(1e-9));
    CHECK(back.cy == doctest::Approx(b.cy).epsilon(1e-9));
    CHECK(back.w == doctest::Approx(b.w));
    CHECK(back.l == doctest::Approx(b.l));
    CHECK(std::abs(geom::wrap_angle(back.yaw - b.yaw)) < 1e-9);
  }
}

TEST_CASE("nms keeps the best of overlapping boxes and all disjoint ones") {
  BoxBEV sq{0, 0, 1, 1, 0};
  std::vector<Detection> two = {{sq, 0.8}, {sq, 0.9}};
  auto kept = nms(two, 0.15);
  REQUIRE(kept.size() == 1);
  CHECK(kept[0].score == 0.9);

  std::vector<Detection> apart = {{{0, 0, 1, 1, 0}, 0.5}, {{10, 0, 1, 1, 0}, 0.4}};
  CHECK(nms(apart, 0.15).size() == 2);

  // Input order must not matter when scores are distinct.
  Rng rng(35);
  std::vector<Detection> pool;
  for (int i = 0; i < 12; ++i) pool.push_back({random_box(rng), 0.1 + 0.07 * i});
  auto sorted_out = nms(pool, 0.3);
  for (int t = 0; t < 5; ++t) {
    for (std::size_t i = pool.size(); i > 1; --i)
      std::swap(pool[i - 1], pool[rng.uniform_int(0, static_cast<int>(i) - 1)]);
    auto out = nms(pool, 0.3);
    REQUIRE(out.size() == sorted_out.size());
    for (std::size_t i = 0; i < out.size(); ++i) CHECK(out[i].score == sorted_out[i].score);
  }

  std::vector<Detection> many(30, {sq, 0.5});
  for (int i = 0; i < 30; ++i) many[i].box.cx = 10.0 * i;
  CHECK(nms(many, 0.15, 7).size() == 7);
}

TEST_CASE("average precision on hand-checked cases") {
  BoxBEV gt{0, 0, 2, 4.5, 0.2};
  CHECK(average_precision({{{gt, 0.9}}}, {{gt}}, 0.5) == doctest::Approx(1.0));
  CHECK(average_precision({{{{20, 20, 2, 4.5, 0}, 0.9}}}, {{gt}}, 0.5) == doctest::Approx(0.0));

  // Two truths; detections TP(0.9), FP(0.8), TP(0.7) give 1*0.5 + (2/3)*0.5.
  BoxBEV gt2{8, 8, 2, 4.5, -0.4};
  std::vector<std::vector<Detection>> dets = {
      {{gt, 0.9}, {{20, 20, 2, 4.5, 0}, 0.8}, {gt2, 0.7}}};
  CHECK(average_precision(dets, {{gt, gt2}}, 0.5) == doctest::Approx(5.0 / 6.0).epsilon(1e-12));

  CHECK(average_precision({{}}, {{}}, 0.5) == 1.0);
  CHECK(average_precision({{{gt, 0.9}}}, {{}}, 0.5) == 0.0);
  CHECK(average_precision({{}}, {{gt}}, 0.5) == 0.0);
}

TEST_CASE("average precision never rises with a stricter overlap threshold") {
  Rng rng(36);
  for (int trial = 0; trial < 6; ++trial) {
    std::vector<std::vector<Detection>> dets(3);
    std::vector<std::vector<BoxBEV>> gts(3);
    for (int s = 0; s < 3; ++s) {
      for (int g = 0; g < 4; ++g) gts[s].push_back(random_box(rng));
      for (int d = 0; d < 6; ++d) {
        BoxBEV base = gts[s][rng.uniform_int(0, 3)];
        base.cx += rng.uniform(-1.0, 1.0);
        base.cy += rng.uniform(-1.0, 1.0);
        dets[s].push_back({canonical_box(base), rng.uniform(0.05, 1.0)});
      }
    }
    double prev = 1.0 + 1e-12;
    for (double thr : {0.1, 0.3, 0.5, 0.7, 0.9}) {
      double ap = average_precision(dets, gts, thr);
      CHECK(ap <= prev + 1e-12);
      prev = ap;
    }
  }
}

TEST_CASE("late fusion pools collaborator boxes into the ego frame") {
  Pose2 ego{0, 0, 0};
  Pose2 other{10, 5, 0.5 * kPi};
  BoxBEV seen_by_other{2.0, -1.0, 2, 4.5, 0.3};  // in the collaborator frame

  // Single agent: identical to the no-fusion baseline.
  std::vector<Detection> solo = {{seen_by_other, 0.7}};
  auto lf = late_fusion({solo}, {ego}, 0);
  auto nf = no_fusion(solo);
  REQUIRE(lf.size() == nf.size());
  CHECK(lf[0].score == nf[0].score);
  CHECK(rotated_iou(lf[0].box, nf[0].box) == doctest::Approx(1.0));

  // The same physical object reported by both agents collapses to one box.
  BoxBEV in_world = transform_box(seen_by_other, other, ego);
  std::vector<std::vector<Detection>> per_agent = {{{in_world, 0.9}}, {{seen_by_other, 0.8}}};
  auto fused = late_fusion(per_agent, {ego, other}, 0);
  REQUIRE(fused.size() == 1);
  CHECK(fused[0].score == 0.9);

  // A box only the collaborator saw still reaches the ego output, in the
  // ego frame.
  std::vector<std::vector<Detection>> only_other = {{}, {{seen_by_other, 0.6}}};
  auto reached = late_fusion(only_other, {ego, other}, 0);
  REQUIRE(reached.size() == 1);
  CHECK(rotated_iou(reached[0].box, in_world) == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("detection export lines are stable") {
  Detection d{{1.25, -2.5, 2.0, 4.5, 0.125}, 0.875};
  CHECK(format_detection(3, d) == "3 0.875000 1.250000 -2.500000 2.000000 4.500000 0.125000");
}

TEST_CASE("target assignment marks exactly the covered cell centers") {
  BevGrid g{8, 8, 1.0};
  auto empty = assign_targets({}, g);
  CHECK(empty.pos->count_true() == 0);

  // Axis-aligned box covering two cell centers (centers sit on the
  // half-integer lattice for this grid).
  BoxBEV two_cells{0.5, 1.0, 0.9, 1.9, 0.5 * kPi};  // long axis along +y
  auto t = assign_targets({two_cells}, g);
  const BoxBEV canon = canonical_box(two_cells);
  int64_t expected = 0;
  for (int i = 0; i < g.h; ++i)
    for (int j = 0; j < g.w; ++j) {
      const Vec2 c = g.cell_center(i, j);
      const bool inside = ref_inside(canon, c.x, c.y);
      expected += inside;
      CHECK(t.pos->at({i, j}) == inside);
    }
  CHECK(expected == 2);
  CHECK(t.pos->count_true() == 2);

  // Random rotated boxes agree with the independent inside test.
  Rng rng(37);
  for (int trial = 0; trial < 10; ++trial) {
    BoxBEV b = random_box(rng);
    auto tt = assign_targets({b}, g);
    for (int i = 0; i < g.h; ++i)
      for (int j = 0; j < g.w; ++j) {
        const Vec2 c = g.cell_center(i, j);
        CHECK(tt.pos->at({i, j}) == ref_inside(canonical_box(b), c.x, c.y));
      }
  }
}

TEST_CASE("encoding then decoding at a positive cell reproduces the box") {
  BevGrid g{8, 8, 1.0};
  Rng rng(38);
  int roundtrips = 0;
  for (int trial = 0; trial < 20; ++trial) {
    BoxBEV b = random_box(rng);
    b.cx = rng.uniform(-3.0, 3.0);
    b.cy = rng.uniform(-3.0, 3.0);
    b = canonical_box(b);
    auto t = assign_targets({b}, g);
    for (int i = 0; i < g.h; ++i)
      for (int j = 0; j < g.w; ++j) {
        if (!t.pos->at({i, j})) continue;
        std::array<double, 6> r;
        for (int q = 0; q < 6; ++q)
          r[q] = t.reg->data[(static_cast<int64_t>(i) * g.w + j) * 6 + q];
        BoxBEV back = decode_box(r, g.cell_center(i, j));
        CHECK(back.cx == doctest::Approx(b.cx).epsilon(1e-9));
        CHECK(back.cy == doctest::Approx(b.cy).epsilon(1e-9));
        CHECK(back.w == doctest::Approx(b.w).epsilon(1e-9));
        CHECK(back.l == doctest::Approx(b.l).epsilon(1e-9));
        CHECK(std::abs(geom::wrap_angle(back.yaw - b.yaw)) < 1e-9);
        ++roundtrips;
      }
  }
  CHECK(roundtrips > 0);

  // Ties go to the nearer box center.
  BoxBEV near{0.5, 0.5, 3.0, 3.0, 0.0};
  BoxBEV far{2.5, 2.5, 6.0, 6.0, 0.0};
  auto t = assign_targets({far, near}, g);
  const Vec2 cell = g.cell_center(4, 4);  // (0.5, 0.5): inside both, at near's center
  REQUIRE(t.pos->at({4, 4}));
  std::array<double, 6> r;
  for (int q = 0; q < 6; ++q) r[q] = t.reg->data[(4 * g.w + 4) * 6 + q];
  BoxBEV back = decode_box(r, cell);
  CHECK(back.cx == doctest::Approx(near.cx));
  CHECK(back.w == doctest::Approx(near.w));
}

TEST_CASE("loss values on hand-computed cases") {
  // All six components off by 0.5 at the single positive cell.
  auto pos = Mask::create({1, 1});
  pos->set({0, 0}, true);
  auto pred = Tensor::zeros({1, 1, 6});
  auto tgt = Tensor::full({1, 1, 6}, 0.5);
  CHECK(smooth_l1_masked(pred, tgt, pos)->data[0] == doctest::Approx(0.125).epsilon(1e-12));

  // Large residual: linear branch, 2.5 - 0.5.
  auto tgt2 = Tensor::full({1, 1, 6}, 2.5);
  CHECK(smooth_l1_masked(pred, tgt2, pos)->data[0] == doctest::Approx(2.0).epsilon(1e-12));

  // No positives: exact zero, not NaN.
  auto none = Mask::create({1, 1});
  CHECK(smooth_l1_masked(pred, tgt, none)->data[0] == 0.0);

  // Focal at p=0.5, target 1: -0.25 * 0.25 * ln(0.5).
  auto logit0 = Tensor::zeros({1, 1, 1});
  double expect = -0.25 * 0.25 * std::log(0.5);
  CHECK(focal_loss(logit0, pos, 0.25, 2.0)->data[0] == doctest::Approx(expect).epsilon(1e-12));

  // Confident correct prediction: loss collapses toward zero.
  auto big = Tensor::full({1, 1, 1}, 20.0);
  CHECK(focal_loss(big, pos, 0.25, 2.0)->data[0] < 1e-7);

  // gamma 0, alpha 1/2 is half of plain cross-entropy.
  Rng rng(39);
  auto logits = Tensor::create({4, 4, 1});
  for (auto& v : logits->data) v = rng.uniform(-3.0, 3.0);
  auto tmask = Mask::create({4, 4});
  for (int i = 0; i < 16; ++i) tmask->data[i] = rng.bernoulli(0.4);
  double ce = 0.0;
  for (int i = 0; i < 16; ++i) {
    double p = 1.0 / (1.0 + std::exp(-logits->data[i]));
    ce += tmask->data[i] ? -std::log(p) : -std::log(1.0 - p);
  }
  ce /= 16.0;
  CHECK(focal_loss(logits, tmask, 0.5, 0.0)->data[0] == doctest::Approx(0.5 * ce).epsilon(1e-10));

  // Non-negativity under random inputs.
  for (int t = 0; t < 20; ++t) {
    auto lg = Tensor::create({3, 3, 1});
    for (auto& v : lg->data) v = rng.uniform(-6.0, 6.0);
    auto mk = Mask::create({3, 3});
    for (auto& v : mk->data) v = rng.bernoulli(0.5);
    CHECK(focal_loss(lg, mk)->data[0] >= 0.0);
    auto pd = Tensor::create({3, 3, 6});
    auto tg = Tensor::create({3, 3, 6});
    for (auto& v : pd->data) v = rng.uniform(-4.0, 4.0);
    for (auto& v : tg->data) v = rng.uniform(-4.0, 4.0);
    CHECK(smooth_l1_masked(pd, tg, mk)->data[0] >= 0.0);
  }
}

TEST_CASE("loss gradients match central differences") {
  Rng rng(40);
  auto logits = Tensor::create({3, 3, 1});
  for (auto& v : logits->data) v = rng.uniform(-2.0, 2.0);
  logits->requires_grad = true;
  auto tmask = Mask::create({3, 3});
  for (auto& v : tmask->data) v = rng.bernoulli(0.4);
  tmask->data[0] = 1;  // at least one positive

  auto rf = grad_check([&] { return focal_loss(logits, tmask); }, {{"logits", logits}});
  CHECK(rf.max_rel_err < 1e-7);

  auto pred = Tensor::create({3, 3, 6});
  auto tgt = Tensor::create({3, 3, 6});
  for (auto& v : pred->data) v = rng.uniform(-2.0, 2.0);
  for (auto& v : tgt->data) v = rng.uniform(-2.0, 2.0);
  pred->requires_grad = true;
  tgt->requires_grad = true;
  auto rs = grad_check([&] { return smooth_l1_masked(pred, tgt, tmask); },
                       {{"pred", pred}, {"tgt", tgt}});
  CHECK(rs.max_rel_err < 1e-6);

  // Combined loss stays differentiable through both terms.
  auto cls = Tensor::create({3, 3, 1});
  for (auto& v : cls->data) v = rng.uniform(-2.0, 2.0);
  cls->requires_grad = true;
  Targets t;
  t.pos = tmask;
  t.reg = tgt;
  auto rc = grad_check(
      [&] {
        HeadOutput out{cls, pred};
        return detection_loss(out, t).total;
      },
      {{"cls", cls}, {"pred", pred}});
  CHECK(rc.max_rel_err < 1e-6);
}

TEST_CASE("head outputs have the contracted shapes and disjoint parameters") {
  ParamStore ps;
  HeadSpec spec;
  spec.channels = 8;
  auto hm = register_head(ps, "head", spec, 99);
  BevGrid g{6, 6, 1.0};
  Rng rng(41);
  auto f = Tensor::create({g.h, g.w, 8});
  for (auto& v : f->data) v = rng.uniform(-1.0, 1.0);

  auto out = head_forward(hm, f, Modality::kLidar, false);
  CHECK(out.cls->shape == Shape{6, 6, 1});
  CHECK(out.reg->shape == Shape{6, 6, 6});

  // Scribbling every camera-owned head weight cannot move lidar predictions.
  for (auto& [name, e] : ps.entries())
    if (e.owner == "cam")
      for (auto& v : e.tensor->data) v = 777.5;
  auto out2 = head_forward(hm, f, Modality::kLidar, false);
  CHECK(out.cls->data == out2.cls->data);
  CHECK(out.reg->data == out2.reg->data);

  auto cam1 = head_forward(hm, f, Modality::kCamera, false);
  for (auto& [name, e] : ps.entries())
    if (e.owner == "lidar")
      for (auto& v : e.tensor->data) v = -55.25;
  auto cam2 = head_forward(hm, f, Modality::kCamera, false);
  CHECK(cam1.cls->data == cam2.cls->data);
}

TEST_CASE("a fresh head is quiet: zero input decodes to nothing") {
  ParamStore ps;
  HeadSpec spec;
  spec.channels = 8;
  auto hm = register_head(ps, "head", spec, 100);
  BevGrid g{6, 6, 1.0};
  auto f = Tensor::zeros({g.h, g.w, 8});
  auto out = head_forward(hm, f, Modality::kCamera, false);
  // Zero activations leave only the score bias: p = 1/(1+99) = 0.01.
  for (double v : out.cls->data) CHECK(v == doctest::Approx(-std::log(99.0)));
  CHECK(decode_detections(out, g, 0.1).empty());
}

TEST_CASE("gradients flow through the head") {
  ParamStore ps;
  HeadSpec spec;
  spec.channels = 4;
  auto hm = register_head(ps, "head", spec, 101);
  BevGrid g{4, 4, 1.0};
  Rng rng(42);
  auto f = Tensor::create({g.h, g.w, 4});
  for (auto& v : f->data) v = rng.uniform(-1.0, 1.0);
  f->requires_grad = true;

  // Nontrivial running stats so normalization actually rescales.
  for (auto& [name, e] : ps.entries()) {
    if (name.find(".mean.") != std::string::npos)
      for (auto& v : e.tensor->data) v = rng.uniform(-0.5, 0.5);
    if (name.find(".var.") != std::string::npos)
      for (auto& v : e.tensor->data) v = rng.uniform(0.5, 2.0);
  }

  std::vector<std::pair<std::string, TensorPtr>> leaves = {
      {"f", f},
      {"conv1.w", ps.get("head.conv1.w.lidar")},
      {"bn1.gamma", ps.get("head.bn1.gamma.lidar")},
      {"bn2.beta", ps.get("head.bn2.beta.lidar")},
      {"out.w", ps.get("head.out.w.lidar")},
      {"out.b", ps.get("head.out.b.lidar")},
  };
  auto res = grad_check(
      [&] {
        auto out = head_forward(hm, f, Modality::kLidar, false);
        return add(probe_loss(out.cls, 5), probe_loss(out.reg, 6));
      },
      leaves, 1e-5, 6);
  CHECK(res.max_rel_err < 1e-6);
}

TEST_CASE("decoding recovers a planted box and orders by score") {
  BevGrid g{8, 8, 0.5};
  BoxBEV planted = canonical_box({0.3, -0.4, 1.0, 2.0, 0.5});
  auto t = assign_targets({planted}, g);
  REQUIRE(t.pos->count_true() > 0);

  auto cls = Tensor::full({g.h, g.w, 1}, -30.0);
  auto reg = Tensor::zeros({g.h, g.w, 6});
  int planted_cells = 0;
  for (int i = 0; i < g.h; ++i)
    for (int j = 0; j < g.w; ++j) {
      const int64_t c = static_cast<int64_t>(i) * g.w + j;
      if (!t.pos->at({i, j})) continue;
      cls->data[c] = 2.0 + 0.1 * planted_cells;  // distinct scores
      for (int q = 0; q < 6; ++q) reg->data[c * 6 + q] = t.reg->data[c * 6 + q];
      ++planted_cells;
    }
  auto dets = decode_detections({cls, reg}, g, 0.1);
  REQUIRE(static_cast<int>(dets.size()) == planted_cells);
  for (std::size_t i = 1; i < dets.size(); ++i) CHECK(dets[i - 1].score >= dets[i].score);
  for (const auto& d : dets) {
    CHECK(d.box.cx == doctest::Approx(planted.cx).epsilon(1e-9));
    CHECK(d.box.cy == doctest::Approx(planted.cy).epsilon(1e-9));
    CHECK(std::abs(geom::wrap_angle(d.box.yaw - planted.yaw)) < 1e-9);
  }

  // Everything far below threshold decodes to an empty list.
  auto quiet = decode_detections({Tensor::full({g.h, g.w, 1}, -30.0), reg}, g, 0.1);
  CHECK(quiet.empty());
}
