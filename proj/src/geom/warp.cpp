#include "coopbev/geom/warp.hpp"

#include <cmath>
#include <cstring>

namespace coopbev::geom {

namespace {
constexpr double kSnapEps = 1e-9;  // cell units; catches float dust on integer warps
}

WarpPlanPtr build_warp_plan(const Pose2& receiver, const Pose2& sender, const BevGrid& grid) {
  auto out = std::make_shared<WarpPlan>();
  WarpPlan& plan = *out;
  plan.h = grid.h;
  plan.w = grid.w;
  const int64_t n = plan.cells();
  plan.kind.assign(static_cast<std::size_t>(n), WarpPlan::kOutside);
  plan.exact_src.assign(static_cast<std::size_t>(n), -1);
  plan.corners.assign(static_cast<std::size_t>(n), {-1, -1, -1, -1});
  plan.weights.assign(static_cast<std::size_t>(n), {0.0, 0.0, 0.0, 0.0});
  plan.valid.assign(static_cast<std::size_t>(n), 0);

  const Pose2 rel = relative_transform(receiver, sender);
  const double c = std::cos(rel.yaw), s = std::sin(rel.yaw);
  for (int i = 0; i < grid.h; ++i) {
    for (int j = 0; j < grid.w; ++j) {
      const Vec2 p = grid.cell_center(i, j);
      const Vec2 q{c * p.x - s * p.y + rel.x, s * p.x + c * p.y + rel.y};
      const Vec2 uv = grid.cell_coords(q);
      const int64_t k = static_cast<int64_t>(i) * grid.w + j;

      const double ru = std::round(uv.x), rv = std::round(uv.y);
      if (std::abs(uv.x - ru) < kSnapEps && std::abs(uv.y - rv) < kSnapEps) {
        const int si = static_cast<int>(ru), sj = static_cast<int>(rv);
        if (si < 0 || si >= grid.h || sj < 0 || sj >= grid.w) continue;
        plan.kind[static_cast<std::size_t>(k)] = WarpPlan::kExact;
        plan.exact_src[static_cast<std::size_t>(k)] = static_cast<int32_t>(si * grid.w + sj);
        plan.valid[static_cast<std::size_t>(k)] = 1;
        continue;
      }
      if (uv.x < 0.0 || uv.x > grid.h - 1.0 || uv.y < 0.0 || uv.y > grid.w - 1.0) continue;
      int i0 = static_cast<int>(std::floor(uv.x));
      int j0 = static_cast<int>(std::floor(uv.y));
      if (i0 > grid.h - 2) i0 = grid.h - 2;
      if (j0 > grid.w - 2) j0 = grid.w - 2;
      const double fu = uv.x - i0, fv = uv.y - j0;
      plan.kind[static_cast<std::size_t>(k)] = WarpPlan::kBilinear;
      plan.corners[static_cast<std::size_t>(k)] = {
          static_cast<int32_t>(i0 * grid.w + j0), static_cast<int32_t>(i0 * grid.w + j0 + 1),
          static_cast<int32_t>((i0 + 1) * grid.w + j0), static_cast<int32_t>((i0 + 1) * grid.w + j0 + 1)};
      plan.weights[static_cast<std::size_t>(k)] = {(1.0 - fu) * (1.0 - fv), (1.0 - fu) * fv, fu * (1.0 - fv),
                                                   fu * fv};
      plan.valid[static_cast<std::size_t>(k)] = 1;
    }
  }
  return out;
}

ad::TensorPtr warp_features(const ad::TensorPtr& src, const WarpPlanPtr& plan_ptr) {
  using namespace ad;
  const WarpPlan& plan = *plan_ptr;
  if (src->rank() != 3 || src->shape[0] != plan.h || src->shape[1] != plan.w)
    throw DimError("warp_features: src " + shape_str(src->shape) + " does not match plan grid");
  const int ch = src->shape[2];
  auto out = Tensor::create(src->shape);
  const int64_t n = plan.cells();
  for (int64_t k = 0; k < n; ++k) {
    double* dst = out->data.data() + k * ch;
    switch (plan.kind[static_cast<std::size_t>(k)]) {
      case WarpPlan::kExact:
        std::memcpy(dst, src->data.data() + static_cast<int64_t>(plan.exact_src[static_cast<std::size_t>(k)]) * ch,
                    sizeof(double) * static_cast<std::size_t>(ch));
        break;
      case WarpPlan::kBilinear: {
        const auto& cr = plan.corners[static_cast<std::size_t>(k)];
        const auto& wt = plan.weights[static_cast<std::size_t>(k)];
        for (int c = 0; c < ch; ++c) {
          dst[c] = wt[0] * src->data[static_cast<std::size_t>(cr[0]) * ch + c] +
                   wt[1] * src->data[static_cast<std::size_t>(cr[1]) * ch + c] +
                   wt[2] * src->data[static_cast<std::size_t>(cr[2]) * ch + c] +
                   wt[3] * src->data[static_cast<std::size_t>(cr[3]) * ch + c];
        }
        break;
      }
      default:
        break;  // stays zero
    }
  }
  if (Tape* tp = tape_for({&src})) {
    out->requires_grad = true;
    out->leaf = false;
    tp->record([tp, src, out, pl = plan_ptr, ch, n] {
      const auto* go = tp->grad_read(out.get());
      if (!go || !src->requires_grad) return;
      auto& gs = tp->grad_acc(src);
      for (int64_t k = 0; k < n; ++k) {
        const double* g = go->data() + k * ch;
        switch (pl->kind[static_cast<std::size_t>(k)]) {
          case WarpPlan::kExact: {
            double* dst = gs.data() + static_cast<int64_t>(pl->exact_src[static_cast<std::size_t>(k)]) * ch;
            for (int c = 0; c < ch; ++c) dst[c] += g[c];
            break;
          }
          case WarpPlan::kBilinear: {
            const auto& cr = pl->corners[static_cast<std::size_t>(k)];
            const auto& wt = pl->weights[static_cast<std::size_t>(k)];
            for (int q = 0; q < 4; ++q) {
              double* dst = gs.data() + static_cast<int64_t>(cr[q]) * ch;
              for (int c = 0; c < ch; ++c) dst[c] += wt[q] * g[c];
            }
            break;
          }
          default:
            break;
        }
      }
    });
  }
  return out;
}

ad::MaskPtr fov_mask(const Pose2& receiver, const Pose2& sender, const BevGrid& grid, double radius) {
  auto m = ad::Mask::create({grid.h, grid.w});
  const Pose2 rel = relative_transform(receiver, sender);
  const double c = std::cos(rel.yaw), s = std::sin(rel.yaw);
  const double r2 = radius * radius;
  for (int i = 0; i < grid.h; ++i) {
    for (int j = 0; j < grid.w; ++j) {
      const Vec2 p = grid.cell_center(i, j);
      const double qx = c * p.x - s * p.y + rel.x;
      const double qy = s * p.x + c * p.y + rel.y;
      if (qx * qx + qy * qy <= r2) m->data[static_cast<std::size_t>(i) * grid.w + j] = 1;
    }
  }
  return m;
}

}  // namespace coopbev::geom
