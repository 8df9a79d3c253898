#include "coopbev/harness/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <limits>

#include "coopbev/ad/tensor.hpp"
#include "coopbev/common/rng.hpp"
#include "coopbev/detect/box.hpp"
#include "coopbev/sim/sensors.hpp"

namespace coopbev::harness {
namespace {

using ad::ConfigError;
using detect::BoxBEV;
using geom::Vec2;

constexpr double kPi = 3.141592653589793238462643383279502884;
constexpr uint64_t kOcclSalt = 0x0cc15ce2e5eedULL;

BoxBEV inflated(const BoxBEV& b, double m) { return {b.cx, b.cy, b.w + 2 * m, b.l + 2 * m, b.yaw}; }

double dist(Vec2 a, Vec2 b) { return std::hypot(a.x - b.x, a.y - b.y); }

bool overlaps_any(const std::vector<BoxBEV>& boxes, const BoxBEV& b, double gap) {
  for (const BoxBEV& o : boxes)
    if (detect::rotated_iou(inflated(o, gap), inflated(b, gap)) > 0.0) return true;
  return false;
}

// Exact min distance from a point to the box boundary/interior.
double point_box_distance(Vec2 p, const BoxBEV& b) {
  if (detect::point_in_box(b, {p.x, p.y})) return 0.0;
  auto corners = detect::box_corners(b);
  double best = std::numeric_limits<double>::infinity();
  for (int k = 0; k < 4; ++k) {
    Vec2 a = corners[k];
    Vec2 c = corners[(k + 1) % 4];
    double ex = c.x - a.x, ey = c.y - a.y;
    double len2 = ex * ex + ey * ey;
    double t = len2 > 0 ? ((p.x - a.x) * ex + (p.y - a.y) * ey) / len2 : 0.0;
    t = std::clamp(t, 0.0, 1.0);
    best = std::min(best, std::hypot(p.x - (a.x + t * ex), p.y - (a.y + t * ey)));
  }
  return best;
}

struct AngSpan {
  double lo = 0.0, hi = 0.0;  // relative to a reference direction
};

AngSpan corner_span(Vec2 origin, const BoxBEV& b, double ref_angle) {
  auto corners = detect::box_corners(b);
  AngSpan s{std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity()};
  for (const auto& c : corners) {
    double a = std::atan2(c.y - origin.y, c.x - origin.x);
    double d = std::remainder(a - ref_angle, 2 * kPi);
    s.lo = std::min(s.lo, d);
    s.hi = std::max(s.hi, d);
  }
  return s;
}

double max_corner_dist(Vec2 origin, const BoxBEV& b) {
  auto corners = detect::box_corners(b);
  double best = 0.0;
  for (const auto& c : corners) best = std::max(best, std::hypot(c.x - origin.x, c.y - origin.y));
  return best;
}

// Convexity argument: a ray from `origin` whose direction falls strictly
// inside the blocker's corner-angle span intersects the blocker at distance
// <= its farthest corner. If that stays below the hidden box's nearest
// point, no ray from origin reaches any part of the hidden box unblocked.
bool fully_blocked(Vec2 origin, const BoxBEV& blocker, const BoxBEV& hidden) {
  double ref = std::atan2(hidden.cy - origin.y, hidden.cx - origin.x);
  AngSpan occ = corner_span(origin, blocker, ref);
  AngSpan hid = corner_span(origin, hidden, ref);
  if (!(occ.lo <= hid.lo - 0.03 && occ.hi >= hid.hi + 0.03)) return false;
  return max_corner_dist(origin, blocker) + 0.4 < point_box_distance(origin, hidden);
}

bool clear_los(const std::vector<BoxBEV>& boxes, Vec2 from, Vec2 to, int target_idx) {
  double d = dist(from, to);
  double angle = std::atan2(to.y - from.y, to.x - from.x);
  return sim::ray_first_hit(boxes, from, angle, 1e9, target_idx) > d - 0.25;
}

sim::Scenario try_occlusion_scene(uint64_t seed, double extent_m, int attempt, bool& ok) {
  Rng r(hash_u64(hash_u64(seed, kOcclSalt), static_cast<uint64_t>(attempt)));
  ok = false;
  sim::Scenario s;
  s.seed = seed;
  s.extent_m = extent_m;
  double bound = extent_m / 2 - 3.0;

  Vec2 ego{-11.0 + 3.0 * r.uniform(), -2.0 + 4.0 * r.uniform()};
  double ego_yaw = -0.15 + 0.3 * r.uniform();

  std::vector<BoxBEV>& veh = s.vehicles;
  std::vector<int> hidden_idx;
  for (int k = 0; k < 2; ++k) {
    bool placed = false;
    for (int sub = 0; sub < 40 && !placed; ++sub) {
      double theta = ego_yaw + (k == 0 ? -1.0 : 1.0) * (0.3 + 0.28 * r.uniform());
      double d1 = 7.0 + 2.5 * r.uniform();
      BoxBEV occ{ego.x + d1 * std::cos(theta), ego.y + d1 * std::sin(theta), 1.9 + 0.3 * r.uniform(),
                 4.6 + 0.4 * r.uniform(), theta + kPi / 2 + 0.12 * (r.uniform() - 0.5)};
      double d2 = d1 + 4.5 + 2.0 * r.uniform();
      double theta2 = theta + 0.04 * (r.uniform() - 0.5);
      BoxBEV hid{ego.x + d2 * std::cos(theta2), ego.y + d2 * std::sin(theta2), 1.8 + 0.4 * r.uniform(),
                 4.0 + 1.0 * r.uniform(), kPi * (r.uniform() - 0.5)};
      if (std::max(std::abs(occ.cx), std::abs(occ.cy)) > bound) continue;
      if (std::max(std::abs(hid.cx), std::abs(hid.cy)) > bound) continue;
      if (overlaps_any(veh, occ, 0.3) || overlaps_any(veh, hid, 0.3)) continue;
      if (detect::rotated_iou(inflated(occ, 0.3), inflated(hid, 0.3)) > 0.0) continue;
      if (!fully_blocked(ego, occ, hid)) continue;
      veh.push_back(occ);
      veh.push_back(hid);
      hidden_idx.push_back(static_cast<int>(veh.size()) - 1);
      placed = true;
    }
    if (!placed) return s;
  }

  Vec2 helper;
  bool helper_ok = false;
  for (int sub = 0; sub < 40 && !helper_ok; ++sub) {
    double side = r.uniform() < 0.5 ? -1.0 : 1.0;
    double phi = ego_yaw + side * (1.1 + 0.5 * r.uniform());
    double dh = 9.0 + 3.5 * r.uniform();
    helper = {ego.x + dh * std::cos(phi), ego.y + dh * std::sin(phi)};
    if (std::max(std::abs(helper.x), std::abs(helper.y)) > extent_m / 2 - 1.0) continue;
    bool bad = false;
    for (const BoxBEV& b : veh)
      if (detect::point_in_box(inflated(b, 0.6), {helper.x, helper.y})) bad = true;
    for (int hi : hidden_idx) {
      Vec2 hc{veh[hi].cx, veh[hi].cy};
      if (dist(helper, hc) > 24.0 || !clear_los(veh, helper, hc, hi)) bad = true;
    }
    if (!bad) helper_ok = true;
  }
  if (!helper_ok) return s;

  int n_bg = 2 + static_cast<int>(r.next_u64() % 2);
  for (int k = 0; k < n_bg; ++k) {
    for (int sub = 0; sub < 60; ++sub) {
      double rb = 4.0 + 14.0 * r.uniform();
      double phi = 2 * kPi * r.uniform() - kPi;
      BoxBEV bg{ego.x + rb * std::cos(phi), ego.y + rb * std::sin(phi), 1.8 + 0.4 * r.uniform(),
                4.0 + 1.0 * r.uniform(), kPi * (r.uniform() - 0.5)};
      if (std::max(std::abs(bg.cx), std::abs(bg.cy)) > bound) continue;
      if (overlaps_any(veh, bg, 0.3)) continue;
      if (detect::point_in_box(inflated(bg, 0.6), {ego.x, ego.y})) continue;
      if (detect::point_in_box(inflated(bg, 0.6), {helper.x, helper.y})) continue;
      veh.push_back(bg);
      bool bad = !clear_los(veh, ego, {bg.cx, bg.cy}, static_cast<int>(veh.size()) - 1);
      for (int hi : hidden_idx)
        if (!clear_los(veh, helper, {veh[hi].cx, veh[hi].cy}, hi)) bad = true;
      if (bad) {
        veh.pop_back();
        continue;
      }
      break;
    }
  }

  for (const BoxBEV& b : veh) {
    if (detect::point_in_box(inflated(b, 0.5), {ego.x, ego.y})) return s;
    if (detect::point_in_box(inflated(b, 0.5), {helper.x, helper.y})) return s;
  }
  if (dist(ego, helper) < 2.0) return s;

  double helper_yaw = std::atan2(ego.y - helper.y, ego.x - helper.x);
  s.agents.push_back({attn::Modality::kCamera, {ego.x, ego.y, ego_yaw}});
  s.agents.push_back({attn::Modality::kLidar, {helper.x, helper.y, helper_yaw}});

  for (BoxBEV& b : s.vehicles) {
    b.cx = sim::quantize6(b.cx);
    b.cy = sim::quantize6(b.cy);
    b.w = sim::quantize6(b.w);
    b.l = sim::quantize6(b.l);
    b.yaw = sim::quantize6(b.yaw);
  }
  for (sim::AgentSpec& a : s.agents) {
    a.pose.x = sim::quantize6(a.pose.x);
    a.pose.y = sim::quantize6(a.pose.y);
    a.pose.yaw = sim::quantize6(a.pose.yaw);
  }
  s.extent_m = sim::quantize6(s.extent_m);
  ok = true;
  return s;
}

}  // namespace

const char* split_name(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kVal: return "val";
    default: return "test";
  }
}

uint64_t split_seed(uint64_t base, Split split, int index) {
  uint64_t offset = split == Split::kTrain ? 0 : split == Split::kVal ? 10000 : 20000;
  return base + offset + static_cast<uint64_t>(index);
}

sim::Scenario make_occlusion_scene(uint64_t seed, double extent_m) {
  for (int attempt = 0; attempt < 120; ++attempt) {
    bool ok = false;
    sim::Scenario s = try_occlusion_scene(seed, extent_m, attempt, ok);
    if (ok) return s;
  }
  throw ConfigError("occlusion scene construction failed for seed " + std::to_string(seed));
}

sim::Scenario make_split_scene(const Config& cfg, Split split, int index) {
  uint64_t seed = split_seed(cfg.training.seed, split, index);
  bool occlusion = split == Split::kTest || index % 2 == 1;
  if (occlusion) return make_occlusion_scene(seed, cfg.extent_m());
  Rng r(hash_u64(seed, 0xa9e27c047ULL));
  int span = cfg.dataset.agents_max - cfg.dataset.agents_min + 1;
  int n_agents = cfg.dataset.agents_min + static_cast<int>(r.next_u64() % span);
  return sim::generate_scenario(seed, cfg.dataset.vehicles, n_agents, cfg.dataset.lidar_ratio,
                                cfg.extent_m());
}

std::vector<sim::Scenario> make_split(const Config& cfg, Split split, int count) {
  std::vector<sim::Scenario> out;
  out.reserve(count);
  for (int i = 0; i < count; ++i) out.push_back(make_split_scene(cfg, split, i));
  return out;
}

GenerateReport cmd_generate(const Config& cfg, const std::string& out_dir) {
  namespace fs = std::filesystem;
  GenerateReport rep;
  const std::pair<Split, int> jobs[] = {{Split::kTrain, cfg.dataset.train},
                                        {Split::kVal, cfg.dataset.val},
                                        {Split::kTest, cfg.dataset.test}};
  for (auto [split, count] : jobs) {
    fs::path dir = fs::path(out_dir) / split_name(split);
    fs::create_directories(dir);
    for (int i = 0; i < count; ++i) {
      sim::Scenario s = make_split_scene(cfg, split, i);
      char name[32];
      std::snprintf(name, sizeof(name), "scene_%04d.json", i);
      sim::save_scenario((dir / name).string(), s);
    }
    (split == Split::kTrain ? rep.train : split == Split::kVal ? rep.val : rep.test) = count;
  }
  return rep;
}

std::vector<sim::Scenario> load_split_dir(const std::string& dir) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw ConfigError("scene directory not found: " + dir);
  std::vector<std::string> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    std::string name = e.path().filename().string();
    if (name.rfind("scene_", 0) == 0 && e.path().extension() == ".json")
      files.push_back(e.path().string());
  }
  std::sort(files.begin(), files.end());
  std::vector<sim::Scenario> out;
  out.reserve(files.size());
  for (const std::string& f : files) out.push_back(sim::load_scenario(f));
  return out;
}

}  // namespace coopbev::harness
