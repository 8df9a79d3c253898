#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "coopbev/ad/checkpoint.hpp"
#include "coopbev/ad/param_store.hpp"
#include "coopbev/detect/box.hpp"
#include "coopbev/harness/config.hpp"
#include "coopbev/harness/dataset.hpp"
#include "coopbev/harness/eval.hpp"
#include "coopbev/harness/gradsuite.hpp"
#include "coopbev/harness/model.hpp"
#include "coopbev/harness/render.hpp"
#include "coopbev/harness/train.hpp"
#include "coopbev/sim/scenario.hpp"
#include "coopbev/sim/sensors.hpp"
#include "json.hpp"

using namespace coopbev;
using namespace coopbev::harness;
namespace fs = std::filesystem;

namespace {

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path fresh_dir(const std::string& tag) {
  fs::path p = fs::temp_directory_path() / ("coopbev_test_" + tag);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

Config tiny_config(int train, int val, int test) {
  Config c = default_config();
  c.dataset.train = train;
  c.dataset.val = val;
  c.dataset.test = test;
  c.dataset.vehicles = 5;
  c.training.seed = 11;
  c.training.batch = 2;
  c.training.epochs_stage1 = 2;
  c.training.epochs_stage2 = 1;
  return c;
}

}  // namespace

TEST_CASE("config profiles carry their pinned defaults") {
  Config d = default_config();
  CHECK(d.profile == "desk");
  CHECK(d.grid.h == 32);
  CHECK(d.grid.w == 32);
  CHECK(d.grid.resolution == doctest::Approx(1.5625));
  CHECK(d.extent_m() == doctest::Approx(50.0));
  CHECK(d.model.channels == 32);
  CHECK(d.model.channels % d.model.heads == 0);
  validate_config(d);

  Config p = default_config("paper");
  CHECK(p.grid.h == 128);
  CHECK(p.grid.resolution == doctest::Approx(0.4));
  CHECK(p.model.channels == 256);
  CHECK(p.model.window == 8);
  CHECK(p.model.iterations == 2);
  CHECK(p.training.weight_decay == doctest::Approx(1e-2));
  validate_config(p);

  CHECK_THROWS_AS(default_config("galaxy"), ad::ConfigError);
}

TEST_CASE("config parser rejects unknown keys by name") {
  auto expect_mentions = [](const std::string& text, const std::string& key) {
    bool threw = false;
    try {
      parse_config(text);
    } catch (const ad::ConfigError& e) {
      threw = true;
      CHECK(std::string(e.what()).find(key) != std::string::npos);
    }
    CHECK(threw);
  };
  expect_mentions(R"({"gird": {}})", "gird");
  expect_mentions(R"({"grid": {"hh": 3}})", "hh");
  expect_mentions(R"({"training": {"learning_rate": 0.1}})", "learning_rate");
  expect_mentions(R"({"dataset": {"n_train": 5}})", "n_train");
  expect_mentions(R"({"model": {"depth": 2}})", "depth");
}

TEST_CASE("config parser rejects malformed input and bad values") {
  CHECK_THROWS_AS(parse_config("not json at all"), ad::ConfigError);
  CHECK_THROWS_AS(parse_config(R"({"model": {"channels": 33}})"), ad::ConfigError);
  CHECK_THROWS_AS(parse_config(R"({"model": {"channels": -8}})"), ad::ConfigError);
  CHECK_THROWS_AS(parse_config(R"({"dataset": {"lidar_ratio": 1.5}})"), ad::ConfigError);
  CHECK_THROWS_AS(parse_config(R"({"grid": {"h": 30}})"), ad::ConfigError);  // window misfit
  CHECK_THROWS_AS(parse_config(R"({"dataset": {"agents_min": 3, "agents_max": 2}})"),
                  ad::ConfigError);
  // the paper profile pins its published hyperparameters
  CHECK_THROWS_AS(parse_config(R"({"profile": "paper", "model": {"window": 4}})"),
                  ad::ConfigError);
  CHECK_THROWS_AS(parse_config(R"({"profile": "paper", "model": {"channels": 64}})"),
                  ad::ConfigError);
}

TEST_CASE("config survives a format/parse roundtrip") {
  Config c = default_config();
  c.training.seed = 424242;
  c.training.lr = 3.5e-3;
  c.dataset.train = 17;
  c.model.rate = 4;
  c.grid.resolution = 1.25;
  std::string text = format_config(c);
  Config back = parse_config(text);
  CHECK(format_config(back) == text);
  CHECK(back.training.seed == 424242);
  CHECK(back.model.rate == 4);
  CHECK(back.grid.resolution == doctest::Approx(1.25));
}

TEST_CASE("split seed streams never collide") {
  std::set<uint64_t> seen;
  const uint64_t base = 77;
  for (int i = 0; i < 2000; ++i) {
    seen.insert(split_seed(base, Split::kTrain, i));
    seen.insert(split_seed(base, Split::kVal, i));
    seen.insert(split_seed(base, Split::kTest, i));
  }
  CHECK(seen.size() == 6000);
}

TEST_CASE("occlusion scenes blind the ego and spare the helper") {
  for (uint64_t seed : {101ull, 2025ull, 31337ull}) {
    sim::Scenario s = make_occlusion_scene(seed, 50.0);
    REQUIRE(s.agents.size() == 2);
    CHECK(s.agents[0].modality == attn::Modality::kCamera);
    CHECK(s.agents[1].modality == attn::Modality::kLidar);
    REQUIRE(s.vehicles.size() >= 4);
    const geom::Pose2 ego = s.agents[0].pose;
    const geom::Pose2 helper = s.agents[1].pose;

    // vehicles [0..3] are two occluder/hidden pairs: 0 hides 1, 2 hides 3
    for (int hid : {1, 3}) {
      const detect::BoxBEV& h = s.vehicles[hid];
      auto corners = detect::box_corners(h);
      // sample the hidden box densely: corners, edge interpolations, center
      std::vector<geom::Vec2> samples;
      for (int e = 0; e < 4; ++e) {
        geom::Vec2 a = corners[e], b = corners[(e + 1) % 4];
        for (int t = 0; t <= 6; ++t) {
          double u = t / 6.0;
          samples.push_back({a.x + u * (b.x - a.x), a.y + u * (b.y - a.y)});
        }
      }
      samples.push_back({h.cx, h.cy});
      for (const geom::Vec2& p : samples) {
        double dx = p.x - ego.x, dy = p.y - ego.y;
        double dist = std::hypot(dx, dy);
        double ang = std::atan2(dy, dx);
        // something else intercepts the ray strictly before it can touch
        // the hidden box's first crossing
        double without_h = sim::ray_first_hit(s.vehicles, {ego.x, ego.y}, ang, 100.0, hid);
        std::vector<detect::BoxBEV> only_h{h};
        double h_alone = sim::ray_first_hit(only_h, {ego.x, ego.y}, ang, 100.0);
        REQUIRE(h_alone <= dist + 1e-6);
        CHECK(without_h < h_alone);
      }
      // the helper has a clear line of sight to the hidden center
      double hx = h.cx - helper.x, hy = h.cy - helper.y;
      double hd = std::hypot(hx, hy);
      double first = sim::ray_first_hit(s.vehicles, {helper.x, helper.y}, std::atan2(hy, hx),
                                        100.0, hid);
      CHECK(first >= hd - 0.25);
    }

    // everything stays on the raster with margin
    for (const detect::BoxBEV& v : s.vehicles) {
      CHECK(std::abs(v.cx) <= 22.0 + 1e-9);
      CHECK(std::abs(v.cy) <= 22.0 + 1e-9);
    }
    // deterministic per seed
    sim::Scenario again = make_occlusion_scene(seed, 50.0);
    CHECK(sim::format_scenario(again) == sim::format_scenario(s));
  }
}

TEST_CASE("dataset generation is reproducible byte for byte") {
  Config c = tiny_config(4, 2, 2);
  fs::path a = fresh_dir("gen_a");
  fs::path b = fresh_dir("gen_b");
  GenerateReport ra = cmd_generate(c, a.string());
  GenerateReport rb = cmd_generate(c, b.string());
  CHECK(ra.train == 4);
  CHECK(ra.val == 2);
  CHECK(ra.test == 2);
  for (const char* split : {"train", "val", "test"}) {
    fs::path da = a / split, db = b / split;
    std::vector<fs::path> fa;
    for (const auto& e : fs::directory_iterator(da)) fa.push_back(e.path());
    std::sort(fa.begin(), fa.end());
    REQUIRE(!fa.empty());
    for (const fs::path& f : fa) {
      fs::path g = db / f.filename();
      REQUIRE(fs::exists(g));
      CHECK(read_file(f.string()) == read_file(g.string()));
    }
  }
  // loading round-trips exactly through the text format
  std::vector<sim::Scenario> train = load_split_dir((a / "train").string());
  REQUIRE(train.size() == 4);
  CHECK(sim::format_scenario(train[0]) ==
        read_file((a / "train" / "scene_0000.json").string()));
  CHECK_THROWS_AS(load_split_dir((a / "missing").string()), ad::ConfigError);
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST_CASE("train and val splits mix layouts; test split stresses occlusion") {
  Config c = tiny_config(6, 2, 2);
  // odd train indices and every test scene carry the two-agent blocked-view
  // layout: camera ego first, lidar helper second
  for (int i : {1, 3, 5}) {
    sim::Scenario s = make_split_scene(c, Split::kTrain, i);
    CHECK(s.agents.size() == 2);
    CHECK(s.agents[0].modality == attn::Modality::kCamera);
    CHECK(s.agents[1].modality == attn::Modality::kLidar);
  }
  for (int i : {0, 1}) {
    sim::Scenario s = make_split_scene(c, Split::kTest, i);
    CHECK(s.agents.size() == 2);
    CHECK(s.agents[0].modality == attn::Modality::kCamera);
  }
  // even train indices come from the generic generator with 2..4 agents
  for (int i : {0, 2, 4}) {
    sim::Scenario s = make_split_scene(c, Split::kTrain, i);
    CHECK(s.agents.size() >= 2);
    CHECK(s.agents.size() <= 4);
    CHECK(s.vehicles.size() == 5);
  }
}

TEST_CASE("toy training drives the loss down") {
  Config c = tiny_config(4, 2, 2);
  c.training.epochs_stage1 = 6;
  c.training.lr = 4e-3;
  std::vector<sim::Scenario> train = make_split(c, Split::kTrain, 4);
  std::vector<sim::Scenario> val;
  fs::path out = fresh_dir("loss_down");
  TrainOptions opt;
  opt.stage = 1;
  opt.stage1_modality = attn::Modality::kLidar;
  opt.out_dir = out.string();
  TrainResult r = train_stage(c, train, val, opt);
  CHECK(r.steps == 12);  // ceil(4/2) steps per epoch * 6 epochs
  CHECK(r.epochs_run == 6);

  // first vs last logged step
  std::ifstream log((out / "train_stage1_lidar.log").string());
  REQUIRE(log.good());
  std::string first_line, line, last_line;
  std::getline(log, first_line);
  last_line = first_line;
  while (std::getline(log, line))
    if (!line.empty()) last_line = line;
  auto total_of = [](const std::string& l) {
    auto j = nlohmann::json::parse(l);
    return j["loss_cls"].get<double>() + j["loss_reg"].get<double>();
  };
  CHECK(total_of(last_line) < 0.6 * total_of(first_line));
  CHECK(fs::exists(out / "stage1_lidar.ckpt"));
  fs::remove_all(out);
}

TEST_CASE("stage 2 transplants and freezes the encoders bitwise") {
  Config c = tiny_config(4, 0, 0);
  c.training.epochs_stage1 = 2;
  c.training.epochs_stage2 = 2;
  std::vector<sim::Scenario> train = make_split(c, Split::kTrain, 4);
  std::vector<sim::Scenario> val;
  fs::path out = fresh_dir("freeze");

  TrainOptions o1;
  o1.stage = 1;
  o1.out_dir = out.string();
  o1.stage1_modality = attn::Modality::kLidar;
  train_stage(c, train, val, o1);
  o1.stage1_modality = attn::Modality::kCamera;
  train_stage(c, train, val, o1);

  TrainOptions o2;
  o2.stage = 2;
  o2.out_dir = out.string();
  o2.lidar_ckpt = (out / "stage1_lidar.ckpt").string();
  o2.cam_ckpt = (out / "stage1_cam.ckpt").string();
  TrainResult r2 = train_stage(c, train, val, o2);
  CHECK(fs::exists(r2.final_checkpoint));

  auto load_into = [&](const std::string& path) {
    auto ps = std::make_unique<ad::ParamStore>();
    register_bundle(*ps, c, bundle_seed(c));
    ad::load_checkpoint(path, *ps);
    return ps;
  };
  auto ps2 = load_into(r2.final_checkpoint);
  auto psl = load_into(o2.lidar_ckpt);
  auto psc = load_into(o2.cam_ckpt);

  int enc_params = 0;
  for (const auto& [name, e] : ps2->entries()) {
    if (name.rfind("enc.", 0) != 0) continue;
    const ad::ParamStore& src = e.owner == "cam" ? *psc : *psl;
    const auto& s = src.entry(name);
    REQUIRE(s.tensor->data.size() == e.tensor->data.size());
    bool same = true;
    for (std::size_t i = 0; i < e.tensor->data.size(); ++i)
      if (s.tensor->data[i] != e.tensor->data[i]) same = false;
    CHECK(same);
    ++enc_params;
  }
  CHECK(enc_params > 0);

  // fusion cross-type edges must differ from both parents (they trained)
  bool fuse_moved = false;
  for (const auto& [name, e] : ps2->entries()) {
    if (name.rfind("fuse.", 0) != 0) continue;
    const auto& s = psl->entry(name);
    for (std::size_t i = 0; i < e.tensor->data.size(); ++i)
      if (s.tensor->data[i] != e.tensor->data[i]) fuse_moved = true;
  }
  CHECK(fuse_moved);
  fs::remove_all(out);
}

TEST_CASE("resumed training reproduces the uninterrupted run bitwise") {
  Config c = tiny_config(4, 0, 0);
  c.training.epochs_stage1 = 4;
  std::vector<sim::Scenario> train = make_split(c, Split::kTrain, 4);
  std::vector<sim::Scenario> val;

  fs::path full_dir = fresh_dir("resume_full");
  TrainOptions full;
  full.stage = 1;
  full.out_dir = full_dir.string();
  TrainResult rf = train_stage(c, train, val, full);

  fs::path part_dir = fresh_dir("resume_part");
  TrainOptions part;
  part.stage = 1;
  part.out_dir = part_dir.string();
  part.halt_after = 2;  // pause mid-schedule, as an interrupted run would
  TrainResult rp = train_stage(c, train, val, part);
  CHECK(rp.epochs_run == 2);
  CHECK(rp.final_checkpoint == (part_dir / "stage1_lidar_last.ckpt").string());
  TrainOptions cont;
  cont.stage = 1;
  cont.out_dir = part_dir.string();
  cont.resume = rp.final_checkpoint;
  TrainResult rc = train_stage(c, train, val, cont);

  CHECK(rc.epochs_run == 4);  // two fresh epochs on top of the two resumed
  const bool ckpt_bytes_match = read_file(rf.final_checkpoint) == read_file(rc.final_checkpoint);
  CHECK(ckpt_bytes_match);
  fs::remove_all(full_dir);
  fs::remove_all(part_dir);
}

TEST_CASE("svg renderer maps world points as documented") {
  geom::Vec2 o = svg_point(50.0, {0.0, 0.0});
  CHECK(o.x == doctest::Approx(300.0));
  CHECK(o.y == doctest::Approx(300.0));
  geom::Vec2 p = svg_point(50.0, {10.0, -5.0});
  CHECK(p.x == doctest::Approx(420.0));
  CHECK(p.y == doctest::Approx(360.0));

  sim::Scenario s;
  s.extent_m = 50.0;
  s.agents.push_back({attn::Modality::kLidar, {0.0, 0.0, 0.0}});
  detect::BoxBEV gt{4.0, -3.0, 2.0, 4.0, 0.0};
  std::string empty_dets = render_svg(s, {}, {gt}, RangeConfig{});
  CHECK(empty_dets.find("#1a9c4b") != std::string::npos);   // green gt stroke
  CHECK(empty_dets.find("#d03a3a") == std::string::npos);   // no red without dets

  // expected polygon corners through box_corners -> svg_point
  auto corners = detect::box_corners(gt);
  char want[64];
  std::snprintf(want, sizeof(want), "%.2f,%.2f", (corners[0].x + 25.0) * kPxPerMeter,
                (25.0 - corners[0].y) * kPxPerMeter);
  CHECK(empty_dets.find(want) != std::string::npos);

  std::string with_det = render_svg(s, {{gt, 0.9}}, {gt}, RangeConfig{});
  CHECK(with_det.find("#d03a3a") != std::string::npos);
  CHECK(render_svg(s, {{gt, 0.9}}, {gt}, RangeConfig{}) == with_det);  // pure function
}

TEST_CASE("gradient suite passes clean and catches an injected fault") {
  std::ostringstream sink;
  SuiteResult ok = run_gradcheck_suite(sink, false);
  CHECK(ok.failures == 0);
  CHECK(ok.checks >= 25);
  CHECK(ok.max_rel_err < 1e-4);

  std::ostringstream sink2;
  SuiteResult bad = run_gradcheck_suite(sink2, true);
  CHECK(bad.failures >= 1);
  CHECK(bad.max_rel_err > 1e-4);
}

TEST_CASE("ap recomputed from exported files matches the in-memory value") {
  using detect::BoxBEV;
  using detect::Detection;
  std::vector<std::vector<Detection>> dets(3);
  std::vector<std::vector<BoxBEV>> gts(3);
  gts[0] = {{0.0, 0.0, 2.0, 4.0, 0.0}, {10.0, 0.0, 2.0, 4.0, 0.5}};
  gts[1] = {{-5.0, 3.0, 2.2, 4.5, 1.0}};
  gts[2] = {};
  dets[0] = {{{0.1, 0.05, 2.0, 4.0, 0.0}, 0.95},      // solid hit
             {{20.0, 20.0, 2.0, 4.0, 0.0}, 0.60}};    // far false positive
  dets[1] = {{{-5.1, 3.05, 2.2, 4.5, 1.0}, 0.80},
             {{-5.0, -9.0, 2.0, 4.0, 0.0}, 0.30}};
  dets[2] = {{{1.0, 1.0, 2.0, 4.0, 0.0}, 0.20}};

  double mem50 = detect::average_precision(dets, gts, 0.5);
  double mem70 = detect::average_precision(dets, gts, 0.7);
  fs::path dir = fresh_dir("apfiles");
  std::string dp = (dir / "dets.txt").string();
  std::string gp = (dir / "gts.txt").string();
  export_detections(dp, dets);
  export_gts(gp, gts);
  CHECK(ap_from_files(dp, gp, 0.5) == doctest::Approx(mem50).epsilon(1e-9));
  CHECK(ap_from_files(dp, gp, 0.7) == doctest::Approx(mem70).epsilon(1e-9));
  fs::remove_all(dir);
}

TEST_CASE("message payload shrinks exactly with the compression rate") {
  Config c1 = tiny_config(0, 0, 2);
  Config c4 = c1;
  c4.model.rate = 4;
  std::vector<sim::Scenario> scenes = make_split(c1, Split::kTest, 2);

  ad::ParamStore ps1, ps4;
  ModelBundle b1 = register_bundle(ps1, c1, bundle_seed(c1));
  ModelBundle b4 = register_bundle(ps4, c4, bundle_seed(c4));
  ObsCache cache;
  EvalResult r1 = evaluate_scenes(b1, c1, scenes, assign_stored(), EvalMode::kHmvit, 0, &cache);
  EvalResult r4 = evaluate_scenes(b4, c4, scenes, assign_stored(), EvalMode::kHmvit, 0, &cache);
  CHECK(r1.bytes_per_agent > 0.0);
  CHECK(r4.bytes_per_agent == doctest::Approx(r1.bytes_per_agent / 4.0).epsilon(1e-12));
  CHECK(r1.scenes == 2);
  REQUIRE(r1.dets.size() == 2);
  REQUIRE(r1.gts.size() == 2);
}

TEST_CASE("eval results are independent of worker count") {
  Config c = tiny_config(4, 0, 0);
  std::vector<sim::Scenario> scenes = make_split(c, Split::kTrain, 4);
  ad::ParamStore ps;
  ModelBundle b = register_bundle(ps, c, bundle_seed(c));
  ObsCache cache;
  EvalResult serial = evaluate_scenes(b, c, scenes, assign_stored(), EvalMode::kHmvit, 0, &cache, 1);
  EvalResult pooled = evaluate_scenes(b, c, scenes, assign_stored(), EvalMode::kHmvit, 0, &cache, 4);
  CHECK(serial.ap50 == pooled.ap50);
  REQUIRE(serial.dets.size() == pooled.dets.size());
  for (std::size_t i = 0; i < serial.dets.size(); ++i) {
    REQUIRE(serial.dets[i].size() == pooled.dets[i].size());
    for (std::size_t k = 0; k < serial.dets[i].size(); ++k) {
      CHECK(serial.dets[i][k].score == pooled.dets[i][k].score);
      CHECK(serial.dets[i][k].box.cx == pooled.dets[i][k].box.cx);
      CHECK(serial.dets[i][k].box.yaw == pooled.dets[i][k].box.yaw);
    }
  }
}

TEST_CASE("single-agent scenes make late fusion equal solo detection") {
  Config c = tiny_config(0, 0, 0);
  sim::Scenario solo = sim::generate_scenario(909, 5, 1, 1.0, c.extent_m());
  REQUIRE(solo.agents.size() == 1);
  std::vector<sim::Scenario> scenes{solo};
  ad::ParamStore ps;
  ModelBundle b = register_bundle(ps, c, bundle_seed(c));
  ObsCache cache;
  EvalResult none = evaluate_scenes(b, c, scenes, assign_stored(), EvalMode::kNone, 0, &cache);
  EvalResult late = evaluate_scenes(b, c, scenes, assign_stored(), EvalMode::kLate, 0, &cache);
  CHECK(late.bytes_per_agent == 0.0);
  REQUIRE(none.dets[0].size() == late.dets[0].size());
  for (std::size_t k = 0; k < none.dets[0].size(); ++k) {
    CHECK(late.dets[0][k].score == none.dets[0][k].score);
    CHECK(late.dets[0][k].box.cx == doctest::Approx(none.dets[0][k].box.cx).epsilon(1e-9));
    CHECK(late.dets[0][k].box.cy == doctest::Approx(none.dets[0][k].box.cy).epsilon(1e-9));
  }
}

TEST_CASE("agent truncation keeps the ego and drops the tail") {
  sim::Scenario s = sim::generate_scenario(55, 4, 3, 0.5, 50.0);
  REQUIRE(s.agents.size() == 3);
  sim::Scenario t2 = truncate_agents(s, 2);
  CHECK(t2.agents.size() == 2);
  CHECK(t2.agents[0].pose.x == s.agents[0].pose.x);
  CHECK(t2.vehicles.size() == s.vehicles.size());
  sim::Scenario t9 = truncate_agents(s, 9);
  CHECK(t9.agents.size() == 3);
  sim::Scenario t1 = truncate_agents(s, 1);
  CHECK(t1.agents.size() == 1);
}
