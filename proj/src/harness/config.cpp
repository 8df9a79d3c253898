#include "coopbev/harness/config.hpp"

#include <cmath>
#include <fstream>
#include <initializer_list>
#include <sstream>

#include "coopbev/ad/tensor.hpp"
#include "json.hpp"

namespace coopbev::harness {
namespace {

using ad::ConfigError;
using nlohmann::json;

[[noreturn]] void fail(const std::string& msg) { throw ConfigError("config: " + msg); }

void check_keys(const json& j, const std::string& where, std::initializer_list<const char*> allowed) {
  if (!j.is_object()) fail("'" + where + "' must be an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool known = false;
    for (const char* k : allowed)
      if (it.key() == k) known = true;
    if (!known) fail("unknown key '" + it.key() + "' in " + where);
  }
}

void get_num(const json& j, const std::string& where, const char* key, double& out) {
  if (!j.contains(key)) return;
  const json& v = j.at(key);
  if (!v.is_number()) fail("'" + where + "." + key + "' must be a number");
  out = v.get<double>();
}

void get_int(const json& j, const std::string& where, const char* key, int& out) {
  if (!j.contains(key)) return;
  const json& v = j.at(key);
  if (!v.is_number_integer()) fail("'" + where + "." + key + "' must be an integer");
  out = static_cast<int>(v.get<int64_t>());
}

void get_seed(const json& j, const std::string& where, const char* key, uint64_t& out) {
  if (!j.contains(key)) return;
  const json& v = j.at(key);
  if (!v.is_number_integer() || v.get<int64_t>() < 0)
    fail("'" + where + "." + key + "' must be a non-negative integer");
  out = v.get<uint64_t>();
}

void require_pos(double v, const char* what) {
  if (!(v > 0.0)) fail(std::string(what) + " must be positive");
}

void require_pos(int v, const char* what) {
  if (v <= 0) fail(std::string(what) + " must be positive");
}

}  // namespace

Config default_config(const std::string& profile) {
  Config c;
  c.profile = profile;
  if (profile == "desk") return c;
  if (profile == "paper") {
    c.grid = {128, 128, 0.4};
    c.model.channels = 256;
    c.model.window = 8;
    c.model.iterations = 2;
    c.training.weight_decay = 1e-2;
    c.training.epochs_stage1 = 40;
    c.training.epochs_stage2 = 10;
    return c;
  }
  fail("unknown profile '" + profile + "' (expected 'desk' or 'paper')");
}

void validate_config(const Config& c) {
  if (c.profile != "desk" && c.profile != "paper")
    fail("unknown profile '" + c.profile + "' (expected 'desk' or 'paper')");
  require_pos(c.grid.h, "grid.h");
  require_pos(c.grid.w, "grid.w");
  require_pos(c.grid.resolution, "grid.resolution");
  require_pos(c.model.channels, "model.channels");
  require_pos(c.model.heads, "model.heads");
  require_pos(c.model.window, "model.window");
  require_pos(c.model.iterations, "model.iterations");
  require_pos(c.model.rate, "model.rate");
  require_pos(c.model.mlp_ratio, "model.mlp_ratio");
  if (c.model.channels % c.model.heads != 0) fail("model.channels must be divisible by model.heads");
  if (c.model.channels % c.model.rate != 0) fail("model.channels must be divisible by model.rate");
  if (c.grid.h % c.model.window != 0 || c.grid.w % c.model.window != 0)
    fail("grid sides must be divisible by model.window");
  require_pos(c.ranges.lidar, "ranges.lidar");
  require_pos(c.ranges.camera, "ranges.camera");
  require_pos(c.training.lr, "training.lr");
  if (c.training.weight_decay < 0.0) fail("training.weight_decay must be non-negative");
  require_pos(c.training.epochs_stage1, "training.epochs_stage1");
  require_pos(c.training.epochs_stage2, "training.epochs_stage2");
  require_pos(c.training.batch, "training.batch");
  if (c.training.patience < 0) fail("training.patience must be non-negative");
  require_pos(c.dataset.train, "dataset.train");
  if (c.dataset.val < 0 || c.dataset.test < 0) fail("dataset split counts must be non-negative");
  require_pos(c.dataset.agents_min, "dataset.agents_min");
  if (c.dataset.agents_max < c.dataset.agents_min) fail("dataset.agents_max must be >= dataset.agents_min");
  if (c.dataset.vehicles < 0) fail("dataset.vehicles must be non-negative");
  if (c.dataset.lidar_ratio < 0.0 || c.dataset.lidar_ratio > 1.0)
    fail("dataset.lidar_ratio must lie in [0,1]");
  if (c.profile == "paper") {
    bool pinned = c.model.window == 8 && c.model.iterations == 2 && c.model.channels == 256 &&
                  c.training.weight_decay == 1e-2 && c.grid.resolution == 0.4;
    if (!pinned)
      fail("profile 'paper' pins window=8, iterations=2, channels=256, weight_decay=0.01, resolution=0.4");
  }
}

Config parse_config(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    fail(std::string("not valid JSON: ") + e.what());
  }
  check_keys(j, "config", {"profile", "grid", "model", "ranges", "training", "dataset"});
  std::string profile = "desk";
  if (j.contains("profile")) {
    if (!j.at("profile").is_string()) fail("'profile' must be a string");
    profile = j.at("profile").get<std::string>();
  }
  Config c = default_config(profile);
  if (j.contains("grid")) {
    const json& g = j.at("grid");
    check_keys(g, "grid", {"h", "w", "resolution"});
    get_int(g, "grid", "h", c.grid.h);
    get_int(g, "grid", "w", c.grid.w);
    get_num(g, "grid", "resolution", c.grid.resolution);
  }
  if (j.contains("model")) {
    const json& m = j.at("model");
    check_keys(m, "model", {"channels", "heads", "window", "iterations", "rate", "mlp_ratio"});
    get_int(m, "model", "channels", c.model.channels);
    get_int(m, "model", "heads", c.model.heads);
    get_int(m, "model", "window", c.model.window);
    get_int(m, "model", "iterations", c.model.iterations);
    get_int(m, "model", "rate", c.model.rate);
    get_int(m, "model", "mlp_ratio", c.model.mlp_ratio);
  }
  if (j.contains("ranges")) {
    const json& r = j.at("ranges");
    check_keys(r, "ranges", {"lidar", "camera"});
    get_num(r, "ranges", "lidar", c.ranges.lidar);
    get_num(r, "ranges", "camera", c.ranges.camera);
  }
  if (j.contains("training")) {
    const json& t = j.at("training");
    check_keys(t, "training",
               {"lr", "weight_decay", "epochs_stage1", "epochs_stage2", "batch", "seed", "patience"});
    get_num(t, "training", "lr", c.training.lr);
    get_num(t, "training", "weight_decay", c.training.weight_decay);
    get_int(t, "training", "epochs_stage1", c.training.epochs_stage1);
    get_int(t, "training", "epochs_stage2", c.training.epochs_stage2);
    get_int(t, "training", "batch", c.training.batch);
    get_seed(t, "training", "seed", c.training.seed);
    get_int(t, "training", "patience", c.training.patience);
  }
  if (j.contains("dataset")) {
    const json& d = j.at("dataset");
    check_keys(d, "dataset",
               {"train", "val", "test", "agents_min", "agents_max", "vehicles", "lidar_ratio"});
    get_int(d, "dataset", "train", c.dataset.train);
    get_int(d, "dataset", "val", c.dataset.val);
    get_int(d, "dataset", "test", c.dataset.test);
    get_int(d, "dataset", "agents_min", c.dataset.agents_min);
    get_int(d, "dataset", "agents_max", c.dataset.agents_max);
    get_int(d, "dataset", "vehicles", c.dataset.vehicles);
    get_num(d, "dataset", "lidar_ratio", c.dataset.lidar_ratio);
  }
  validate_config(c);
  return c;
}

Config load_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail("cannot read '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string format_config(const Config& c) {
  json j;
  j["profile"] = c.profile;
  j["grid"] = {{"h", c.grid.h}, {"w", c.grid.w}, {"resolution", c.grid.resolution}};
  j["model"] = {{"channels", c.model.channels}, {"heads", c.model.heads},
                {"window", c.model.window},     {"iterations", c.model.iterations},
                {"rate", c.model.rate},         {"mlp_ratio", c.model.mlp_ratio}};
  j["ranges"] = {{"lidar", c.ranges.lidar}, {"camera", c.ranges.camera}};
  j["training"] = {{"lr", c.training.lr},
                   {"weight_decay", c.training.weight_decay},
                   {"epochs_stage1", c.training.epochs_stage1},
                   {"epochs_stage2", c.training.epochs_stage2},
                   {"batch", c.training.batch},
                   {"seed", c.training.seed},
                   {"patience", c.training.patience}};
  j["dataset"] = {{"train", c.dataset.train},
                  {"val", c.dataset.val},
                  {"test", c.dataset.test},
                  {"agents_min", c.dataset.agents_min},
                  {"agents_max", c.dataset.agents_max},
                  {"vehicles", c.dataset.vehicles},
                  {"lidar_ratio", c.dataset.lidar_ratio}};
  return j.dump(2) + "\n";
}

void save_config(const Config& c, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail("cannot write '" + path + "'");
  out << format_config(c);
}

}  // namespace coopbev::harness
