#pragma once

#include <cstdint>
#include <string>

#include "coopbev/geom/pose.hpp"

namespace coopbev::harness {

struct GridConfig {
  int h = 32;
  int w = 32;
  double resolution = 1.5625;  // 50 m extent on the desk profile
};

struct ModelConfig {
  int channels = 32;
  int heads = 4;
  int window = 4;
  int iterations = 2;
  int rate = 1;
  int mlp_ratio = 4;
};

struct RangeConfig {
  double lidar = 50.0;
  double camera = 30.0;
};

struct TrainingConfig {
  double lr = 2e-3;
  double weight_decay = 1e-2;
  int epochs_stage1 = 30;
  int epochs_stage2 = 10;
  int batch = 4;
  uint64_t seed = 1;
  int patience = 0;  // 0 keeps fixed epochs; >0 stops on val-loss plateau
};

struct DatasetConfig {
  int train = 200;
  int val = 40;
  int test = 60;
  int agents_min = 2;
  int agents_max = 4;
  int vehicles = 6;
  double lidar_ratio = 0.5;
};

// The "paper" profile pins window=8, iterations=2, weight_decay=1e-2,
// channels=256, resolution=0.4 (grid 128x128, 40+10 epochs); it parses and
// validates but is far too slow for a desk run. Everything else defaults to
// the desk scale above.
struct Config {
  std::string profile = "desk";
  GridConfig grid;
  ModelConfig model;
  RangeConfig ranges;
  TrainingConfig training;
  DatasetConfig dataset;

  double extent_m() const { return grid.h * grid.resolution; }
  geom::BevGrid bev() const { return {grid.h, grid.w, grid.resolution}; }
};

Config default_config(const std::string& profile = "desk");

// Strict JSON: unknown keys at any level are rejected, values range-checked,
// missing keys fall back to the profile defaults.
Config parse_config(const std::string& text);
Config load_config(const std::string& path);
std::string format_config(const Config& c);
void save_config(const Config& c, const std::string& path);
void validate_config(const Config& c);

}  // namespace coopbev::harness
