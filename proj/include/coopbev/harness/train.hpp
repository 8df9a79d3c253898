#pragma once

#include <ostream>
#include <string>
#include <vector>

#include "coopbev/harness/model.hpp"

namespace coopbev::harness {

// Stage 1 trains encoder+fusion+head on single-modality collectives (one run
// per modality). Stage 2 transplants both stage-1 results — camera-owned
// weights from the camera run, lidar/shared from the lidar run, cross-type
// edges fresh — freezes the encoders, and fine-tunes fusion+heads on the
// scenes' stored mixed modalities. AdamW with a half-cosine schedule.
struct TrainOptions {
  int stage = 1;
  attn::Modality stage1_modality = attn::Modality::kLidar;
  std::string out_dir;       // checkpoints and the step log land here
  std::string resume;        // optional checkpoint to continue from
  std::string cam_ckpt;      // stage-2 prerequisites
  std::string lidar_ckpt;
  int epochs = 0;            // 0 falls back to the config's per-stage count
  int halt_after = 0;        // >0 pauses after that many epochs this run; the
                             // schedule still spans `epochs`, resume continues it
  double lr = 0.0;           // 0 falls back to config
  bool log_to_stdout = false;
};

struct TrainResult {
  std::string final_checkpoint;
  double last_loss = 0.0;
  int steps = 0;
  int epochs_run = 0;
};

std::string stage_tag(const TrainOptions& opt);

TrainResult train_stage(const Config& cfg, const std::vector<sim::Scenario>& train_scenes,
                        const std::vector<sim::Scenario>& val_scenes, const TrainOptions& opt);

}  // namespace coopbev::harness
