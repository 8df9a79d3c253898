#include "coopbev/harness/train.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>

#include "coopbev/ad/checkpoint.hpp"
#include "coopbev/ad/ops.hpp"
#include "coopbev/ad/optim.hpp"
#include "coopbev/ad/tape.hpp"
#include "coopbev/common/rng.hpp"
#include "json.hpp"

namespace coopbev::harness {
namespace {

using ad::ConfigError;
namespace fs = std::filesystem;

double now_ms() {
  return std::chrono::duration<double, std::milli>(
             std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

struct SceneLoss {
  double total = 0.0, cls = 0.0, reg = 0.0;
};

// One taped forward/backward; gradients land in Tensor::grad additively so a
// batch is a plain loop of these before the optimizer step.
SceneLoss scene_step(const ModelBundle& bundle, const sim::Scenario& s,
                     const std::vector<attn::Modality>& mods, int ego, const Config& cfg,
                     bool enc_training, double inv_batch, ObsCache& cache) {
  ad::Tape tape;
  SceneLoss out;
  {
    ad::TapeScope scope(tape);
    PipelineResult pr =
        run_pipeline(bundle, s, mods, ego, cfg, FuseMode::kHmvit, true, enc_training, &cache);
    detect::Targets t = detect::assign_targets(gt_boxes_ego(s, ego, cfg), cfg.bev());
    detect::DetectionLoss dl = detect::detection_loss(pr.out, t);
    ad::TensorPtr scaled = ad::scale(dl.total, inv_batch);
    tape.backward(scaled);
    out.total = dl.total->data[0];
    out.cls = dl.focal_value;
    out.reg = dl.reg_value;
  }
  tape.add_into_tensor_grads();
  return out;
}

double val_loss(const ModelBundle& bundle, const std::vector<sim::Scenario>& scenes,
                const TrainOptions& opt, const Config& cfg, ObsCache& cache) {
  if (scenes.empty()) return 0.0;
  double sum = 0.0;
  for (const sim::Scenario& s : scenes) {
    std::vector<attn::Modality> mods = opt.stage == 1
                                           ? uniform_modalities(s, opt.stage1_modality)
                                           : stored_modalities(s);
    PipelineResult pr = run_pipeline(bundle, s, mods, 0, cfg, FuseMode::kHmvit, false, false, &cache);
    detect::Targets t = detect::assign_targets(gt_boxes_ego(s, 0, cfg), cfg.bev());
    detect::DetectionLoss dl = detect::detection_loss(pr.out, t);
    sum += dl.total->data[0];
  }
  return sum / static_cast<double>(scenes.size());
}

// Pure function of (seed, epoch) — starts from identity so resumed runs see
// exactly the permutation the uninterrupted run would have drawn.
void shuffle_indices(std::vector<int>& idx, uint64_t seed, int epoch) {
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<int>(i);
  Rng r(hash_u64(hash_u64(seed, 0x5ea5071e55ULL), static_cast<uint64_t>(epoch)));
  for (int i = static_cast<int>(idx.size()) - 1; i > 0; --i) {
    int j = static_cast<int>(r.next_u64() % static_cast<uint64_t>(i + 1));
    std::swap(idx[i], idx[j]);
  }
}

}  // namespace

std::string stage_tag(const TrainOptions& opt) {
  if (opt.stage == 2) return "stage2";
  return std::string("stage1_") + attn::modality_name(opt.stage1_modality);
}

TrainResult train_stage(const Config& cfg, const std::vector<sim::Scenario>& train_scenes,
                        const std::vector<sim::Scenario>& val_scenes, const TrainOptions& opt) {
  if (opt.stage != 1 && opt.stage != 2) throw ConfigError("train: stage must be 1 or 2");
  if (train_scenes.empty()) throw ConfigError("train: no training scenes");
  if (opt.out_dir.empty()) throw ConfigError("train: out_dir required");
  fs::create_directories(opt.out_dir);

  ad::ParamStore ps;
  ModelBundle bundle = register_bundle(ps, cfg, bundle_seed(cfg));
  ad::AdamWConfig ocfg;
  ocfg.lr = opt.lr > 0 ? opt.lr : cfg.training.lr;
  ocfg.weight_decay = cfg.training.weight_decay;
  ad::AdamW optim(ps, ocfg);
  const double lr_max = ocfg.lr;
  const double lr_min = lr_max * 0.01;

  int epochs = opt.epochs > 0
                   ? opt.epochs
                   : (opt.stage == 1 ? cfg.training.epochs_stage1 : cfg.training.epochs_stage2);
  int start_epoch = 0;
  int64_t global_step = 0;

  if (opt.stage == 2) {
    if (opt.resume.empty()) {
      if (!fs::exists(opt.lidar_ckpt) || !fs::exists(opt.cam_ckpt))
        throw ConfigError(
            "stage 2 needs both stage-1 checkpoints (run `train --stage 1 --regime v2v-l` and "
            "`--regime v2v-c` first); missing " +
            (fs::exists(opt.lidar_ckpt) ? opt.cam_ckpt : opt.lidar_ckpt));
      ad::load_checkpoint(opt.lidar_ckpt, ps, nullptr,
                          [](const std::string&, const std::string& owner) {
                            return owner == "lidar" || owner == "edge_ll" || owner == "shared";
                          });
      ad::load_checkpoint(opt.cam_ckpt, ps, nullptr,
                          [](const std::string&, const std::string& owner) {
                            return owner == "cam" || owner == "edge_cc";
                          });
    }
    freeze_encoder(ps);
  }
  if (!opt.resume.empty()) {
    std::map<std::string, std::string> meta;
    ad::load_checkpoint(opt.resume, ps, &optim, nullptr, &meta);
    auto it = meta.find("epoch");
    if (it != meta.end()) start_epoch = std::stoi(it->second) + 1;
    it = meta.find("step");
    if (it != meta.end()) global_step = std::stoll(it->second);
  }

  const int n = static_cast<int>(train_scenes.size());
  const int batch = std::min(cfg.training.batch, n);
  const int steps_per_epoch = (n + batch - 1) / batch;
  const int64_t total_steps = static_cast<int64_t>(steps_per_epoch) * epochs;
  const std::string tag = stage_tag(opt);

  std::ofstream log(fs::path(opt.out_dir) / ("train_" + tag + ".log"), std::ios::app);
  ObsCache cache;
  std::vector<int> order(n);
  for (int i = 0; i < n; ++i) order[i] = i;

  TrainResult res;
  double best_val = std::numeric_limits<double>::infinity();
  int stale = 0;
  bool halted = false;

  for (int epoch = start_epoch; epoch < epochs; ++epoch) {
    shuffle_indices(order, cfg.training.seed, epoch);
    for (int b0 = 0; b0 < n; b0 += batch) {
      double t0 = now_ms();
      int bsz = std::min(batch, n - b0);
      optim.set_lr(ad::cosine_lr(lr_max, lr_min, global_step, total_steps));
      SceneLoss acc;
      for (int k = 0; k < bsz; ++k) {
        const sim::Scenario& s = train_scenes[order[b0 + k]];
        int ego = (epoch + order[b0 + k]) % static_cast<int>(s.agents.size());
        std::vector<attn::Modality> mods = opt.stage == 1
                                               ? uniform_modalities(s, opt.stage1_modality)
                                               : stored_modalities(s);
        SceneLoss sl =
            scene_step(bundle, s, mods, ego, cfg, opt.stage == 1, 1.0 / bsz, cache);
        acc.total += sl.total / bsz;
        acc.cls += sl.cls / bsz;
        acc.reg += sl.reg / bsz;
      }
      optim.step();
      optim.zero_grad();
      ++global_step;
      nlohmann::json line = {{"step", global_step},
                             {"lr", optim.lr()},
                             {"loss_cls", acc.cls},
                             {"loss_reg", acc.reg},
                             {"wall_ms", now_ms() - t0}};
      log << line.dump() << "\n";
      if (opt.log_to_stdout) std::cout << line.dump() << "\n";
      res.last_loss = acc.total;
      ++res.steps;
    }
    log.flush();

    std::map<std::string, std::string> meta = {
        {"stage", std::to_string(opt.stage)},
        {"modality", opt.stage == 1 ? attn::modality_name(opt.stage1_modality) : "mixed"},
        {"epoch", std::to_string(epoch)},
        {"step", std::to_string(global_step)}};
    ad::save_checkpoint((fs::path(opt.out_dir) / (tag + "_last.ckpt")).string(), ps, &optim, meta);
    res.epochs_run = epoch + 1;

    if (cfg.training.patience > 0 && !val_scenes.empty()) {
      double v = val_loss(bundle, val_scenes, opt, cfg, cache);
      log << nlohmann::json({{"epoch", epoch}, {"val_loss", v}}).dump() << "\n";
      if (v < best_val - 1e-9) {
        best_val = v;
        stale = 0;
      } else if (++stale >= cfg.training.patience) {
        break;
      }
    }
    if (opt.halt_after > 0 && epoch + 1 < epochs && epoch - start_epoch + 1 >= opt.halt_after) {
      halted = true;
      break;
    }
  }

  if (halted) {
    // the pause point is the per-epoch checkpoint; the run is not finished
    res.final_checkpoint = (fs::path(opt.out_dir) / (tag + "_last.ckpt")).string();
    return res;
  }

  res.final_checkpoint = (fs::path(opt.out_dir) / (tag + ".ckpt")).string();
  std::map<std::string, std::string> meta = {
      {"stage", std::to_string(opt.stage)},
      {"modality", opt.stage == 1 ? attn::modality_name(opt.stage1_modality) : "mixed"},
      {"epoch", std::to_string(res.epochs_run - 1)},
      {"step", std::to_string(global_step)}};
  ad::save_checkpoint(res.final_checkpoint, ps, &optim, meta);
  return res;
}

}  // namespace coopbev::harness
