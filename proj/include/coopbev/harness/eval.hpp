#pragma once

#include <functional>
#include <string>
#include <vector>

#include "coopbev/harness/model.hpp"

namespace coopbev::harness {

enum class EvalMode { kNone, kLate, kHmvit };

const char* eval_mode_name(EvalMode m);

using ModalityAssign = std::function<std::vector<attn::Modality>(const sim::Scenario&)>;

ModalityAssign assign_stored();
ModalityAssign assign_uniform(attn::Modality m);
// Ego keeps `ego`; collaborator k of n turns lidar when (k+0.5)/n <= rho,
// so the lidar share of collaborators tracks rho deterministically.
ModalityAssign assign_ratio(attn::Modality ego, double rho);
ModalityAssign assign_hetero(attn::Modality ego, attn::Modality collab);

struct EvalResult {
  double ap50 = 0.0;
  double ap70 = 0.0;
  double bytes_per_agent = 0.0;  // mean wire payload per collaborator per scene
  int scenes = 0;
  std::vector<std::vector<detect::Detection>> dets;  // ego frame, per scene
  std::vector<std::vector<detect::BoxBEV>> gts;
};

// Runs every scene through the requested mode with agent 0 as ego (late
// fusion runs each agent solo and merges boxes in the ego frame). Scenes are
// scored independently, so they fan out over up to `threads` workers
// (0 = min(4, hardware)); results are index-ordered and deterministic.
EvalResult evaluate_scenes(const ModelBundle& bundle, const Config& cfg,
                           const std::vector<sim::Scenario>& scenes, const ModalityAssign& assign,
                           EvalMode mode, int ego_index = 0, ObsCache* cache = nullptr,
                           int threads = 0);

struct EvalRow {
  std::string label;
  double ap50 = 0.0;
  double ap70 = 0.0;
  double bytes_per_agent = 0.0;
  int scenes = 0;
};

struct MetricsReport {
  std::vector<EvalRow> rows;
};

EvalRow to_row(const std::string& label, const EvalResult& r);
std::string format_report(const MetricsReport& r);
std::string report_json(const MetricsReport& r);

void export_detections(const std::string& path,
                       const std::vector<std::vector<detect::Detection>>& per_scene);
void export_gts(const std::string& path, const std::vector<std::vector<detect::BoxBEV>>& per_scene);
// Recomputes AP purely from the two exported files.
double ap_from_files(const std::string& det_path, const std::string& gt_path, double iou_thresh);

// Keeps the first n agents (at least the ego).
sim::Scenario truncate_agents(const sim::Scenario& s, int n_agents);

}  // namespace coopbev::harness
