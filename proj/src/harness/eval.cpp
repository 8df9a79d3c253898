#include "coopbev/harness/eval.hpp"

#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <thread>

#include "json.hpp"

namespace coopbev::harness {
namespace {

using ad::ConfigError;

std::vector<detect::Detection> detect_for_ego(const ModelBundle& bundle, const sim::Scenario& s,
                                              const std::vector<attn::Modality>& mods, int ego,
                                              const Config& cfg, FuseMode mode, ObsCache* cache,
                                              fusion::FusionStats* stats) {
  PipelineResult pr = run_pipeline(bundle, s, mods, ego, cfg, mode, false, false, cache);
  if (stats) *stats = pr.stats;
  return detect::nms(detect::decode_detections(pr.out, cfg.bev()));
}

}  // namespace

const char* eval_mode_name(EvalMode m) {
  switch (m) {
    case EvalMode::kNone: return "none";
    case EvalMode::kLate: return "late";
    default: return "hmvit";
  }
}

ModalityAssign assign_stored() {
  return [](const sim::Scenario& s) { return stored_modalities(s); };
}

ModalityAssign assign_uniform(attn::Modality m) {
  return [m](const sim::Scenario& s) { return uniform_modalities(s, m); };
}

ModalityAssign assign_ratio(attn::Modality ego, double rho) {
  return [ego, rho](const sim::Scenario& s) {
    std::vector<attn::Modality> mods(s.agents.size(), attn::Modality::kCamera);
    if (!mods.empty()) mods[0] = ego;
    int n = static_cast<int>(mods.size()) - 1;
    for (int k = 0; k < n; ++k)
      mods[k + 1] = (k + 0.5) / n <= rho ? attn::Modality::kLidar : attn::Modality::kCamera;
    return mods;
  };
}

ModalityAssign assign_hetero(attn::Modality ego, attn::Modality collab) {
  return [ego, collab](const sim::Scenario& s) {
    std::vector<attn::Modality> mods(s.agents.size(), collab);
    if (!mods.empty()) mods[0] = ego;
    return mods;
  };
}

EvalResult evaluate_scenes(const ModelBundle& bundle, const Config& cfg,
                           const std::vector<sim::Scenario>& scenes, const ModalityAssign& assign,
                           EvalMode mode, int ego_index, ObsCache* cache, int threads) {
  EvalResult res;
  res.scenes = static_cast<int>(scenes.size());
  res.dets.resize(scenes.size());
  res.gts.resize(scenes.size());
  std::vector<int64_t> payload(scenes.size(), 0);
  std::vector<int> collabs(scenes.size(), 0);

  auto score_scene = [&](int i) {
    const sim::Scenario& s = scenes[i];
    std::vector<attn::Modality> mods = assign(s);
    res.gts[i] = gt_boxes_ego(s, ego_index, cfg);
    int n = static_cast<int>(s.agents.size());
    collabs[i] = n - 1;
    if (mode == EvalMode::kLate) {
      std::vector<std::vector<detect::Detection>> per_agent(n);
      std::vector<geom::Pose2> poses(n);
      for (int a = 0; a < n; ++a) {
        per_agent[a] = detect_for_ego(bundle, s, mods, a, cfg, FuseMode::kNone, cache, nullptr);
        poses[a] = s.agents[a].pose;
        if (a != ego_index)
          payload[i] += static_cast<int64_t>(per_agent[a].size()) * 6 * sizeof(float);
      }
      res.dets[i] = detect::late_fusion(per_agent, poses, ego_index);
    } else {
      fusion::FusionStats stats;
      FuseMode fm = mode == EvalMode::kHmvit ? FuseMode::kHmvit : FuseMode::kNone;
      res.dets[i] = detect_for_ego(bundle, s, mods, ego_index, cfg, fm, cache, &stats);
      payload[i] = stats.payload_bytes;
    }
  };

  int nthreads = threads > 0 ? threads
                             : static_cast<int>(std::min(4u, std::max(1u, std::thread::hardware_concurrency())));
  int cap = std::max(1, static_cast<int>(scenes.size()));
  nthreads = std::min(nthreads, cap);
  if (nthreads <= 1 || scenes.size() <= 1) {
    for (std::size_t i = 0; i < scenes.size(); ++i) score_scene(static_cast<int>(i));
  } else {
    std::atomic<int> next{0};
    std::vector<std::thread> pool;
    for (int t = 0; t < nthreads; ++t)
      pool.emplace_back([&] {
        for (int i = next.fetch_add(1); i < static_cast<int>(scenes.size()); i = next.fetch_add(1))
          score_scene(i);
      });
    for (std::thread& t : pool) t.join();
  }

  res.ap50 = detect::average_precision(res.dets, res.gts, 0.5);
  res.ap70 = detect::average_precision(res.dets, res.gts, 0.7);
  int64_t total_payload = 0;
  int64_t total_collabs = 0;
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    total_payload += payload[i];
    total_collabs += collabs[i];
  }
  res.bytes_per_agent =
      total_collabs > 0 ? static_cast<double>(total_payload) / static_cast<double>(total_collabs) : 0.0;
  return res;
}

EvalRow to_row(const std::string& label, const EvalResult& r) {
  return {label, r.ap50, r.ap70, r.bytes_per_agent, r.scenes};
}

std::string format_report(const MetricsReport& r) {
  std::ostringstream out;
  char buf[160];
  std::snprintf(buf, sizeof(buf), "%-28s %8s %8s %14s %7s\n", "label", "ap50", "ap70",
                "bytes/agent", "scenes");
  out << buf;
  for (const EvalRow& row : r.rows) {
    std::snprintf(buf, sizeof(buf), "%-28s %8.4f %8.4f %14.1f %7d\n", row.label.c_str(), row.ap50,
                  row.ap70, row.bytes_per_agent, row.scenes);
    out << buf;
  }
  return out.str();
}

std::string report_json(const MetricsReport& r) {
  nlohmann::json rows = nlohmann::json::array();
  for (const EvalRow& row : r.rows)
    rows.push_back({{"label", row.label},
                    {"ap50", row.ap50},
                    {"ap70", row.ap70},
                    {"bytes_per_agent", row.bytes_per_agent},
                    {"scenes", row.scenes}});
  return nlohmann::json{{"rows", rows}}.dump(2) + "\n";
}

void export_detections(const std::string& path,
                       const std::vector<std::vector<detect::Detection>>& per_scene) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write " + path);
  for (std::size_t i = 0; i < per_scene.size(); ++i)
    for (const detect::Detection& d : per_scene[i])
      out << detect::format_detection(static_cast<int>(i), d) << "\n";
}

void export_gts(const std::string& path, const std::vector<std::vector<detect::BoxBEV>>& per_scene) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write " + path);
  char buf[160];
  for (std::size_t i = 0; i < per_scene.size(); ++i)
    for (const detect::BoxBEV& b : per_scene[i]) {
      std::snprintf(buf, sizeof(buf), "%zu %.6f %.6f %.6f %.6f %.6f", i, b.cx, b.cy, b.w, b.l,
                    b.yaw);
      out << buf << "\n";
    }
}

double ap_from_files(const std::string& det_path, const std::string& gt_path, double iou_thresh) {
  std::ifstream din(det_path), gin(gt_path);
  if (!din) throw ConfigError("cannot read " + det_path);
  if (!gin) throw ConfigError("cannot read " + gt_path);
  std::map<int, std::vector<detect::Detection>> dets;
  std::map<int, std::vector<detect::BoxBEV>> gts;
  int max_scene = -1;
  std::string line;
  while (std::getline(din, line)) {
    if (line.empty()) continue;
    std::istringstream ss(line);
    int scene;
    detect::Detection d;
    if (!(ss >> scene >> d.score >> d.box.cx >> d.box.cy >> d.box.w >> d.box.l >> d.box.yaw))
      throw ConfigError("malformed detection line: " + line);
    dets[scene].push_back(d);
    max_scene = std::max(max_scene, scene);
  }
  while (std::getline(gin, line)) {
    if (line.empty()) continue;
    std::istringstream ss(line);
    int scene;
    detect::BoxBEV b;
    if (!(ss >> scene >> b.cx >> b.cy >> b.w >> b.l >> b.yaw))
      throw ConfigError("malformed ground-truth line: " + line);
    gts[scene].push_back(b);
    max_scene = std::max(max_scene, scene);
  }
  std::vector<std::vector<detect::Detection>> dv(max_scene + 1);
  std::vector<std::vector<detect::BoxBEV>> gv(max_scene + 1);
  for (auto& [k, v] : dets) dv[k] = std::move(v);
  for (auto& [k, v] : gts) gv[k] = std::move(v);
  return detect::average_precision(dv, gv, iou_thresh);
}

sim::Scenario truncate_agents(const sim::Scenario& s, int n_agents) {
  if (n_agents < 1) throw ConfigError("truncate_agents: need at least the ego");
  sim::Scenario out = s;
  if (static_cast<int>(out.agents.size()) > n_agents) out.agents.resize(n_agents);
  return out;
}

}  // namespace coopbev::harness
