#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "coopbev/ad/checkpoint.hpp"
#include "coopbev/harness/dataset.hpp"
#include "coopbev/harness/eval.hpp"
#include "coopbev/harness/gradsuite.hpp"
#include "coopbev/harness/render.hpp"
#include "coopbev/harness/train.hpp"

namespace fs = std::filesystem;
using namespace coopbev;

namespace {

harness::Config load_cfg(const std::string& path, uint64_t seed_override, bool has_seed) {
  harness::Config cfg = path.empty() ? harness::default_config() : harness::load_config(path);
  if (has_seed) cfg.training.seed = seed_override;
  return cfg;
}

harness::ModalityAssign regime_assign(const std::string& regime) {
  if (regime == "v2v-c") return harness::assign_uniform(attn::Modality::kCamera);
  if (regime == "v2v-l") return harness::assign_uniform(attn::Modality::kLidar);
  return harness::assign_stored();
}

std::vector<std::vector<detect::Detection>> read_detections(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ad::ConfigError("cannot read " + path);
  std::vector<std::vector<detect::Detection>> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ss(line);
    int scene;
    detect::Detection d;
    if (!(ss >> scene >> d.score >> d.box.cx >> d.box.cy >> d.box.w >> d.box.l >> d.box.yaw))
      throw ad::ConfigError("malformed detection line: " + line);
    if (scene < 0) throw ad::ConfigError("negative scene id in " + path);
    if (static_cast<int>(out.size()) <= scene) out.resize(scene + 1);
    out[scene].push_back(d);
  }
  return out;
}

struct LoadedModel {
  ad::ParamStore ps;
  harness::ModelBundle bundle;
};

std::unique_ptr<LoadedModel> load_model(const harness::Config& cfg, const std::string& ckpt) {
  auto m = std::make_unique<LoadedModel>();
  m->bundle = harness::register_bundle(m->ps, cfg, harness::bundle_seed(cfg));
  ad::load_checkpoint(ckpt, m->ps);
  return m;
}

int run_generate(const std::string& config, uint64_t seed, bool has_seed, const std::string& out) {
  harness::Config cfg = load_cfg(config, seed, has_seed);
  harness::GenerateReport rep = harness::cmd_generate(cfg, out);
  std::cout << "wrote " << rep.train << " train / " << rep.val << " val / " << rep.test
            << " test scenes to " << out << "\n";
  return 0;
}

int run_train(const std::string& config, uint64_t seed, bool has_seed, const std::string& data,
              const std::string& out, int stage, const std::string& regime,
              const std::string& resume, std::string cam_ckpt, std::string lidar_ckpt, int epochs) {
  harness::Config cfg = load_cfg(config, seed, has_seed);
  auto train_scenes = harness::load_split_dir((fs::path(data) / "train").string());
  std::vector<sim::Scenario> val_scenes;
  fs::path val_dir = fs::path(data) / "val";
  if (fs::is_directory(val_dir)) val_scenes = harness::load_split_dir(val_dir.string());

  harness::TrainOptions opt;
  opt.stage = stage;
  opt.out_dir = out;
  opt.resume = resume;
  opt.epochs = epochs;
  opt.log_to_stdout = false;
  if (stage == 1) {
    if (regime == "v2v-h") throw ad::ConfigError("stage 1 trains one modality: pick v2v-c or v2v-l");
    opt.stage1_modality =
        regime == "v2v-c" ? attn::Modality::kCamera : attn::Modality::kLidar;
  } else {
    if (cam_ckpt.empty()) cam_ckpt = (fs::path(out) / "stage1_cam.ckpt").string();
    if (lidar_ckpt.empty()) lidar_ckpt = (fs::path(out) / "stage1_lidar.ckpt").string();
    opt.cam_ckpt = cam_ckpt;
    opt.lidar_ckpt = lidar_ckpt;
  }
  harness::TrainResult res = harness::train_stage(cfg, train_scenes, val_scenes, opt);
  std::cout << "trained " << res.steps << " steps over " << res.epochs_run
            << " epochs; final loss " << res.last_loss << "\ncheckpoint: " << res.final_checkpoint
            << "\n";
  return 0;
}

int run_eval(const std::string& config, uint64_t seed, bool has_seed, const std::string& data,
             const std::string& ckpt, const std::string& regime, const std::string& sweep,
             const std::string& out) {
  harness::Config cfg = load_cfg(config, seed, has_seed);
  auto scenes = harness::load_split_dir((fs::path(data) / "test").string());
  if (scenes.empty()) throw ad::ConfigError("no test scenes under " + data);
  fs::create_directories(out);

  harness::MetricsReport report;
  harness::ObsCache cache;
  std::vector<std::vector<detect::BoxBEV>> gts_export;

  if (sweep.empty()) {
    auto model = load_model(cfg, ckpt);
    for (harness::EvalMode mode :
         {harness::EvalMode::kNone, harness::EvalMode::kLate, harness::EvalMode::kHmvit}) {
      harness::EvalResult r = harness::evaluate_scenes(model->bundle, cfg, scenes,
                                                       regime_assign(regime), mode, 0, &cache);
      std::string label = regime + "/" + harness::eval_mode_name(mode);
      report.rows.push_back(harness::to_row(label, r));
      harness::export_detections(
          (fs::path(out) / ("dets_" + regime + "_" + harness::eval_mode_name(mode) + ".txt")).string(),
          r.dets);
      gts_export = r.gts;
    }
  } else if (sweep == "ratio") {
    auto model = load_model(cfg, ckpt);
    for (attn::Modality ego : {attn::Modality::kCamera, attn::Modality::kLidar})
      for (double rho : {0.0, 0.25, 0.5, 0.75, 1.0}) {
        harness::EvalResult r =
            harness::evaluate_scenes(model->bundle, cfg, scenes, harness::assign_ratio(ego, rho),
                                     harness::EvalMode::kHmvit, 0, &cache);
        char label[64];
        std::snprintf(label, sizeof(label), "ratio_%s_%.2f", attn::modality_name(ego), rho);
        report.rows.push_back(harness::to_row(label, r));
        gts_export = r.gts;
      }
  } else if (sweep == "agents") {
    auto model = load_model(cfg, ckpt);
    std::size_t max_agents = 1;
    for (const sim::Scenario& s : scenes) max_agents = std::max(max_agents, s.agents.size());
    for (std::size_t n = 1; n <= max_agents; ++n) {
      std::vector<sim::Scenario> cut;
      cut.reserve(scenes.size());
      for (const sim::Scenario& s : scenes)
        cut.push_back(harness::truncate_agents(s, static_cast<int>(n)));
      harness::EvalResult r = harness::evaluate_scenes(model->bundle, cfg, cut,
                                                       regime_assign(regime),
                                                       harness::EvalMode::kHmvit, 0, &cache);
      report.rows.push_back(harness::to_row("agents_" + std::to_string(n), r));
      gts_export = r.gts;
    }
  } else {  // compression
    if (ckpt.find("{r}") == std::string::npos)
      throw ad::ConfigError("compression sweep needs --ckpt with an {r} placeholder");
    for (int rate : {1, 8, 16, 32}) {
      harness::Config crate = cfg;
      crate.model.rate = rate;
      harness::validate_config(crate);
      std::string path = ckpt;
      path.replace(path.find("{r}"), 3, std::to_string(rate));
      auto model = load_model(crate, path);
      harness::EvalResult r = harness::evaluate_scenes(model->bundle, crate, scenes,
                                                       regime_assign(regime),
                                                       harness::EvalMode::kHmvit, 0, &cache);
      report.rows.push_back(harness::to_row("rate_" + std::to_string(rate), r));
      gts_export = r.gts;
    }
  }

  harness::export_gts((fs::path(out) / "gts.txt").string(), gts_export);
  std::ofstream jf(fs::path(out) / "report.json", std::ios::binary);
  jf << harness::report_json(report);
  std::ofstream tf(fs::path(out) / "report.txt", std::ios::binary);
  std::string table = harness::format_report(report);
  tf << table;
  std::cout << table;
  return 0;
}

int run_render(const std::string& scene_path, const std::string& dets_path, int scene_index,
               const std::string& config, const std::string& out) {
  sim::Scenario s = sim::load_scenario(scene_path);
  harness::Config cfg = config.empty() ? harness::default_config() : harness::load_config(config);
  std::vector<detect::Detection> dets;
  if (!dets_path.empty()) {
    auto per_scene = read_detections(dets_path);
    if (scene_index < static_cast<int>(per_scene.size())) {
      geom::Pose2 world{0.0, 0.0, 0.0};
      for (detect::Detection d : per_scene[scene_index]) {
        d.box = detect::transform_box(d.box, s.agents[0].pose, world);
        dets.push_back(d);
      }
    }
  }
  harness::save_svg(out, harness::render_svg(s, dets, s.vehicles, cfg.ranges));
  std::cout << "wrote " << out << "\n";
  return 0;
}

int run_fuse_once(const std::string& config, uint64_t seed, bool has_seed) {
  harness::Config cfg = load_cfg(config, seed, has_seed);
  sim::Scenario s = harness::make_occlusion_scene(cfg.training.seed, cfg.extent_m());
  ad::ParamStore ps;
  harness::ModelBundle bundle = harness::register_bundle(ps, cfg, harness::bundle_seed(cfg));
  harness::PipelineResult pr =
      harness::run_pipeline(bundle, s, harness::stored_modalities(s), 0, cfg,
                            harness::FuseMode::kHmvit, false, false);
  double norm = 0.0;
  for (double v : pr.out.cls->data) norm += v * v;
  std::cout << "agents=" << s.agents.size() << " vehicles=" << s.vehicles.size()
            << " messages=" << pr.stats.messages << " payload_bytes=" << pr.stats.payload_bytes
            << " masked_rows=" << pr.stats.fully_masked_rows << " cls_norm=" << std::sqrt(norm)
            << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"hetero-modal cooperative BEV perception workbench"};
  app.require_subcommand(1);

  std::string config, data, out, ckpt, regime = "v2v-h", sweep, resume, cam, lidar;
  std::string scene_path, dets_path;
  uint64_t seed = 0;
  bool has_seed = false;
  int stage = 1, epochs = 0, scene_index = 0;
  bool fault = false;

  auto add_seed = [&](CLI::App* c) {
    c->add_option("--seed", seed, "override config training.seed")->each([&](std::string) {
      has_seed = true;
    });
  };

  CLI::App* gen = app.add_subcommand("generate", "write train/val/test scenario splits");
  gen->add_option("--config", config, "config JSON path");
  add_seed(gen);
  gen->add_option("--out", out, "output directory")->required();

  CLI::App* tr = app.add_subcommand("train", "run one training stage");
  tr->add_option("--config", config, "config JSON path");
  add_seed(tr);
  tr->add_option("--data", data, "dataset directory (from generate)")->required();
  tr->add_option("--out", out, "checkpoint/log directory")->required();
  tr->add_option("--stage", stage, "1 or 2")->check(CLI::IsMember({1, 2}));
  tr->add_option("--regime", regime, "stage-1 modality collective")
      ->check(CLI::IsMember({"v2v-c", "v2v-l", "v2v-h"}));
  tr->add_option("--resume", resume, "checkpoint to continue from");
  tr->add_option("--cam", cam, "stage-2 camera checkpoint");
  tr->add_option("--lidar", lidar, "stage-2 lidar checkpoint");
  tr->add_option("--epochs", epochs, "override epoch count");

  CLI::App* ev = app.add_subcommand("eval", "score a checkpoint on the test split");
  ev->add_option("--config", config, "config JSON path");
  add_seed(ev);
  ev->add_option("--data", data, "dataset directory")->required();
  ev->add_option("--ckpt", ckpt, "checkpoint path ({r} placeholder for --sweep compression)")
      ->required();
  ev->add_option("--regime", regime, "modality regime")
      ->check(CLI::IsMember({"v2v-c", "v2v-l", "v2v-h"}));
  ev->add_option("--sweep", sweep, "ratio | agents | compression")
      ->check(CLI::IsMember({"ratio", "agents", "compression"}));
  ev->add_option("--out", out, "report directory")->required();

  CLI::App* rn = app.add_subcommand("render", "draw a scene with boxes to SVG");
  rn->add_option("--scene", scene_path, "scenario JSON")->required();
  rn->add_option("--dets", dets_path, "detections export (ego frame)");
  rn->add_option("--index", scene_index, "scene id inside the detections file");
  rn->add_option("--config", config, "config JSON for sensor ranges");
  rn->add_option("--out", out, "output SVG path")->required();

  CLI::App* gc = app.add_subcommand("gradcheck", "finite-difference suite over ops and blocks");
  gc->add_flag("--fault", fault, "inject a broken backward as a self-test");

  CLI::App* fo = app.add_subcommand("fuse-once", "single fusion forward on a fresh scene");
  fo->add_option("--config", config, "config JSON path");
  add_seed(fo);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (gen->parsed()) return run_generate(config, seed, has_seed, out);
    if (tr->parsed())
      return run_train(config, seed, has_seed, data, out, stage, regime, resume, cam, lidar, epochs);
    if (ev->parsed()) return run_eval(config, seed, has_seed, data, ckpt, regime, sweep, out);
    if (rn->parsed()) return run_render(scene_path, dets_path, scene_index, config, out);
    if (gc->parsed()) {
      harness::SuiteResult r = harness::run_gradcheck_suite(std::cout, fault);
      return r.failures == 0 ? 0 : 1;
    }
    if (fo->parsed()) return run_fuse_once(config, seed, has_seed);
  } catch (const ad::ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
