#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "difdet/config.hpp"
#include "difdet/evaluation.hpp"
#include "difdet/kitti_io.hpp"
#include "difdet/model.hpp"
#include "difdet/pipeline.hpp"
#include "difdet/scene_gen.hpp"
#include "difdet/selfcheck.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using namespace difdet;

namespace {

constexpr const char* kVersion = "1.0.0";

/// Dotted flags like --infer.d_steps=8 are overrides; everything else goes
/// to the regular parser. Overrides are applied after the config file.
std::vector<std::string> split_overrides(std::vector<std::string>* args) {
  std::vector<std::string> overrides;
  std::vector<std::string> rest;
  for (const std::string& a : *args) {
    if (a.rfind("--", 0) == 0 && a.find('.') != std::string::npos &&
        a.find('=') != std::string::npos)
      overrides.push_back(a.substr(2));
    else
      rest.push_back(a);
  }
  *args = rest;
  return overrides;
}

std::string resolve_out_dir(const std::string& out, const std::string& sub) {
  std::string dir = out;
  if (dir.empty()) dir = "runs/" + sub;
  if (fs::path(dir).is_relative()) {
    if (const char* root = std::getenv("DIFDET3D_OUT_ROOT"))
      dir = (fs::path(root) / dir).string();
  }
  return dir;
}

void write_manifest(const std::string& dir, const std::string& subcommand,
                    const config::RunConfig& cfg) {
  nlohmann::json j;
  j["subcommand"] = subcommand;
  j["version"] = kVersion;
  j["config"] = nlohmann::json::parse(config::to_json_text(cfg));
  std::ofstream out((fs::path(dir) / "manifest.json").string());
  out << j.dump(2) << "\n";
}

std::vector<Scene> load_scenes(const std::string& dir,
                               const std::vector<std::string>& names) {
  if (!fs::exists(dir))
    throw std::runtime_error("missing dataset directory: " + dir);
  std::vector<Scene> scenes;
  for (int id : data::list_scene_ids(dir))
    scenes.push_back(data::read_scene(dir, id, names));
  if (scenes.empty()) throw std::runtime_error("no scenes found in " + dir);
  return scenes;
}

int run_gen_data(const config::RunConfig& cfg, const std::string& out_dir) {
  const data::GeneratorConfig gen = cfg.generator_config();
  const auto names = data::default_class_names(cfg.data.num_classes);
  const auto train =
      data::generate_scenes(gen, cfg.data.seed, cfg.data.train_scenes, 0);
  const auto val = data::generate_scenes(gen, cfg.data.seed,
                                         cfg.data.val_scenes,
                                         cfg.data.train_scenes);
  const std::string train_dir = (fs::path(out_dir) / "train").string();
  const std::string val_dir = (fs::path(out_dir) / "val").string();
  for (const Scene& s : train) data::write_scene(train_dir, s, names);
  for (const Scene& s : val) data::write_scene(val_dir, s, names);
  std::cout << "wrote " << train.size() << " train and " << val.size()
            << " val scenes under " << out_dir << "\n";
  return 0;
}

int run_train(const config::RunConfig& cfg, const std::string& out_dir,
              const std::string& data_dir, const std::string& resume) {
  const auto names = data::default_class_names(cfg.data.num_classes);
  const std::string train_dir = cfg.data.train_dir.empty()
                                    ? (fs::path(data_dir) / "train").string()
                                    : cfg.data.train_dir;
  const std::string val_dir = cfg.data.val_dir.empty()
                                  ? (fs::path(data_dir) / "val").string()
                                  : cfg.data.val_dir;
  const auto train_scenes = load_scenes(train_dir, names);
  std::vector<Scene> val_scenes;
  if (fs::exists(val_dir)) val_scenes = load_scenes(val_dir, names);
  model::Model m(cfg);
  const pipeline::TrainResult r =
      pipeline::train(m, train_scenes, val_scenes, out_dir, resume);
  std::cout << "trained " << r.steps_done << " steps; best val mAP_3D "
            << r.best_map_3d << "\n";
  if (!r.best_checkpoint.empty())
    std::cout << "best checkpoint: " << r.best_checkpoint << "\n";
  return 0;
}

config::RunConfig config_from_checkpoint(const std::string& ckpt,
                                         const std::string& config_path,
                                         const std::vector<std::string>& ovr) {
  config::RunConfig cfg;
  const pipeline::CheckpointInfo info = pipeline::load_checkpoint(ckpt, nullptr);
  config::apply_json_text(cfg, info.config_json);
  if (!config_path.empty()) config::apply_config_file(cfg, config_path);
  for (const std::string& o : ovr) config::apply_override(cfg, o);
  return cfg;
}

int run_infer(const config::RunConfig& cfg, const std::string& out_dir,
              const std::string& data_dir, const std::string& ckpt) {
  const auto names = data::default_class_names(cfg.data.num_classes);
  const auto scenes = load_scenes(data_dir, names);
  model::Model m(cfg);
  pipeline::load_checkpoint(ckpt, &m);
  const std::string pred_dir = (fs::path(out_dir) / "predictions").string();
  fs::create_directories(pred_dir);
  for (const Scene& s : scenes) {
    const DetectionOutput dets =
        pipeline::infer(m, s, pipeline::mix_seed(cfg.infer.seed, s.id));
    const std::string path =
        (fs::path(pred_dir) / (data::scene_file_stem(s.id) + ".txt")).string();
    data::write_predictions(path, dets, names, s.projection, s.image_h,
                            s.image_w);
  }
  std::cout << "wrote predictions for " << scenes.size() << " scenes to "
            << pred_dir << "\n";
  return 0;
}

int run_eval(const config::RunConfig& cfg, const std::string& out_dir,
             const std::string& data_dir, const std::string& pred_dir) {
  const auto names = data::default_class_names(cfg.data.num_classes);
  const auto scenes = load_scenes(data_dir, names);
  std::vector<DetectionOutput> dets;
  std::vector<const Scene*> refs;
  for (const Scene& s : scenes) {
    const std::string path =
        (fs::path(pred_dir) / (data::scene_file_stem(s.id) + ".txt")).string();
    DetectionOutput d;
    if (fs::exists(path)) {
      for (const auto& sd : data::read_predictions(path, names)) {
        d.boxes.push_back(sd.box);
        d.labels.push_back(sd.label);
        d.scores.push_back(sd.score);
      }
    }
    dets.push_back(std::move(d));
    refs.push_back(&s);
  }
  const eval::EvalResult r =
      eval::evaluate(dets, refs, cfg.data.num_classes, cfg.eval.iou_threshold,
                     cfg.eval.interp_points);
  eval::write_metrics_csv((fs::path(out_dir) / "metrics.csv").string(), r,
                          names);
  eval::write_pr_curves(out_dir, r, names);
  std::cout << "mAP_3D " << r.map_3d << ", mAP_BEV " << r.map_bev << "\n";
  return 0;
}

double evaluate_model(model::Model& m, const std::vector<Scene>& scenes,
                      double* map_bev, double* wall_s) {
  const auto& cfg = m.cfg();
  std::vector<DetectionOutput> dets;
  std::vector<const Scene*> refs;
  const auto t0 = std::chrono::steady_clock::now();
  for (const Scene& s : scenes) {
    dets.push_back(
        pipeline::infer(m, s, pipeline::mix_seed(cfg.infer.seed, s.id)));
    refs.push_back(&s);
  }
  *wall_s =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
          .count();
  const eval::EvalResult r =
      eval::evaluate(dets, refs, cfg.data.num_classes, cfg.eval.iou_threshold,
                     cfg.eval.interp_points);
  *map_bev = r.map_bev;
  return r.map_3d;
}

int run_ablate(const config::RunConfig& base, const std::string& out_dir,
               const std::string& data_dir) {
  const auto names = data::default_class_names(base.data.num_classes);
  const auto train_scenes =
      load_scenes((fs::path(data_dir) / "train").string(), names);
  std::vector<Scene> val_scenes =
      load_scenes((fs::path(data_dir) / "val").string(), names);

  std::ofstream csv((fs::path(out_dir) / "ablate.csv").string());
  csv << "group,cell,map_3d,map_bev,infer_wall_s\n";
  csv.precision(10);

  auto train_and_eval = [&](const std::string& group, const std::string& cell,
                            const config::RunConfig& cfg) {
    model::Model m(cfg);
    const std::string run_dir =
        (fs::path(out_dir) / (group + "_" + cell)).string();
    pipeline::train(m, train_scenes, val_scenes, run_dir);
    double map_bev = 0, wall = 0;
    const double map_3d = evaluate_model(m, val_scenes, &map_bev, &wall);
    csv << group << "," << cell << "," << map_3d << "," << map_bev << ","
        << wall << "\n";
    csv.flush();
    std::cout << group << "/" << cell << ": mAP_3D " << map_3d << ", mAP_BEV "
              << map_bev << "\n";
  };

  // branch ablation (full vs no image RoI vs no encoder fusion)
  {
    config::RunConfig cfg = base;
    train_and_eval("branch", "full", cfg);
    cfg = base;
    cfg.model.image_branch = false;
    cfg.model.encoder_fusion = false;
    train_and_eval("branch", "no_image", cfg);
    cfg = base;
    cfg.model.encoder_fusion = false;
    train_and_eval("branch", "no_encoder_fusion", cfg);
  }
  // fusion-mode ablation
  for (const std::string mode :
       {"res_ca", "ca", "sum", "concat", "dp", "mlp"}) {
    config::RunConfig cfg = base;
    cfg.model.fusion_mode = mode;
    train_and_eval("fusion", mode, cfg);
  }
  // sampling-step and proposal-count grid on one shared trained model
  {
    model::Model m(base);
    pipeline::train(m, train_scenes, val_scenes,
                    (fs::path(out_dir) / "steps_base").string());
    for (int d : {1, 4, 8}) {
      for (int props : {100, 300}) {
        config::RunConfig cfg = base;
        cfg.infer.d_steps = d;
        cfg.infer.proposals = props;
        model::Model probe(cfg);
        // share the trained weights across the inference grid
        pipeline::load_checkpoint(
            (fs::path(out_dir) / "steps_base" / "last.ckpt").string(), &probe);
        double map_bev = 0, wall = 0;
        const double map_3d =
            evaluate_model(probe, val_scenes, &map_bev, &wall);
        csv << "steps,d" << d << "_p" << props << "," << map_3d << ","
            << map_bev << "," << wall << "\n";
        csv.flush();
      }
    }
  }
  std::cout << "ablation grid written to " << out_dir << "/ablate.csv\n";
  return 0;
}

int run_selftest() {
  bool ok = true;
  for (const auto& r : selfcheck::run_all()) {
    std::cout << (r.passed ? "PASS" : "FAIL") << " " << r.name << ": "
              << r.detail << "\n";
    ok = ok && r.passed;
  }
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  const std::vector<std::string> overrides = split_overrides(&args);

  CLI::App app{"Diffusion-based 3D object detection with LiDAR-camera fusion"};
  app.require_subcommand(1);
  std::string config_path, out, data_dir, pred_dir, ckpt, resume;

  auto* gen = app.add_subcommand("gen-data", "generate a synthetic dataset");
  auto* train = app.add_subcommand("train", "train a detector");
  auto* infer = app.add_subcommand("infer", "run inference on a dataset");
  auto* evalc = app.add_subcommand("eval", "score predictions against labels");
  auto* ablate = app.add_subcommand("ablate", "run the ablation grids");
  auto* selftest = app.add_subcommand("selftest", "run the oracle suites");

  for (CLI::App* sub : {gen, train, infer, evalc, ablate}) {
    sub->add_option("--config", config_path, "JSON config file");
    sub->add_option("--out", out, "output directory");
  }
  for (CLI::App* sub : {train, infer, evalc, ablate})
    sub->add_option("--data", data_dir, "dataset directory")->required();
  train->add_option("--resume", resume, "checkpoint to resume from");
  infer->add_option("--checkpoint", ckpt, "trained checkpoint")->required();
  evalc->add_option("--predictions", pred_dir, "prediction directory")
      ->required();

  try {
    app.parse(std::vector<std::string>(args.rbegin(), args.rend()));
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (selftest->parsed()) return run_selftest();

    config::RunConfig cfg;
    if (infer->parsed())
      cfg = config_from_checkpoint(ckpt, config_path, overrides);
    else {
      if (!config_path.empty()) config::apply_config_file(cfg, config_path);
      for (const std::string& o : overrides) config::apply_override(cfg, o);
    }
    const std::string sub = app.get_subcommands().front()->get_name();
    const std::string out_dir = resolve_out_dir(out, sub);
    fs::create_directories(out_dir);
    write_manifest(out_dir, sub, cfg);

    if (gen->parsed()) return run_gen_data(cfg, out_dir);
    if (train->parsed()) return run_train(cfg, out_dir, data_dir, resume);
    if (infer->parsed()) return run_infer(cfg, out_dir, data_dir, ckpt);
    if (evalc->parsed()) return run_eval(cfg, out_dir, data_dir, pred_dir);
    if (ablate->parsed()) return run_ablate(cfg, out_dir, data_dir);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
