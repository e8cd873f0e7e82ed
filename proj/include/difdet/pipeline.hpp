#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "difdet/evaluation.hpp"
#include "difdet/losses.hpp"
#include "difdet/model.hpp"
#include "difdet/types.hpp"

namespace difdet::pipeline {

/// Deterministic seed mixing (splitmix64 over seed + stream index), used so
/// every training step and every scene's inference draw their randomness
/// from (seed, index) alone and resumed runs replay exactly.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t index);

/// One optimizer update over a batch: per scene encode once, pad the
/// normalized ground truth to the proposal budget, corrupt at a uniformly
/// drawn timestep with independent noise per branch, decode, assign and
/// backpropagate; gradients are averaged over the batch before the Adam
/// step. Throws on a non-finite loss, naming the scene and timestep.
losses::LossBreakdown train_step(model::Model& m,
                                 const std::vector<const Scene*>& batch,
                                 std::mt19937_64& rng);

struct TrainLogRow {
  int epoch = 0;
  std::int64_t step = 0;
  losses::LossBreakdown loss;  // epoch average
  double val_map_3d = -1.0;    // -1 when no validation set was given
  double val_map_bev = -1.0;
  double wall_time_s = 0.0;
};

struct TrainResult {
  std::vector<TrainLogRow> log;
  double best_map_3d = -1.0;
  std::string best_checkpoint;
  std::string last_checkpoint;
  std::int64_t steps_done = 0;
};

/// Epoch loop with per-epoch validation mAP, CSV logging to
/// <out_dir>/training_log.csv and best/last checkpoints. Pass a previous
/// last.ckpt as resume_path to continue a run in place.
TrainResult train(model::Model& m, const std::vector<Scene>& train_scenes,
                  const std::vector<Scene>& val_scenes,
                  const std::string& out_dir,
                  const std::string& resume_path = "");

/// Deterministic DDIM chain: predict_x0(u_t, t) supplies the model's clean
/// estimate at each listed timestep; the final entry steps to the terminal
/// state and returns that estimate unchanged.
Mat run_ddim(const Mat& u_T, const std::vector<int>& timesteps,
             const diffusion::DiffusionSchedule& s,
             const std::function<Mat(const Mat&, int)>& predict_x0);

/// Full inference on one scene: Gaussian proposals per branch, the DDIM
/// loop with the head run at every step, then denormalization, score
/// thresholding and optional class-agnostic BEV NMS.
DetectionOutput infer(model::Model& m, const Scene& scene,
                      std::uint64_t seed);

void save_checkpoint(const std::string& path, const model::Model& m,
                     int epoch, std::int64_t global_step);

struct CheckpointInfo {
  std::string config_json;
  int epoch = 0;
  std::int64_t global_step = 0;
  std::int64_t adam_steps = 0;
};

/// Reads the checkpoint at `path`. With a model the parameter arrays and
/// Adam state are restored (shapes must match); with nullptr only the
/// header is returned, e.g. to rebuild the model from the config echo.
CheckpointInfo load_checkpoint(const std::string& path, model::Model* m);

}  // namespace difdet::pipeline
