#pragma once

#include <array>
#include <string>
#include <vector>

#include "difdet/diffusion.hpp"
#include "difdet/losses.hpp"
#include "difdet/scene_gen.hpp"
#include "difdet/voxelize.hpp"

namespace difdet::config {

/// Flat dotted-key configuration covering every module. Unknown keys are
/// rejected on load; command-line overrides win over file values.
struct RunConfig {
  struct Data {
    int num_classes = 3;
    std::array<double, 3> range_min = {0.0, -8.0, -1.0};
    std::array<double, 3> range_max = {16.0, 8.0, 3.0};
    std::array<double, 3> voxel_size = {0.5, 0.5, 0.5};
    int max_points_per_voxel = 32;
    int min_objects = 1;
    int max_objects = 8;
    int points_per_object = 80;
    int clutter_points = 300;
    double size_jitter = 0.05;
    double point_noise = 0.01;
    int image_h = 64;
    int image_w = 64;
    double focal = 48.0;
    int train_scenes = 40;
    int val_scenes = 10;
    std::string train_dir;
    std::string val_dir;
    std::uint64_t seed = 0;
  } data;

  struct Diffusion {
    std::string schedule = "cosine";
    int steps = 1000;
    double signal_scale = 2.0;
    bool paper_literal_noise = false;
  } diffusion;

  struct Model {
    int d_model = 64;
    int heads = 4;
    int head_dim = 16;
    int image_channels = 32;
    int bev_channels = 32;
    int roi_grid = 4;
    std::string fusion_mode = "res_ca";  // res_ca, ca, sum, concat, dp, mlp
    bool image_branch = true;
    bool encoder_fusion = true;
    bool time_embedding = true;
    std::string attention_scope = "proposals";  // proposals or diagonal
    int head_hidden = 64;
    // refinement rounds inside one decode; rounds share weights and
    // re-pool RoI features at the boxes predicted by the previous round
    int head_rounds = 3;
    std::uint64_t seed = 0;
  } model;

  struct Train {
    double learning_rate = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double dropout = 0.3;
    int epochs = 60;
    int batch_size = 6;
    std::uint64_t seed = 0;
    int proposals = 300;
    int max_steps = 0;  // 0 = bounded by epochs only
    double grad_clip = 1.0;
    std::string matcher = "ota";  // ota or hungarian
    int ota_k = 5;
    bool augment = false;
    double flip_prob = 0.5;
    double max_aug_yaw = kPi / 8;
    bool box_renewal = false;
  } train;

  struct Loss {
    double lambda1 = 1.0;
    double lambda2 = 1.0;
    double lambda3 = 2.5;
    double lambda4 = 1.0;
    double lambda5 = 1.0;
    double gamma = 2.0;
  } loss;

  struct Infer {
    int d_steps = 4;
    int proposals = 300;
    double score_threshold = 0.3;
    bool nms = true;
    double nms_iou = 0.5;
    std::uint64_t seed = 0;
  } infer;

  struct Eval {
    double iou_threshold = 0.7;
    int interp_points = 40;  // 40 or 11
  } eval;

  losses::LossWeights loss_weights() const;
  data::GeneratorConfig generator_config() const;
  data::VoxelRange voxel_range() const;
  diffusion::BoxNormalizer normalizer() const;
  diffusion::DiffusionSchedule schedule() const;
};

/// Parse a JSON document (dotted or nested keys) into cfg. Unknown keys
/// throw std::invalid_argument naming the key.
void apply_json_text(RunConfig& cfg, const std::string& json_text);
void apply_config_file(RunConfig& cfg, const std::string& path);
/// "key=value" override, e.g. "infer.d_steps=8".
void apply_override(RunConfig& cfg, const std::string& assignment);

std::string to_json_text(const RunConfig& cfg, int indent = 2);

}  // namespace difdet::config
