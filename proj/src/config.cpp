#include "difdet/config.hpp"

#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace difdet::config {

using nlohmann::json;

losses::LossWeights RunConfig::loss_weights() const {
  losses::LossWeights w;
  w.lambda1 = loss.lambda1;
  w.lambda2 = loss.lambda2;
  w.lambda3 = loss.lambda3;
  w.lambda4 = loss.lambda4;
  w.lambda5 = loss.lambda5;
  w.gamma = loss.gamma;
  return w;
}

data::GeneratorConfig RunConfig::generator_config() const {
  data::GeneratorConfig g;
  g.num_classes = data.num_classes;
  g.size_jitter = data.size_jitter;
  g.min_objects = data.min_objects;
  g.max_objects = data.max_objects;
  g.range_min = Eigen::Vector3d(data.range_min[0], data.range_min[1],
                                data.range_min[2]);
  g.range_max = Eigen::Vector3d(data.range_max[0], data.range_max[1],
                                data.range_max[2]);
  g.points_per_object = data.points_per_object;
  g.clutter_points = data.clutter_points;
  g.point_noise = data.point_noise;
  g.image_h = data.image_h;
  g.image_w = data.image_w;
  g.focal = data.focal;
  return g;
}

data::VoxelRange RunConfig::voxel_range() const {
  data::VoxelRange r;
  r.min = Eigen::Vector3d(data.range_min[0], data.range_min[1],
                          data.range_min[2]);
  r.max = Eigen::Vector3d(data.range_max[0], data.range_max[1],
                          data.range_max[2]);
  r.voxel_size = Eigen::Vector3d(data.voxel_size[0], data.voxel_size[1],
                                 data.voxel_size[2]);
  return r;
}

diffusion::BoxNormalizer RunConfig::normalizer() const {
  diffusion::BoxNormalizer n;
  n.center_min = Eigen::Vector3d(data.range_min[0], data.range_min[1],
                                 data.range_min[2]);
  n.center_max = Eigen::Vector3d(data.range_max[0], data.range_max[1],
                                 data.range_max[2]);
  // generous per-dimension size ceiling: largest canonical size times 2
  data::GeneratorConfig g = generator_config();
  Eigen::Vector3d ms(0.1, 0.1, 0.1);
  for (const auto& s : g.class_sizes) {
    ms.x() = std::max(ms.x(), 2.0 * s[0]);
    ms.y() = std::max(ms.y(), 2.0 * s[1]);
    ms.z() = std::max(ms.z(), 2.0 * s[2]);
  }
  n.max_size = ms;
  n.signal_scale = diffusion.signal_scale;
  return n;
}

diffusion::DiffusionSchedule RunConfig::schedule() const {
  return diffusion::make_schedule(
      diffusion::schedule_kind_from_string(diffusion.schedule),
      diffusion.steps);
}

namespace {

struct KeyHandler {
  std::function<json(const RunConfig&)> get;
  std::function<void(RunConfig&, const json&)> set;
};

#define CFG_KEY(name, expr)                                              \
  {                                                                      \
    name, KeyHandler {                                                   \
      [](const RunConfig& c) -> json { return c.expr; },                 \
          [](RunConfig& c, const json& v) {                              \
            c.expr = v.get<std::decay_t<decltype(c.expr)>>();            \
          }                                                              \
    }                                                                    \
  }

const std::map<std::string, KeyHandler>& key_table() {
  static const std::map<std::string, KeyHandler> table = {
      CFG_KEY("data.num_classes", data.num_classes),
      CFG_KEY("data.range_min", data.range_min),
      CFG_KEY("data.range_max", data.range_max),
      CFG_KEY("data.voxel_size", data.voxel_size),
      CFG_KEY("data.max_points_per_voxel", data.max_points_per_voxel),
      CFG_KEY("data.min_objects", data.min_objects),
      CFG_KEY("data.max_objects", data.max_objects),
      CFG_KEY("data.points_per_object", data.points_per_object),
      CFG_KEY("data.clutter_points", data.clutter_points),
      CFG_KEY("data.size_jitter", data.size_jitter),
      CFG_KEY("data.point_noise", data.point_noise),
      CFG_KEY("data.image_h", data.image_h),
      CFG_KEY("data.image_w", data.image_w),
      CFG_KEY("data.focal", data.focal),
      CFG_KEY("data.train_scenes", data.train_scenes),
      CFG_KEY("data.val_scenes", data.val_scenes),
      CFG_KEY("data.train_dir", data.train_dir),
      CFG_KEY("data.val_dir", data.val_dir),
      CFG_KEY("data.seed", data.seed),
      CFG_KEY("diffusion.schedule", diffusion.schedule),
      CFG_KEY("diffusion.steps", diffusion.steps),
      CFG_KEY("diffusion.signal_scale", diffusion.signal_scale),
      CFG_KEY("diffusion.paper_literal_noise", diffusion.paper_literal_noise),
      CFG_KEY("model.d_model", model.d_model),
      CFG_KEY("model.heads", model.heads),
      CFG_KEY("model.head_dim", model.head_dim),
      CFG_KEY("model.image_channels", model.image_channels),
      CFG_KEY("model.bev_channels", model.bev_channels),
      CFG_KEY("model.roi_grid", model.roi_grid),
      CFG_KEY("model.fusion_mode", model.fusion_mode),
      CFG_KEY("model.image_branch", model.image_branch),
      CFG_KEY("model.encoder_fusion", model.encoder_fusion),
      CFG_KEY("model.time_embedding", model.time_embedding),
      CFG_KEY("model.attention_scope", model.attention_scope),
      CFG_KEY("model.head_hidden", model.head_hidden),
      CFG_KEY("model.head_rounds", model.head_rounds),
      CFG_KEY("model.seed", model.seed),
      CFG_KEY("train.learning_rate", train.learning_rate),
      CFG_KEY("train.beta1", train.beta1),
      CFG_KEY("train.beta2", train.beta2),
      CFG_KEY("train.dropout", train.dropout),
      CFG_KEY("train.epochs", train.epochs),
      CFG_KEY("train.batch_size", train.batch_size),
      CFG_KEY("train.seed", train.seed),
      CFG_KEY("train.proposals", train.proposals),
      CFG_KEY("train.max_steps", train.max_steps),
      CFG_KEY("train.grad_clip", train.grad_clip),
      CFG_KEY("train.matcher", train.matcher),
      CFG_KEY("train.ota_k", train.ota_k),
      CFG_KEY("train.augment", train.augment),
      CFG_KEY("train.flip_prob", train.flip_prob),
      CFG_KEY("train.max_aug_yaw", train.max_aug_yaw),
      CFG_KEY("train.box_renewal", train.box_renewal),
      CFG_KEY("loss.lambda1", loss.lambda1),
      CFG_KEY("loss.lambda2", loss.lambda2),
      CFG_KEY("loss.lambda3", loss.lambda3),
      CFG_KEY("loss.lambda4", loss.lambda4),
      CFG_KEY("loss.lambda5", loss.lambda5),
      CFG_KEY("loss.gamma", loss.gamma),
      CFG_KEY("infer.d_steps", infer.d_steps),
      CFG_KEY("infer.proposals", infer.proposals),
      CFG_KEY("infer.score_threshold", infer.score_threshold),
      CFG_KEY("infer.nms", infer.nms),
      CFG_KEY("infer.nms_iou", infer.nms_iou),
      CFG_KEY("infer.seed", infer.seed),
      CFG_KEY("eval.iou_threshold", eval.iou_threshold),
      CFG_KEY("eval.interp_points", eval.interp_points),
  };
  return table;
}

#undef CFG_KEY

void apply_flat(RunConfig& cfg, const std::string& key, const json& value) {
  const auto& table = key_table();
  auto it = table.find(key);
  if (it == table.end())
    throw std::invalid_argument("unknown config key: " + key);
  try {
    it->second.set(cfg, value);
  } catch (const json::exception& e) {
    throw std::invalid_argument("config key " + key + ": " + e.what());
  }
}

void walk(RunConfig& cfg, const json& j, const std::string& prefix) {
  if (!j.is_object())
    throw std::invalid_argument("config: expected JSON object at '" + prefix +
                                "'");
  for (const auto& [k, v] : j.items()) {
    const std::string key = prefix.empty() ? k : prefix + "." + k;
    if (v.is_object() && key_table().count(key) == 0)
      walk(cfg, v, key);
    else
      apply_flat(cfg, key, v);
  }
}

}  // namespace

void apply_json_text(RunConfig& cfg, const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("config parse error: ") +
                                e.what());
  }
  walk(cfg, j, "");
}

void apply_config_file(RunConfig& cfg, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open config file: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  apply_json_text(cfg, ss.str());
}

void apply_override(RunConfig& cfg, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos)
    throw std::invalid_argument("override must be key=value: " + assignment);
  const std::string key = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);
  json value;
  try {
    value = json::parse(raw);
  } catch (const json::exception&) {
    value = raw;  // bare string
  }
  apply_flat(cfg, key, value);
}

std::string to_json_text(const RunConfig& cfg, int indent) {
  json j;
  for (const auto& [key, handler] : key_table()) {
    json* slot = &j;
    std::string rest = key;
    size_t dot;
    while ((dot = rest.find('.')) != std::string::npos) {
      slot = &(*slot)[rest.substr(0, dot)];
      rest = rest.substr(dot + 1);
    }
    (*slot)[rest] = handler.get(cfg);
  }
  return j.dump(indent);
}

}  // namespace difdet::config
