#pragma once

#include <array>
#include <random>
#include <string>
#include <vector>

#include "difdet/types.hpp"
#include "difdet/voxelize.hpp"

namespace difdet::data {

/// Desk-scale synthetic scene generator. Boxes with class-dependent
/// canonical sizes are placed inside the camera frustum, surface-sampled
/// point clouds are attached, and a flat-shaded pseudo-image is rendered
/// through the scene projection.
struct GeneratorConfig {
  int num_classes = 3;
  // canonical (l, w, h) per class; extended cyclically if num_classes grows
  std::vector<std::array<double, 3>> class_sizes = {
      {2.2, 1.0, 0.9}, {0.6, 0.6, 1.7}, {1.7, 0.6, 1.5}};
  double size_jitter = 0.05;  // relative, uniform
  int min_objects = 1;
  int max_objects = 8;
  Eigen::Vector3d range_min{0.0, -8.0, -1.0};
  Eigen::Vector3d range_max{16.0, 8.0, 3.0};
  int points_per_object = 80;
  int interior_points = 20;  // subset sampled strictly inside the box
  int clutter_points = 300;
  double point_noise = 0.01;  // meters, on surface samples
  double max_overlap_bev_iou = 0.05;
  int placement_attempts = 100;
  int image_h = 64;
  int image_w = 64;
  double focal = 48.0;
};

Scene generate_scene(const GeneratorConfig& cfg, std::mt19937_64& rng,
                     int scene_id = 0);

/// Deterministic per-scene seeding: scene i uses seed ^ hash(i).
std::vector<Scene> generate_scenes(const GeneratorConfig& cfg,
                                   std::uint64_t seed, int count,
                                   int first_id = 0);

/// Re-renders the pseudo-image for the given boxes/labels (used after
/// augmentation).
void render_image(Scene* scene, const GeneratorConfig& cfg,
                  std::mt19937_64& rng);

struct AugmentConfig {
  bool enabled = true;
  double flip_prob = 0.5;
  double max_yaw = kPi / 8;  // rotation about the world z axis
};

/// Random flip across y and yaw rotation; the image is re-rendered so the
/// projection stays consistent. If rotation would push a box out of range
/// the rotation is skipped for that scene.
Scene augment_scene(const Scene& scene, const GeneratorConfig& cfg,
                    const AugmentConfig& aug, std::mt19937_64& rng);

std::vector<std::string> default_class_names(int num_classes);

}  // namespace difdet::data
