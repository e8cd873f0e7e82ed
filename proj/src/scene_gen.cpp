#include "difdet/scene_gen.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "difdet/geometry.hpp"
#include "difdet/kitti_io.hpp"

namespace difdet::data {

namespace {

const std::array<std::array<double, 3>, 6> kClassColors = {{
    {0.85, 0.25, 0.25},
    {0.25, 0.75, 0.30},
    {0.25, 0.35, 0.85},
    {0.85, 0.75, 0.20},
    {0.70, 0.30, 0.80},
    {0.20, 0.75, 0.75},
}};

std::array<double, 3> class_color(int label) {
  return kClassColors[size_t(label) % kClassColors.size()];
}

// folds a yaw into [-pi/2, pi/2); a box rotated by pi is unchanged
double canonical_yaw(double yaw) {
  double y = wrap_angle(yaw);
  if (y >= 0.5 * kPi) y -= kPi;
  if (y < -0.5 * kPi) y += kPi;
  return y;
}

std::array<double, 3> canonical_size(const GeneratorConfig& cfg, int label) {
  return cfg.class_sizes[size_t(label) % cfg.class_sizes.size()];
}

bool project_point(const Eigen::Matrix<double, 3, 4>& proj,
                   const Eigen::Vector3d& p, double* u, double* v) {
  const Eigen::Vector3d px = proj * Eigen::Vector4d(p.x(), p.y(), p.z(), 1.0);
  if (px.z() <= 1e-6) return false;
  *u = px.x() / px.z();
  *v = px.y() / px.z();
  return true;
}

// Andrew monotone chain; returns CCW hull in image coordinates.
std::vector<std::array<double, 2>> convex_hull(
    std::vector<std::array<double, 2>> pts) {
  std::sort(pts.begin(), pts.end());
  pts.erase(std::unique(pts.begin(), pts.end()), pts.end());
  if (pts.size() < 3) return pts;
  auto cross = [](const std::array<double, 2>& o,
                  const std::array<double, 2>& a,
                  const std::array<double, 2>& b) {
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0]);
  };
  std::vector<std::array<double, 2>> hull(2 * pts.size());
  size_t k = 0;
  for (const auto& p : pts) {
    while (k >= 2 && cross(hull[k - 2], hull[k - 1], p) <= 0) --k;
    hull[k++] = p;
  }
  const size_t lower = k + 1;
  for (auto it = pts.rbegin(); it != pts.rend(); ++it) {
    while (k >= lower && cross(hull[k - 2], hull[k - 1], *it) <= 0) --k;
    hull[k++] = *it;
  }
  hull.resize(k - 1);
  return hull;
}

bool inside_hull(const std::vector<std::array<double, 2>>& hull, double x,
                 double y) {
  if (hull.size() < 3) return false;
  for (size_t i = 0; i < hull.size(); ++i) {
    const auto& a = hull[i];
    const auto& b = hull[(i + 1) % hull.size()];
    if ((b[0] - a[0]) * (y - a[1]) - (b[1] - a[1]) * (x - a[0]) < 0)
      return false;
  }
  return true;
}

bool box_in_range(const Box3D& b, const GeneratorConfig& cfg) {
  for (const auto& c : geometry::box_corners(b)) {
    for (int k = 0; k < 3; ++k) {
      const double v = c[k];
      if (v < cfg.range_min[k] || v >= cfg.range_max[k]) return false;
    }
  }
  return true;
}

bool center_visible(const Eigen::Matrix<double, 3, 4>& proj,
                    const Box3D& b, int image_h, int image_w) {
  double u, v;
  if (!project_point(proj, {b.cx, b.cy, b.cz}, &u, &v)) return false;
  const double m = 4.0;
  return u >= m && u < image_w - m && v >= m && v < image_h - m;
}

}  // namespace

std::vector<std::string> default_class_names(int num_classes) {
  static const std::vector<std::string> base = {"Car",   "Pedestrian",
                                                "Cyclist", "Van",
                                                "Truck", "Misc"};
  std::vector<std::string> out;
  for (int i = 0; i < num_classes; ++i) {
    if (i < int(base.size()))
      out.push_back(base[i]);
    else
      out.push_back("Class" + std::to_string(i));
  }
  return out;
}

void render_image(Scene* scene, const GeneratorConfig& cfg,
                  std::mt19937_64& rng) {
  const int h = cfg.image_h, w = cfg.image_w;
  scene->image_h = h;
  scene->image_w = w;
  scene->image.assign(size_t(h) * w * 3, 0.0);
  std::uniform_real_distribution<double> uni(-1.0, 1.0);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double g = 0.35 + 0.06 * uni(rng);
      for (int c = 0; c < 3; ++c)
        scene->image[(size_t(y) * w + x) * 3 + c] = g + 0.02 * uni(rng);
    }

  // far to near so closer boxes paint over
  std::vector<int> order(scene->gt_boxes.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    return scene->gt_boxes[a].cx > scene->gt_boxes[b].cx;
  });
  for (int oi : order) {
    const Box3D& b = scene->gt_boxes[oi];
    std::vector<std::array<double, 2>> pts;
    bool ok = true;
    for (const auto& c : geometry::box_corners(b)) {
      double u, v;
      if (!project_point(scene->projection, {c[0], c[1], c[2]}, &u, &v)) {
        ok = false;
        break;
      }
      pts.push_back({u, v});
    }
    if (!ok) continue;
    const auto hull = convex_hull(pts);
    const auto color = class_color(scene->gt_labels[oi]);
    const double shade = 0.85 + 0.15 * uni(rng);
    double lo_u = 1e30, lo_v = 1e30, hi_u = -1e30, hi_v = -1e30;
    for (const auto& p : hull) {
      lo_u = std::min(lo_u, p[0]);
      hi_u = std::max(hi_u, p[0]);
      lo_v = std::min(lo_v, p[1]);
      hi_v = std::max(hi_v, p[1]);
    }
    for (int y = std::max(0, int(std::floor(lo_v)));
         y <= std::min(h - 1, int(std::ceil(hi_v))); ++y)
      for (int x = std::max(0, int(std::floor(lo_u)));
           x <= std::min(w - 1, int(std::ceil(hi_u))); ++x) {
        if (!inside_hull(hull, x + 0.5, y + 0.5)) continue;
        for (int c = 0; c < 3; ++c)
          scene->image[(size_t(y) * w + x) * 3 + c] =
              std::clamp(color[c] * shade + 0.02 * uni(rng), 0.0, 1.0);
      }
  }
}

Scene generate_scene(const GeneratorConfig& cfg, std::mt19937_64& rng,
                     int scene_id) {
  Scene scene;
  scene.id = scene_id;
  scene.projection = make_projection(cfg.focal, cfg.focal, cfg.image_w / 2.0,
                                     cfg.image_h / 2.0);
  std::uniform_real_distribution<double> uni01(0.0, 1.0);
  std::uniform_int_distribution<int> cls_pick(0, cfg.num_classes - 1);
  std::uniform_int_distribution<int> count_pick(cfg.min_objects,
                                                cfg.max_objects);
  std::normal_distribution<double> gauss(0.0, 1.0);

  const int n_objects = count_pick(rng);
  for (int obj = 0; obj < n_objects; ++obj) {
    bool placed = false;
    for (int attempt = 0; attempt < cfg.placement_attempts && !placed;
         ++attempt) {
      const int label = cls_pick(rng);
      const auto base = canonical_size(cfg, label);
      double size[3];
      for (int k = 0; k < 3; ++k)
        size[k] = base[k] * (1.0 + cfg.size_jitter * (2 * uni01(rng) - 1));
      // half range only: a box rotated by pi is the same box, and a unique
      // canonical yaw keeps the regression target well defined
      const double yaw = 0.5 * kPi * (2 * uni01(rng) - 1);
      const double r = 0.5 * std::hypot(size[0], size[1]);
      const double xlo = std::max(cfg.range_min.x() + r, 2.5);
      const double xhi = cfg.range_max.x() - r - 0.1;
      if (xhi <= xlo) continue;
      const double cx = xlo + (xhi - xlo) * uni01(rng);
      const double ymax = std::min(cfg.range_max.y() - r - 0.1, 0.45 * cx);
      const double ymin = std::max(cfg.range_min.y() + r, -0.45 * cx);
      if (ymax <= ymin) continue;
      const double cy = ymin + (ymax - ymin) * uni01(rng);
      const double ground = 0.15 * (2 * uni01(rng) - 1);
      const double cz = ground + size[2] / 2;
      Box3D box;
      try {
        box = Box3D(cx, cy, cz, size[0], size[1], size[2], yaw);
      } catch (const std::invalid_argument&) {
        continue;
      }
      if (!box_in_range(box, cfg)) continue;
      if (!center_visible(scene.projection, box, cfg.image_h, cfg.image_w))
        continue;
      bool overlaps = false;
      for (const auto& other : scene.gt_boxes)
        if (geometry::iou_bev(box, other) > cfg.max_overlap_bev_iou) {
          overlaps = true;
          break;
        }
      if (overlaps) continue;
      scene.gt_boxes.push_back(box);
      scene.gt_labels.push_back(label);
      placed = true;
    }
    if (!placed)
      throw std::runtime_error(
          "generate_scene: unsatisfiable placement after " +
          std::to_string(cfg.placement_attempts) + " attempts");
  }

  // points: per-object surface + interior samples, then ground clutter
  std::vector<Eigen::Vector4d> pts;
  for (size_t oi = 0; oi < scene.gt_boxes.size(); ++oi) {
    const Box3D& b = scene.gt_boxes[oi];
    const double c = std::cos(b.yaw), s = std::sin(b.yaw);
    const double base_int =
        std::clamp(0.35 + 0.18 * scene.gt_labels[oi], 0.0, 0.9);
    auto emit = [&](double bx, double by, double bz, bool jitter) {
      double wx = b.cx + c * bx - s * by;
      double wy = b.cy + s * bx + c * by;
      double wz = b.cz + bz;
      if (jitter) {
        wx += cfg.point_noise * gauss(rng);
        wy += cfg.point_noise * gauss(rng);
        wz += cfg.point_noise * gauss(rng);
      }
      const double inten =
          std::clamp(base_int + 0.05 * (2 * uni01(rng) - 1), 0.0, 1.0);
      pts.emplace_back(wx, wy, wz, inten);
    };
    const int n_surface =
        std::max(0, cfg.points_per_object - cfg.interior_points);
    const double hl = b.l / 2, hw = b.w / 2, hh = b.h / 2;
    const double areas[3] = {b.w * b.h, b.l * b.h, b.l * b.w};  // x, y, z faces
    const double total = 2 * (areas[0] + areas[1] + areas[2]);
    for (int i = 0; i < n_surface; ++i) {
      double pick = uni01(rng) * total;
      int axis = 0;
      for (; axis < 3; ++axis) {
        if (pick < 2 * areas[axis]) break;
        pick -= 2 * areas[axis];
      }
      const double sign = pick < areas[axis] ? 1.0 : -1.0;
      const double a = 2 * uni01(rng) - 1, bb = 2 * uni01(rng) - 1;
      double p[3];
      p[axis] = sign;
      p[(axis + 1) % 3] = a;
      p[(axis + 2) % 3] = bb;
      emit(0.99 * p[0] * hl, 0.99 * p[1] * hw, 0.99 * p[2] * hh, true);
    }
    for (int i = 0; i < cfg.interior_points; ++i)
      emit(0.8 * hl * (2 * uni01(rng) - 1), 0.8 * hw * (2 * uni01(rng) - 1),
           0.8 * hh * (2 * uni01(rng) - 1), false);
  }
  for (int i = 0; i < cfg.clutter_points; ++i) {
    const double x = cfg.range_min.x() +
                     (cfg.range_max.x() - cfg.range_min.x()) * uni01(rng);
    const double y = cfg.range_min.y() +
                     (cfg.range_max.y() - cfg.range_min.y()) * uni01(rng);
    const double z = 0.1 * (2 * uni01(rng) - 1);
    pts.emplace_back(x, y, z, 0.05 + 0.25 * uni01(rng));
  }
  if (pts.empty()) pts.emplace_back(1.0, 0.0, 0.0, 0.1);
  scene.points.resize(int(pts.size()), 4);
  for (size_t i = 0; i < pts.size(); ++i)
    scene.points.row(int(i)) = pts[i].transpose();

  render_image(&scene, cfg, rng);
  return scene;
}

std::vector<Scene> generate_scenes(const GeneratorConfig& cfg,
                                   std::uint64_t seed, int count,
                                   int first_id) {
  std::vector<Scene> out;
  out.reserve(count);
  for (int i = 0; i < count; ++i) {
    const int id = first_id + i;
    std::mt19937_64 rng(seed * 0x9E3779B97F4A7C15ULL + std::uint64_t(id) + 1);
    out.push_back(generate_scene(cfg, rng, id));
  }
  return out;
}

Scene augment_scene(const Scene& scene, const GeneratorConfig& cfg,
                    const AugmentConfig& aug, std::mt19937_64& rng) {
  if (!aug.enabled) return scene;
  std::uniform_real_distribution<double> uni01(0.0, 1.0);
  Scene out = scene;
  const bool flip = uni01(rng) < aug.flip_prob;
  const double dyaw = aug.max_yaw * (2 * uni01(rng) - 1);

  if (flip) {
    out.points.col(1) = -out.points.col(1).eval();
    for (auto& b : out.gt_boxes) {
      b.cy = -b.cy;
      b.yaw = canonical_yaw(-b.yaw);
    }
  }

  Scene rotated = out;
  const double c = std::cos(dyaw), s = std::sin(dyaw);
  for (int i = 0; i < rotated.points.rows(); ++i) {
    const double x = rotated.points(i, 0), y = rotated.points(i, 1);
    rotated.points(i, 0) = c * x - s * y;
    rotated.points(i, 1) = s * x + c * y;
  }
  bool valid = true;
  for (auto& b : rotated.gt_boxes) {
    const double x = b.cx, y = b.cy;
    b.cx = c * x - s * y;
    b.cy = s * x + c * y;
    b.yaw = canonical_yaw(b.yaw + dyaw);
    if (!box_in_range(b, cfg) ||
        !center_visible(rotated.projection, b, cfg.image_h, cfg.image_w)) {
      valid = false;
      break;
    }
  }
  if (valid) out = std::move(rotated);

  // flips and rotations can push clutter or surface points outside the
  // configured range; drop those rows so downstream stages never see them
  std::vector<int> keep;
  keep.reserve(out.points.rows());
  for (int i = 0; i < out.points.rows(); ++i) {
    bool inside = true;
    for (int k = 0; k < 3; ++k)
      if (out.points(i, k) < cfg.range_min[k] ||
          out.points(i, k) >= cfg.range_max[k])
        inside = false;
    if (inside) keep.push_back(i);
  }
  if (int(keep.size()) < out.points.rows()) {
    Mat filtered(int(keep.size()), out.points.cols());
    for (int i = 0; i < int(keep.size()); ++i)
      filtered.row(i) = out.points.row(keep[i]);
    out.points = std::move(filtered);
  }
  render_image(&out, cfg, rng);
  return out;
}

}  // namespace difdet::data
