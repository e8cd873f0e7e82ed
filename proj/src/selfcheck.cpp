#include "difdet/selfcheck.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <random>
#include <sstream>

#include "difdet/geometry.hpp"
#include "difdet/matching.hpp"
#include "difdet/model.hpp"
#include "difdet/pipeline.hpp"
#include "difdet/scene_gen.hpp"

namespace difdet::selfcheck {

double monte_carlo_iou(const Box3D& a, const Box3D& b, int samples,
                       std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  const double cb = std::cos(b.yaw), sb = std::sin(b.yaw);
  const double ca = std::cos(a.yaw), sa = std::sin(a.yaw);
  int hits = 0;
  for (int i = 0; i < samples; ++i) {
    // uniform point inside box a, then test membership in box b
    const double bx = u(rng) * a.l, by = u(rng) * a.w, bz = u(rng) * a.h;
    const double wx = a.cx + ca * bx - sa * by;
    const double wy = a.cy + sa * bx + ca * by;
    const double wz = a.cz + bz;
    const double dx = wx - b.cx, dy = wy - b.cy, dz = wz - b.cz;
    const double px = cb * dx + sb * dy;
    const double py = -sb * dx + cb * dy;
    if (std::abs(px) <= 0.5 * b.l && std::abs(py) <= 0.5 * b.w &&
        std::abs(dz) <= 0.5 * b.h)
      ++hits;
  }
  const double va = a.l * a.w * a.h, vb = b.l * b.w * b.h;
  const double inter = va * double(hits) / samples;
  return inter / (va + vb - inter);
}

SuiteResult check_iou_monte_carlo(int pairs, int samples, double tol,
                                  std::uint64_t seed) {
  SuiteResult r{"iou_monte_carlo", true, ""};
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> center(-1.0, 1.0);
  std::uniform_real_distribution<double> size(0.5, 2.5);
  std::uniform_real_distribution<double> yaw(-kPi, kPi);
  double worst = 0.0;
  for (int i = 0; i < pairs; ++i) {
    const Box3D a(center(rng), center(rng), center(rng), size(rng), size(rng),
                  size(rng), yaw(rng));
    const Box3D b(center(rng), center(rng), center(rng), size(rng), size(rng),
                  size(rng), yaw(rng));
    const double exact = geometry::iou_3d(a, b);
    const double mc = monte_carlo_iou(a, b, samples, seed + 1 + i);
    worst = std::max(worst, std::abs(exact - mc));
  }
  // unit cubes rotated 45 degrees about the shared center
  const Box3D c1(0, 0, 0, 1, 1, 1, 0);
  const Box3D c2(0, 0, 0, 1, 1, 1, kPi / 4);
  const double rot = geometry::iou_3d(c1, c2);
  const double rot_expected = 1.0 / std::sqrt(2.0);
  std::ostringstream os;
  os << "max |exact - MC| = " << worst << " (tol " << tol
     << "); 45-degree case = " << rot << " (expected " << rot_expected << ")";
  r.detail = os.str();
  r.passed = worst < tol && std::abs(rot - rot_expected) < 1e-3;
  return r;
}

double brute_force_min_cost(const Mat& cost) {
  const int n = int(cost.rows()), m = int(cost.cols());
  const bool transpose = n < m;
  const int rows = transpose ? m : n, cols = transpose ? n : m;
  auto at = [&](int i, int j) { return transpose ? cost(j, i) : cost(i, j); };
  // choose `cols` distinct rows and try every ordering
  std::vector<int> rs(rows);
  for (int i = 0; i < rows; ++i) rs[i] = i;
  double best = std::numeric_limits<double>::infinity();
  std::vector<int> pick(cols);
  std::vector<bool> used(rows, false);
  std::function<void(int, double)> rec = [&](int j, double acc) {
    if (acc >= best) return;
    if (j == cols) {
      best = acc;
      return;
    }
    for (int i = 0; i < rows; ++i) {
      if (used[i]) continue;
      used[i] = true;
      rec(j + 1, acc + at(i, j));
      used[i] = false;
    }
  };
  rec(0, 0.0);
  return best;
}

SuiteResult check_hungarian_bruteforce(int trials, std::uint64_t seed) {
  SuiteResult r{"hungarian_bruteforce", true, ""};
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> small(1, 7);
  std::uniform_int_distribution<int> large(1, 8);
  std::uniform_real_distribution<double> val(0.0, 10.0);
  int mismatches = 0;
  for (int trial = 0; trial < trials; ++trial) {
    int n = large(rng), m = small(rng);
    if (trial % 2 == 0) std::swap(n, m);
    Mat cost(n, m);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < m; ++j) cost(i, j) = val(rng);
    const matching::Assignment a = matching::hungarian_match(cost);
    double total = 0.0;
    for (const auto& [pi, gj] : a.pairs) total += cost(pi, gj);
    const double oracle = brute_force_min_cost(cost);
    if (int(a.pairs.size()) != std::min(n, m) ||
        std::abs(total - oracle) > 1e-9)
      ++mismatches;
  }
  std::ostringstream os;
  os << mismatches << " mismatches over " << trials << " random matrices";
  r.detail = os.str();
  r.passed = mismatches == 0;
  return r;
}

namespace {

config::RunConfig tiny_config() {
  config::RunConfig cfg;
  cfg.data.num_classes = 2;
  cfg.data.image_h = 16;
  cfg.data.image_w = 16;
  cfg.data.focal = 12.0;
  cfg.data.voxel_size = {2.0, 2.0, 2.0};
  cfg.data.points_per_object = 40;
  cfg.data.clutter_points = 40;
  cfg.data.max_objects = 2;
  cfg.model.d_model = 16;
  cfg.model.heads = 2;
  cfg.model.head_dim = 8;
  cfg.model.image_channels = 8;
  cfg.model.bev_channels = 8;
  cfg.model.roi_grid = 3;
  cfg.model.head_hidden = 16;
  // a single refinement round keeps the loss differentiable end to end;
  // later rounds re-pool at predicted boxes whose pooling coordinates are
  // deliberately treated as constants
  cfg.model.head_rounds = 1;
  cfg.train.proposals = 4;
  return cfg;
}

}  // namespace

SuiteResult check_gradients(std::uint64_t seed) {
  SuiteResult r{"gradient_check", true, ""};
  config::RunConfig cfg = tiny_config();
  cfg.model.seed = seed;
  model::Model m(cfg);
  std::mt19937_64 rng(seed);
  const Scene scene = data::generate_scene(cfg.generator_config(), rng, 0);

  const Mat u_p = diffusion::clamp_signal(
      diffusion::gaussian_matrix(cfg.train.proposals, 7, rng), 1.0);
  const Mat u_i = diffusion::clamp_signal(
      diffusion::gaussian_matrix(cfg.train.proposals, 7, rng), 1.0);
  const int t = 500;

  // assignment frozen once so the objective is smooth in the parameters
  std::vector<std::pair<int, int>> pairs;
  {
    auto enc = m.encode(scene);
    auto dec = m.decode(enc, u_p, u_i, t);
    const matching::CostMatrix cost = matching::build_cost_matrix(
        dec.boxes_signal.val(), dec.cls_probs.val(), scene.gt_boxes,
        scene.gt_labels, cfg.loss_weights(), m.normalizer());
    pairs = matching::hungarian_match(cost).pairs;
  }
  auto eval_loss = [&]() {
    auto enc = m.encode(scene);
    auto dec = m.decode(enc, u_p, u_i, t);
    return m.loss(dec, scene.gt_boxes, scene.gt_labels, pairs)
        .breakdown.total;
  };

  m.params().zero_grad();
  {
    auto enc = m.encode(scene);
    auto dec = m.decode(enc, u_p, u_i, t);
    auto loss = m.loss(dec, scene.gt_boxes, scene.gt_labels, pairs);
    enc.graph->backward(loss.total.id);
  }

  double worst = 0.0;
  std::string worst_name;
  std::mt19937_64 pick(seed + 1);
  for (nn::Param* p : m.params().all()) {
    const Mat analytic = p->grad;
    std::uniform_int_distribution<int> ri(0, int(p->value.rows()) - 1);
    std::uniform_int_distribution<int> ci(0, int(p->value.cols()) - 1);
    for (int k = 0; k < 3; ++k) {
      const int i = ri(pick), j = ci(pick);
      const double numeric = nn::finite_diff(*p, i, j, 1e-5, eval_loss);
      const double a = analytic(i, j);
      const double rel = std::abs(a - numeric) /
                         std::max({std::abs(a), std::abs(numeric), 1e-4});
      if (rel > worst) {
        worst = rel;
        worst_name = p->name;
      }
    }
  }
  std::ostringstream os;
  os << "max relative error " << worst << " (at " << worst_name
     << "), tolerance 1e-3";
  r.detail = os.str();
  r.passed = worst < 1e-3;
  return r;
}

std::vector<SuiteResult> run_all() {
  return {check_iou_monte_carlo(), check_hungarian_bruteforce(),
          check_gradients()};
}

}  // namespace difdet::selfcheck
