// Acceptance gate: runs the ten release criteria end to end and prints one
// PASS/FAIL line per criterion. Exits nonzero if any criterion fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "difdet/evaluation.hpp"
#include "difdet/kitti_io.hpp"
#include "difdet/losses.hpp"
#include "difdet/pipeline.hpp"
#include "difdet/selfcheck.hpp"

using namespace difdet;
namespace fs = std::filesystem;

namespace {

int failures = 0;

void report(int index, const std::string& name, bool passed,
            const std::string& detail) {
  std::printf("%s: %2d %s (%s)\n", passed ? "PASS" : "FAIL", index,
              name.c_str(), detail.c_str());
  std::fflush(stdout);
  if (!passed) ++failures;
}

double now_s() {
  using clock = std::chrono::steady_clock;
  static const clock::time_point origin = clock::now();
  return std::chrono::duration<double>(clock::now() - origin).count();
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.4g", v);
  return buf;
}

// ---------------------------------------------------------------- criterion 1
void criterion_geometry() {
  const auto r = selfcheck::check_iou_monte_carlo(100, 1000000, 0.01, 7);
  report(1, "rotated IoU vs Monte-Carlo oracle", r.passed, r.detail);
}

// ---------------------------------------------------------------- criterion 2
void criterion_matching() {
  const auto r = selfcheck::check_hungarian_bruteforce(1000, 11);
  report(2, "Hungarian vs exhaustive search", r.passed, r.detail);
}

// ---------------------------------------------------------------- criterion 3
void criterion_diffusion() {
  const auto s = diffusion::make_schedule(diffusion::ScheduleKind::kCosine,
                                          1000);
  bool ok = true;
  std::string detail;
  std::mt19937_64 rng(29);
  const double u0v = 0.8;
  Mat u0(1, 1);
  u0 << u0v;
  const int draws = 100000;
  for (const int t : {10, 500, 990}) {
    double sum = 0, sumsq = 0;
    for (int i = 0; i < draws; ++i) {
      const double x =
          diffusion::corrupt(u0, t, diffusion::gaussian_matrix(1, 1, rng),
                             s)(0, 0);
      sum += x;
      sumsq += x * x;
    }
    const double mean = sum / draws;
    const double var = sumsq / draws - mean * mean;
    const double em = std::sqrt(s.alpha_bar[t]) * u0v;
    const double ev = 1.0 - s.alpha_bar[t];
    const double mean_bound = 3.0 * std::sqrt(ev / draws);
    const double var_bound = 3.0 * ev * std::sqrt(2.0 / draws);
    if (std::abs(mean - em) > mean_bound || std::abs(var - ev) > var_bound) {
      ok = false;
      detail += " t=" + std::to_string(t) + " out of bounds;";
    }
  }
  // perfect-oracle DDIM over several step subsequences
  double worst = 0;
  const Mat clean = diffusion::gaussian_matrix(6, 7, rng);
  for (const int d : {1, 2, 4, 8, 50, 1000}) {
    Mat u = diffusion::gaussian_matrix(6, 7, rng);
    const auto ts = diffusion::ddim_timesteps(1000, d);
    for (size_t i = 0; i < ts.size(); ++i)
      u = diffusion::ddim_step(u, clean, ts[i],
                               i + 1 < ts.size() ? ts[i + 1] : -1, s);
    worst = std::max(worst, (u - clean).cwiseAbs().maxCoeff());
  }
  if (worst >= 1e-5) {
    ok = false;
    detail += " oracle recovery error " + fmt(worst) + ";";
  }
  if (ok)
    detail = "moments in 3-sigma bounds at t=10/500/990; oracle recovery " +
             fmt(worst);
  report(3, "forward corruption statistics and DDIM recovery", ok, detail);
}

// ---------------------------------------------------------------- criterion 4
void criterion_gradients() {
  const double t0 = now_s();
  const auto r = selfcheck::check_gradients(3);
  std::string detail = r.detail + ", " + fmt(now_s() - t0) + "s";
  report(4, "end-to-end analytic gradients vs finite differences",
         r.passed && now_s() - t0 < 300.0, detail);
}

// ---------------------------------------------------------------- criterion 5
void criterion_focal() {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0.01, 0.99);
  std::bernoulli_distribution coin(0.5);
  double worst = 0;
  for (int i = 0; i < 1000; ++i) {
    Mat probs(2, 3), targets(2, 3);
    double ce = 0;
    for (int r = 0; r < 2; ++r)
      for (int c = 0; c < 3; ++c) {
        probs(r, c) = u(rng);
        targets(r, c) = coin(rng) ? 1.0 : 0.0;
        ce -= targets(r, c) * std::log(probs(r, c)) +
              (1 - targets(r, c)) * std::log(1 - probs(r, c));
      }
    worst = std::max(worst,
                     std::abs(losses::focal_loss(probs, targets, 0.0) -
                              ce / 2.0));
  }
  Mat p(1, 1), t(1, 1);
  p << 0.9;
  t << 1.0;
  const double worked =
      std::abs(losses::focal_loss(p, t, 2.0) - (-0.01 * std::log(0.9)));
  const bool ok = worst < 1e-9 && worked < 1e-9;
  report(5, "focal loss identities", ok,
         "BCE deviation " + fmt(worst) + ", worked value deviation " +
             fmt(worked));
}

// --------------------------------------------------------- criteria 6, 7, 8
struct TrainedArm {
  model::Model* model = nullptr;
  double wall_s = 0;
};

void criteria_training() {
  const double t0 = now_s();

  config::RunConfig cfg;  // defaults
  cfg.train.max_steps = 2000;
  cfg.train.epochs = 1 << 20;  // bounded by max_steps
  const auto gen = cfg.generator_config();
  const auto train_scenes = data::generate_scenes(gen, 0, 20);
  const auto held_out = data::generate_scenes(gen, 1234, 50, 1000);

  const fs::path out = fs::temp_directory_path() / "difdet_acceptance";
  fs::remove_all(out);

  // full model, trained once and reused by criteria 6, 7 and 8
  model::Model full(cfg);
  pipeline::train(full, train_scenes, {}, (out / "full").string());
  const double train_wall = now_s() - t0;

  auto eval_model = [&](model::Model& m, const std::vector<Scene>& scenes,
                        std::uint64_t seed, double* wall_s = nullptr) {
    std::vector<DetectionOutput> dets;
    std::vector<const Scene*> refs;
    const double t_start = now_s();
    for (const Scene& s : scenes) {
      dets.push_back(pipeline::infer(m, s, pipeline::mix_seed(seed, s.id)));
      refs.push_back(&s);
    }
    if (wall_s) *wall_s = now_s() - t_start;
    return eval::evaluate(dets, refs, cfg.data.num_classes,
                          cfg.eval.iou_threshold, cfg.eval.interp_points);
  };

  // 6: overfit on the training set with default inference settings
  {
    const auto r = eval_model(full, train_scenes, 0);
    const bool ok = r.map_3d >= 0.8 && r.map_bev >= 0.85 &&
                    train_wall <= 1800.0;
    report(6, "overfit run reaches training mAP targets", ok,
           "mAP_3D " + fmt(r.map_3d) + " (>= 0.8), mAP_BEV " +
               fmt(r.map_bev) + " (>= 0.85), train wall " + fmt(train_wall) +
               "s (<= 1800)");
  }

  // 7: sampler-step and proposal-count trends on held-out scenes
  {
    auto mean_map = [&](int d_steps, int proposals, double* wall_avg) {
      auto c2 = cfg;
      c2.infer.d_steps = d_steps;
      c2.infer.proposals = proposals;
      model::Model probe(c2);
      pipeline::load_checkpoint((out / "full" / "last.ckpt").string(), &probe);
      double acc = 0, wall = 0;
      for (const std::uint64_t seed : {1, 2, 3}) {
        double w = 0;
        acc += eval_model(probe, held_out, seed, &w).map_3d;
        wall += w;
      }
      if (wall_avg) *wall_avg = wall / 3.0;
      return acc / 3.0;
    };
    double wall_d1 = 0, wall_d8 = 0;
    const double m_d1 = mean_map(1, 300, &wall_d1);
    const double m_d4 = mean_map(4, 300, nullptr);
    const double m_d8 = mean_map(8, 300, &wall_d8);
    const double m_p100 = mean_map(4, 100, nullptr);
    const double ratio = wall_d8 / wall_d1;
    const bool ok = m_d4 >= m_d1 - 0.02 && m_d4 >= m_p100 - 0.02 &&
                    ratio >= 4.0 && ratio <= 12.0;
    report(7, "sampler-step and proposal-count trends", ok,
           "mAP_3D D1 " + fmt(m_d1) + ", D4 " + fmt(m_d4) + ", D8 " +
               fmt(m_d8) + "; 100 props " + fmt(m_p100) + ", 300 props " +
               fmt(m_d4) + "; wall D8/D1 " + fmt(ratio) + " (in [4, 12])");
  }

  // 8: image branch ablation must not beat the full model by > 0.02
  {
    auto c2 = cfg;
    c2.model.image_branch = false;
    c2.model.encoder_fusion = false;
    model::Model ablated(c2);
    pipeline::train(ablated, train_scenes, {}, (out / "no_image").string());
    const double full_map = eval_model(full, held_out, 1).map_3d;
    const double abl_map = eval_model(ablated, held_out, 1).map_3d;
    const bool ok = abl_map <= full_map + 0.02;
    report(8, "image-fusion ablation trend", ok,
           "held-out mAP_3D full " + fmt(full_map) + ", without image " +
               fmt(abl_map) + " (<= full + 0.02)");
  }
  fs::remove_all(out);
}

// ---------------------------------------------------------------- criterion 9
void criterion_determinism() {
  bool ok = true;
  std::string detail;

  config::RunConfig cfg;
  cfg.data.num_classes = 2;
  cfg.data.image_h = 16;
  cfg.data.image_w = 16;
  cfg.data.focal = 12.0;
  cfg.data.voxel_size = {2.0, 2.0, 2.0};
  cfg.data.max_objects = 2;
  cfg.model.d_model = 16;
  cfg.model.heads = 2;
  cfg.model.head_dim = 8;
  cfg.model.image_channels = 8;
  cfg.model.bev_channels = 8;
  cfg.model.roi_grid = 3;
  cfg.model.head_hidden = 16;
  cfg.train.proposals = 8;
  cfg.infer.proposals = 8;
  cfg.infer.d_steps = 2;
  const auto scenes = data::generate_scenes(cfg.generator_config(), 3, 2);
  std::vector<const Scene*> batch = {&scenes[0], &scenes[1]};

  // bitwise-identical training under identical seeds
  model::Model m1(cfg), m2(cfg);
  std::mt19937_64 r1(5), r2(5);
  for (int i = 0; i < 3; ++i) {
    pipeline::train_step(m1, batch, r1);
    pipeline::train_step(m2, batch, r2);
  }
  const auto p1 = m1.params().all(), p2 = m2.params().all();
  for (size_t i = 0; i < p1.size(); ++i)
    if (p1[i]->value != p2[i]->value) ok = false;
  if (!ok) detail += "training diverged under identical seeds; ";

  // inference is bitwise reproducible and survives a checkpoint round trip
  const auto d1 = pipeline::infer(m1, scenes[0], 7);
  const auto d2 = pipeline::infer(m1, scenes[0], 7);
  const fs::path ck = fs::temp_directory_path() / "difdet_accept_det.ckpt";
  pipeline::save_checkpoint(ck.string(), m1, 0, 3);
  model::Model m3(cfg);
  pipeline::load_checkpoint(ck.string(), &m3);
  const auto d3 = pipeline::infer(m3, scenes[0], 7);
  fs::remove(ck);
  if (d1.boxes.size() != d2.boxes.size() ||
      d1.boxes.size() != d3.boxes.size()) {
    ok = false;
    detail += "detection counts differ; ";
  } else {
    for (size_t i = 0; i < d1.boxes.size(); ++i) {
      if (d1.boxes[i].as_vector() != d2.boxes[i].as_vector() ||
          d1.boxes[i].as_vector() != d3.boxes[i].as_vector() ||
          d1.scores[i] != d2.scores[i] || d1.scores[i] != d3.scores[i]) {
        ok = false;
        detail += "detections differ; ";
        break;
      }
    }
  }

  // label serialization round trip at two decimals
  std::mt19937_64 rng(19);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  int mismatches = 0;
  for (int i = 0; i < 1000; ++i) {
    data::KittiRecord rec;
    rec.type = "Car";
    rec.truncated = std::round(u(rng) * 100) / 100;
    rec.occluded = int(rng() % 3);
    rec.alpha = std::round((-3.0 + 6.0 * u(rng)) * 100) / 100;
    for (int k = 0; k < 4; ++k) rec.bbox[k] = std::round(u(rng) * 50000) / 100;
    rec.box = Box3D(std::round((u(rng) * 40 - 20) * 100) / 100,
                    std::round((u(rng) * 4 - 2) * 100) / 100,
                    std::round((u(rng) * 40 + 2) * 100) / 100,
                    0.5 + std::round(u(rng) * 300) / 100,
                    0.5 + std::round(u(rng) * 300) / 100,
                    0.5 + std::round(u(rng) * 300) / 100,
                    std::round((-3.0 + 6.0 * u(rng)) * 100) / 100);
    const auto back = data::parse_kitti_label(data::serialize_record(rec));
    const bool same =
        back.type == rec.type && std::abs(back.truncated - rec.truncated) < 5e-3 &&
        back.occluded == rec.occluded && std::abs(back.alpha - rec.alpha) < 5e-3 &&
        std::abs(back.box.cx - rec.box.cx) < 5e-3 &&
        std::abs(back.box.cy - rec.box.cy) < 1.5e-2 &&
        std::abs(back.box.cz - rec.box.cz) < 5e-3 &&
        std::abs(back.box.l - rec.box.l) < 5e-3 &&
        std::abs(back.box.w - rec.box.w) < 5e-3 &&
        std::abs(back.box.h - rec.box.h) < 5e-3 &&
        std::abs(wrap_angle(back.box.yaw - rec.box.yaw)) < 5e-3;
    if (!same) ++mismatches;
  }
  if (mismatches > 0) {
    ok = false;
    detail += std::to_string(mismatches) + " label round-trip mismatches; ";
  }
  if (ok) detail = "training, inference and checkpoints bitwise; labels exact";
  report(9, "determinism and round trips", ok, detail);
}

// --------------------------------------------------------------- criterion 10
void criterion_voxel_grid() {
  data::VoxelRange r;
  r.min = Eigen::Vector3d(2.0, -30.08, -3.0);
  r.max = Eigen::Vector3d(46.8, 30.08, 1.0);
  r.voxel_size = Eigen::Vector3d(0.16, 0.16, 0.16);
  const auto dims = r.grid_dims();
  const bool ok = dims == std::array<int, 3>{280, 376, 25};
  report(10, "reference voxel grid dimensions", ok,
         std::to_string(dims[0]) + " x " + std::to_string(dims[1]) + " x " +
             std::to_string(dims[2]));
}

}  // namespace

int main() {
  criterion_geometry();
  criterion_matching();
  criterion_diffusion();
  criterion_gradients();
  criterion_focal();
  criteria_training();
  criterion_determinism();
  criterion_voxel_grid();
  std::printf("%d of 10 criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
