#include "difdet/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "difdet/geometry.hpp"
#include "difdet/matching.hpp"
#include "difdet/scene_gen.hpp"

namespace difdet::pipeline {

namespace fs = std::filesystem;

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t index) {
  std::uint64_t z = seed + index * 0x9E3779B97F4A7C15ULL + 0x9E3779B97F4A7C15ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

losses::LossBreakdown train_step(model::Model& m,
                                 const std::vector<const Scene*>& batch,
                                 std::mt19937_64& rng) {
  if (batch.empty()) throw std::invalid_argument("train_step: empty batch");
  const auto& cfg = m.cfg();
  const auto& norm = m.normalizer();
  const auto& sched = m.schedule();
  const int n_train = cfg.train.proposals;

  m.params().zero_grad();
  losses::LossBreakdown avg;
  for (const Scene* scene : batch) {
    auto enc = m.encode(*scene);
    Mat gt_signal = scene->gt_boxes.empty()
                        ? Mat(0, 7)
                        : norm.normalize_all(scene->gt_boxes);
    auto [padded, pad_mask] =
        diffusion::pad_ground_truth(gt_signal, n_train, rng);
    (void)pad_mask;
    std::uniform_int_distribution<int> pick_t(0, sched.steps - 1);
    const int t = pick_t(rng);
    // distinct noisy box sets per branch: independent draws, shared t
    const Mat u_p = diffusion::clamp_signal(
        diffusion::corrupt(padded, t,
                           diffusion::gaussian_matrix(n_train, 7, rng), sched,
                           cfg.diffusion.paper_literal_noise),
        norm.signal_scale);
    const Mat u_i = diffusion::clamp_signal(
        diffusion::corrupt(padded, t,
                           diffusion::gaussian_matrix(n_train, 7, rng), sched,
                           cfg.diffusion.paper_literal_noise),
        norm.signal_scale);
    auto dec = m.decode(enc, u_p, u_i, t, cfg.train.dropout, &rng);

    // every refinement round is supervised with its own matching, so each
    // round learns to improve whatever boxes it was handed
    std::vector<const model::Model::Decoded*> stages;
    for (const auto& r : dec.rounds) stages.push_back(&r);
    stages.push_back(&dec);
    const double inv_s = 1.0 / double(stages.size());
    nn::Var total;
    losses::LossBreakdown scene_bd;
    for (const model::Model::Decoded* stage : stages) {
      std::vector<std::pair<int, int>> pairs;
      if (!scene->gt_boxes.empty()) {
        const matching::CostMatrix cost = matching::build_cost_matrix(
            stage->boxes_signal.val(), stage->cls_probs.val(),
            scene->gt_boxes, scene->gt_labels, cfg.loss_weights(), norm);
        const matching::Assignment assign =
            cfg.train.matcher == "hungarian"
                ? matching::hungarian_match(cost)
                : matching::ota_assign(cost, cfg.train.ota_k);
        pairs = assign.pairs;
      }
      auto loss = m.loss(*stage, scene->gt_boxes, scene->gt_labels, pairs);
      if (!std::isfinite(loss.breakdown.total))
        throw std::runtime_error("non-finite loss at scene " +
                                 std::to_string(scene->id) + ", t=" +
                                 std::to_string(t));
      total = total.g == nullptr ? nn::scale(loss.total, inv_s)
                                 : nn::add(total, nn::scale(loss.total, inv_s));
      scene_bd.cls += loss.breakdown.cls * inv_s;
      scene_bd.l1 += loss.breakdown.l1 * inv_s;
      scene_bd.giou += loss.breakdown.giou * inv_s;
      scene_bd.center += loss.breakdown.center * inv_s;
      scene_bd.total += loss.breakdown.total * inv_s;
      scene_bd.matched_pairs = loss.breakdown.matched_pairs;
    }
    enc.graph->backward(total.id);
    avg.cls += scene_bd.cls;
    avg.l1 += scene_bd.l1;
    avg.giou += scene_bd.giou;
    avg.center += scene_bd.center;
    avg.total += scene_bd.total;
    avg.matched_pairs += scene_bd.matched_pairs;
  }
  const double inv_b = 1.0 / double(batch.size());
  avg.cls *= inv_b;
  avg.l1 *= inv_b;
  avg.giou *= inv_b;
  avg.center *= inv_b;
  avg.total *= inv_b;
  for (nn::Param* p : m.params().all()) p->grad *= inv_b;
  m.params().adam_step(cfg.train.learning_rate, cfg.train.beta1,
                       cfg.train.beta2, 1e-8, cfg.train.grad_clip);
  return avg;
}

namespace {

double epoch_wall_clock() {
  using clock = std::chrono::steady_clock;
  static const clock::time_point origin = clock::now();
  return std::chrono::duration<double>(clock::now() - origin).count();
}

void append_log_row(const std::string& path, const TrainLogRow& row,
                    bool write_header) {
  std::ofstream out(path, write_header ? std::ios::trunc : std::ios::app);
  if (!out) throw std::runtime_error("cannot write " + path);
  if (write_header)
    out << "epoch,step,loss_total,loss_cls,loss_l1,loss_giou,loss_center,"
           "val_map_3d,val_map_bev,wall_time_s\n";
  out.precision(17);
  out << row.epoch << "," << row.step << "," << row.loss.total << ","
      << row.loss.cls << "," << row.loss.l1 << "," << row.loss.giou << ","
      << row.loss.center << "," << row.val_map_3d << "," << row.val_map_bev
      << "," << row.wall_time_s << "\n";
}

}  // namespace

TrainResult train(model::Model& m, const std::vector<Scene>& train_scenes,
                  const std::vector<Scene>& val_scenes,
                  const std::string& out_dir, const std::string& resume_path) {
  if (train_scenes.empty())
    throw std::invalid_argument("train: empty dataset");
  const auto& cfg = m.cfg();
  fs::create_directories(out_dir);
  const std::string log_path = (fs::path(out_dir) / "training_log.csv").string();
  const std::string last_path = (fs::path(out_dir) / "last.ckpt").string();
  const std::string best_path = (fs::path(out_dir) / "best.ckpt").string();

  int start_epoch = 0;
  std::int64_t global_step = 0;
  if (!resume_path.empty()) {
    const CheckpointInfo info = load_checkpoint(resume_path, &m);
    start_epoch = info.epoch;
    global_step = info.global_step;
  }

  TrainResult result;
  const data::GeneratorConfig gen_cfg = cfg.generator_config();
  data::AugmentConfig aug;
  aug.enabled = cfg.train.augment;
  aug.flip_prob = cfg.train.flip_prob;
  aug.max_yaw = cfg.train.max_aug_yaw;

  const double t0 = epoch_wall_clock();
  bool stop = false;
  for (int epoch = start_epoch; epoch < cfg.train.epochs && !stop; ++epoch) {
    std::vector<int> order(train_scenes.size());
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 order_rng(mix_seed(cfg.train.seed, 1000000 + epoch));
    std::shuffle(order.begin(), order.end(), order_rng);

    losses::LossBreakdown epoch_loss;
    int batches = 0;
    for (size_t i = 0; i < order.size() && !stop;
         i += size_t(cfg.train.batch_size)) {
      std::mt19937_64 rng(mix_seed(cfg.train.seed, std::uint64_t(global_step)));
      std::vector<Scene> owned;
      std::vector<const Scene*> batch;
      for (size_t j = i;
           j < order.size() && j < i + size_t(cfg.train.batch_size); ++j) {
        const Scene& base = train_scenes[order[j]];
        if (aug.enabled)
          owned.push_back(data::augment_scene(base, gen_cfg, aug, rng));
        else
          owned.push_back(base);
      }
      for (const Scene& s : owned) batch.push_back(&s);
      const losses::LossBreakdown loss = train_step(m, batch, rng);
      epoch_loss.cls += loss.cls;
      epoch_loss.l1 += loss.l1;
      epoch_loss.giou += loss.giou;
      epoch_loss.center += loss.center;
      epoch_loss.total += loss.total;
      ++batches;
      ++global_step;
      if (cfg.train.max_steps > 0 && global_step >= cfg.train.max_steps)
        stop = true;
    }
    const double inv = batches > 0 ? 1.0 / batches : 0.0;
    epoch_loss.cls *= inv;
    epoch_loss.l1 *= inv;
    epoch_loss.giou *= inv;
    epoch_loss.center *= inv;
    epoch_loss.total *= inv;

    TrainLogRow row;
    row.epoch = epoch;
    row.step = global_step;
    row.loss = epoch_loss;
    if (!val_scenes.empty()) {
      std::vector<DetectionOutput> dets;
      std::vector<const Scene*> refs;
      for (const Scene& s : val_scenes) {
        dets.push_back(infer(m, s, mix_seed(cfg.infer.seed, s.id)));
        refs.push_back(&s);
      }
      const eval::EvalResult ev =
          eval::evaluate(dets, refs, cfg.data.num_classes,
                         cfg.eval.iou_threshold, cfg.eval.interp_points);
      row.val_map_3d = ev.map_3d;
      row.val_map_bev = ev.map_bev;
    }
    row.wall_time_s = epoch_wall_clock() - t0;
    append_log_row(log_path, row,
                   epoch == start_epoch && resume_path.empty());
    result.log.push_back(row);
    result.steps_done = global_step;

    save_checkpoint(last_path, m, epoch + 1, global_step);
    result.last_checkpoint = last_path;
    if (row.val_map_3d > result.best_map_3d) {
      result.best_map_3d = row.val_map_3d;
      save_checkpoint(best_path, m, epoch + 1, global_step);
      result.best_checkpoint = best_path;
    }
  }
  return result;
}

Mat run_ddim(const Mat& u_T, const std::vector<int>& timesteps,
             const diffusion::DiffusionSchedule& s,
             const std::function<Mat(const Mat&, int)>& predict_x0) {
  Mat u = u_T;
  for (size_t i = 0; i < timesteps.size(); ++i) {
    const int t = timesteps[i];
    const int t_prev = i + 1 < timesteps.size() ? timesteps[i + 1] : -1;
    const Mat x0 = predict_x0(u, t);
    u = diffusion::ddim_step(u, x0, t, t_prev, s);
  }
  return u;
}

DetectionOutput infer(model::Model& m, const Scene& scene,
                      std::uint64_t seed) {
  const auto& cfg = m.cfg();
  const auto& norm = m.normalizer();
  const auto& sched = m.schedule();
  const int n = cfg.infer.proposals;
  const int nc = cfg.data.num_classes;
  std::mt19937_64 rng(seed);

  auto enc = m.encode(scene);
  Mat u_p = diffusion::gaussian_matrix(n, 7, rng);
  Mat u_i = diffusion::gaussian_matrix(n, 7, rng);
  const std::vector<int> ts =
      diffusion::ddim_timesteps(sched.steps, cfg.infer.d_steps);

  Mat probs;
  for (size_t i = 0; i < ts.size(); ++i) {
    const int t = ts[i];
    const int t_prev = i + 1 < ts.size() ? ts[i + 1] : -1;
    auto dec = m.decode(enc, u_p, u_i, t);
    const Mat x0 =
        diffusion::clamp_signal(dec.boxes_signal.val(), norm.signal_scale);
    probs = dec.cls_probs.val();
    u_p = diffusion::ddim_step(u_p, x0, t, t_prev, sched);
    u_i = diffusion::ddim_step(u_i, x0, t, t_prev, sched);
    if (cfg.train.box_renewal && t_prev != -1) {
      // replace low-confidence boxes with fresh noise between steps
      for (int r = 0; r < n; ++r) {
        if (probs.row(r).head(nc).maxCoeff() >= cfg.infer.score_threshold)
          continue;
        const Mat fresh = diffusion::gaussian_matrix(1, 7, rng);
        u_p.row(r) = fresh;
        u_i.row(r) = diffusion::gaussian_matrix(1, 7, rng);
      }
    }
  }
  const std::vector<Box3D> boxes = norm.denormalize_all(u_p);

  // score threshold, then optional class-agnostic BEV NMS
  std::vector<int> keep;
  for (int r = 0; r < n; ++r) {
    if (probs.row(r).head(nc).maxCoeff() >= cfg.infer.score_threshold)
      keep.push_back(r);
  }
  std::stable_sort(keep.begin(), keep.end(), [&](int a, int b) {
    return probs.row(a).head(nc).maxCoeff() > probs.row(b).head(nc).maxCoeff();
  });
  std::vector<int> kept;
  for (int r : keep) {
    bool suppressed = false;
    if (cfg.infer.nms) {
      for (int q : kept) {
        if (geometry::iou_bev(boxes[r], boxes[q]) > cfg.infer.nms_iou) {
          suppressed = true;
          break;
        }
      }
    }
    if (!suppressed) kept.push_back(r);
  }

  DetectionOutput out;
  out.class_probs.resize(int(kept.size()), nc + 1);
  for (size_t i = 0; i < kept.size(); ++i) {
    const int r = kept[i];
    out.boxes.push_back(boxes[r]);
    out.class_probs.row(int(i)) = probs.row(r);
    Eigen::Index label = 0;
    probs.row(r).head(nc).maxCoeff(&label);
    out.labels.push_back(int(label));
    out.scores.push_back(probs(r, label));
  }
  return out;
}

namespace {

constexpr char kMagic[4] = {'D', 'D', 'E', 'T'};
constexpr std::uint32_t kVersion = 1;

template <class T>
void write_pod(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}
template <class T>
void read_pod(std::istream& in, T* v) {
  in.read(reinterpret_cast<char*>(v), sizeof(T));
}
void write_string(std::ostream& out, const std::string& s) {
  write_pod(out, std::uint64_t(s.size()));
  out.write(s.data(), std::streamsize(s.size()));
}
std::string read_string(std::istream& in) {
  std::uint64_t len = 0;
  read_pod(in, &len);
  std::string s(len, '\0');
  in.read(s.data(), std::streamsize(len));
  return s;
}
void write_mat(std::ostream& out, const Mat& m) {
  out.write(reinterpret_cast<const char*>(m.data()),
            std::streamsize(sizeof(double) * m.size()));
}
void read_mat(std::istream& in, Mat* m) {
  in.read(reinterpret_cast<char*>(m->data()),
          std::streamsize(sizeof(double) * m->size()));
}

}  // namespace

void save_checkpoint(const std::string& path, const model::Model& m,
                     int epoch, std::int64_t global_step) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write checkpoint " + path);
  out.write(kMagic, 4);
  write_pod(out, kVersion);
  write_string(out, config::to_json_text(m.cfg()));
  write_pod(out, std::int64_t(epoch));
  write_pod(out, global_step);
  write_pod(out, m.params().step_count());
  const auto params = m.params().all();
  write_pod(out, std::uint64_t(params.size()));
  for (const nn::Param* p : params) {
    write_string(out, p->name);
    write_pod(out, std::int64_t(p->value.rows()));
    write_pod(out, std::int64_t(p->value.cols()));
    write_mat(out, p->value);
    write_mat(out, p->m);
    write_mat(out, p->v);
  }
  if (!out) throw std::runtime_error("checkpoint write failed: " + path);
}

CheckpointInfo load_checkpoint(const std::string& path, model::Model* m) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path);
  char magic[4];
  in.read(magic, 4);
  if (std::memcmp(magic, kMagic, 4) != 0)
    throw std::runtime_error("bad checkpoint magic in " + path);
  std::uint32_t version = 0;
  read_pod(in, &version);
  if (version != kVersion)
    throw std::runtime_error("unsupported checkpoint version in " + path);
  CheckpointInfo info;
  info.config_json = read_string(in);
  std::int64_t epoch = 0;
  read_pod(in, &epoch);
  info.epoch = int(epoch);
  read_pod(in, &info.global_step);
  read_pod(in, &info.adam_steps);
  std::uint64_t count = 0;
  read_pod(in, &count);
  if (m == nullptr) return info;
  const auto params = m->params().all();
  if (params.size() != count)
    throw std::runtime_error("checkpoint parameter count mismatch");
  for (nn::Param* p : params) {
    const std::string name = read_string(in);
    std::int64_t rows = 0, cols = 0;
    read_pod(in, &rows);
    read_pod(in, &cols);
    if (name != p->name || rows != p->value.rows() || cols != p->value.cols())
      throw std::runtime_error("checkpoint entry mismatch at " + name);
    read_mat(in, &p->value);
    read_mat(in, &p->m);
    read_mat(in, &p->v);
  }
  if (!in) throw std::runtime_error("checkpoint truncated: " + path);
  m->params().set_step_count(info.adam_steps);
  return info;
}

}  // namespace difdet::pipeline
