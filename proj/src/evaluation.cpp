#include "difdet/evaluation.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "difdet/geometry.hpp"

namespace difdet::eval {

std::string iou_kind_name(IouKind k) {
  return k == IouKind::kBev ? "bev" : "3d";
}

namespace {

// descending score, ties by ascending index
std::vector<int> score_order(const std::vector<double>& scores) {
  std::vector<int> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return scores[a] > scores[b]; });
  return order;
}

}  // namespace

std::vector<bool> match_detections(const std::vector<Box3D>& det_boxes,
                                   const std::vector<double>& scores,
                                   const std::vector<Box3D>& gt_boxes,
                                   IouKind kind, double iou_thresh) {
  if (det_boxes.size() != scores.size())
    throw std::invalid_argument("match_detections: score count mismatch");
  std::vector<bool> tp(det_boxes.size(), false);
  std::vector<bool> taken(gt_boxes.size(), false);
  for (int di : score_order(scores)) {
    int best = -1;
    double best_iou = iou_thresh;
    for (size_t gj = 0; gj < gt_boxes.size(); ++gj) {
      if (taken[gj]) continue;
      const double iou = kind == IouKind::kBev
                             ? geometry::iou_bev(det_boxes[di], gt_boxes[gj])
                             : geometry::iou_3d(det_boxes[di], gt_boxes[gj]);
      if (iou >= best_iou) {
        best_iou = iou;
        best = int(gj);
      }
    }
    if (best >= 0) {
      taken[best] = true;
      tp[di] = true;
    }
  }
  return tp;
}

PRCurve compute_ap(const std::vector<bool>& tp_flags,
                   const std::vector<double>& scores, int num_gt,
                   int interp_points) {
  if (tp_flags.size() != scores.size())
    throw std::invalid_argument("compute_ap: flag count mismatch");
  if (interp_points != 11 && interp_points != 40)
    throw std::invalid_argument("compute_ap: interp_points must be 11 or 40");
  PRCurve curve;
  if (num_gt <= 0) return curve;
  int tps = 0, fps = 0;
  for (int di : score_order(scores)) {
    tp_flags[di] ? ++tps : ++fps;
    curve.recall.push_back(double(tps) / num_gt);
    curve.precision.push_back(double(tps) / (tps + fps));
  }
  double acc = 0.0;
  for (int i = 0; i < interp_points; ++i) {
    // 11-point recall grid starts at 0, the 40-point grid at 1/40
    const double r = interp_points == 11 ? i / 10.0 : (i + 1) / 40.0;
    double best = 0.0;
    for (size_t j = 0; j < curve.recall.size(); ++j)
      if (curve.recall[j] >= r) best = std::max(best, curve.precision[j]);
    acc += best;
  }
  curve.ap = acc / interp_points;
  return curve;
}

EvalResult evaluate(const std::vector<DetectionOutput>& dets,
                    const std::vector<const Scene*>& scenes, int num_classes,
                    double iou_thresh, int interp_points) {
  if (dets.size() != scenes.size())
    throw std::invalid_argument("evaluate: scene count mismatch");
  EvalResult result;
  int counted = 0;
  for (int cls = 0; cls < num_classes; ++cls) {
    ClassResult cr;
    cr.class_id = cls;
    std::vector<bool> tp3d, tpbev;
    std::vector<double> all_scores;
    for (size_t s = 0; s < scenes.size(); ++s) {
      const Scene& gt = *scenes[s];
      std::vector<Box3D> gt_boxes;
      for (size_t j = 0; j < gt.gt_boxes.size(); ++j)
        if (gt.gt_labels[j] == cls) gt_boxes.push_back(gt.gt_boxes[j]);
      cr.num_gt += int(gt_boxes.size());
      std::vector<Box3D> det_boxes;
      std::vector<double> scores;
      for (size_t j = 0; j < dets[s].boxes.size(); ++j) {
        if (dets[s].labels[j] != cls) continue;
        det_boxes.push_back(dets[s].boxes[j]);
        scores.push_back(dets[s].scores[j]);
      }
      const auto f3 = match_detections(det_boxes, scores, gt_boxes,
                                       IouKind::k3D, iou_thresh);
      const auto fb = match_detections(det_boxes, scores, gt_boxes,
                                       IouKind::kBev, iou_thresh);
      tp3d.insert(tp3d.end(), f3.begin(), f3.end());
      tpbev.insert(tpbev.end(), fb.begin(), fb.end());
      all_scores.insert(all_scores.end(), scores.begin(), scores.end());
    }
    if (cr.num_gt == 0) {
      cr.skipped = true;
    } else {
      cr.pr_3d = compute_ap(tp3d, all_scores, cr.num_gt, interp_points);
      cr.pr_bev = compute_ap(tpbev, all_scores, cr.num_gt, interp_points);
      result.map_3d += cr.pr_3d.ap;
      result.map_bev += cr.pr_bev.ap;
      ++counted;
    }
    result.per_class.push_back(std::move(cr));
  }
  if (counted > 0) {
    result.map_3d /= counted;
    result.map_bev /= counted;
  }
  return result;
}

void write_metrics_csv(const std::string& path, const EvalResult& result,
                       const std::vector<std::string>& class_names) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "class,iou_kind,AP,num_gt\n";
  for (const auto& cr : result.per_class) {
    const std::string& name = class_names.at(cr.class_id);
    if (cr.skipped) {
      out << name << ",3d,skipped,0\n" << name << ",bev,skipped,0\n";
      continue;
    }
    out << name << ",3d," << cr.pr_3d.ap << "," << cr.num_gt << "\n";
    out << name << ",bev," << cr.pr_bev.ap << "," << cr.num_gt << "\n";
  }
}

void write_pr_curves(const std::string& dir, const EvalResult& result,
                     const std::vector<std::string>& class_names) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  auto dump = [&](const PRCurve& c, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << "recall,precision\n";
    for (size_t i = 0; i < c.recall.size(); ++i)
      out << c.recall[i] << "," << c.precision[i] << "\n";
  };
  for (const auto& cr : result.per_class) {
    if (cr.skipped) continue;
    const std::string& name = class_names.at(cr.class_id);
    dump(cr.pr_3d, (fs::path(dir) / ("pr_" + name + "_3d.csv")).string());
    dump(cr.pr_bev, (fs::path(dir) / ("pr_" + name + "_bev.csv")).string());
  }
}

}  // namespace difdet::eval
