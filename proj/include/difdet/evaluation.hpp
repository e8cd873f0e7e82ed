#pragma once

#include <string>
#include <vector>

#include "difdet/types.hpp"

namespace difdet::eval {

enum class IouKind { kBev, k3D };

std::string iou_kind_name(IouKind k);

/// Greedy matching in descending score order (ties broken by detection
/// index): each detection takes the unmatched ground truth with the highest
/// IoU at or above the threshold. Returns a TP flag per detection, aligned
/// with the input order.
std::vector<bool> match_detections(const std::vector<Box3D>& det_boxes,
                                   const std::vector<double>& scores,
                                   const std::vector<Box3D>& gt_boxes,
                                   IouKind kind, double iou_thresh);

struct PRCurve {
  std::vector<double> recall;     // non-decreasing
  std::vector<double> precision;  // aligned with recall
  double ap = 0.0;
};

/// Interpolated average precision over the score-sorted detection list.
/// interp_points 11 samples recall at {0, 0.1, ..., 1.0}; 40 samples at
/// {1/40, ..., 1.0}. num_gt == 0 yields ap = 0 with an empty curve (callers
/// skip such classes).
PRCurve compute_ap(const std::vector<bool>& tp_flags,
                   const std::vector<double>& scores, int num_gt,
                   int interp_points);

struct ClassResult {
  int class_id = 0;
  int num_gt = 0;
  bool skipped = false;  // no ground truth of this class anywhere
  PRCurve pr_3d, pr_bev;
};

struct EvalResult {
  double map_3d = 0.0;
  double map_bev = 0.0;
  std::vector<ClassResult> per_class;
};

/// Per-class AP for both IoU kinds over aligned per-scene detection and
/// ground-truth lists; mAP averages the classes with at least one ground
/// truth.
EvalResult evaluate(const std::vector<DetectionOutput>& dets,
                    const std::vector<const Scene*>& scenes, int num_classes,
                    double iou_thresh, int interp_points);

/// metrics.csv rows: class, iou_kind, AP, num_gt.
void write_metrics_csv(const std::string& path, const EvalResult& result,
                       const std::vector<std::string>& class_names);
/// pr_<class>_<kind>.csv with (recall, precision) rows, one file per curve.
void write_pr_curves(const std::string& dir, const EvalResult& result,
                     const std::vector<std::string>& class_names);

}  // namespace difdet::eval
