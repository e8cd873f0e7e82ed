#include "difdet/losses.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "difdet/geometry.hpp"

namespace difdet::losses {

namespace {
double clamp_prob(double p) {
  return std::clamp(p, kProbEps, 1.0 - kProbEps);
}
}  // namespace

double focal_loss(const Mat& probs, const Mat& targets, double gamma) {
  if (probs.rows() != targets.rows() || probs.cols() != targets.cols())
    throw std::invalid_argument("focal_loss: shape mismatch");
  if (probs.rows() == 0) return 0.0;
  double acc = 0.0;
  for (int i = 0; i < probs.rows(); ++i) {
    for (int j = 0; j < probs.cols(); ++j) {
      const double p = clamp_prob(probs(i, j));
      const double v = targets(i, j);
      acc -= v * std::pow(1.0 - p, gamma) * std::log(p) +
             (1.0 - v) * std::pow(p, gamma) * std::log(1.0 - p);
    }
  }
  return acc / double(probs.rows());
}

double focal_cost(double p, double gamma) {
  const double pc = clamp_prob(p);
  return std::pow(1.0 - pc, gamma) * (-std::log(pc));
}

RegressionTerms regression_loss(const Box3D& pred, const Box3D& gt,
                                const diffusion::BoxNormalizer& norm) {
  return regression_terms_signal(norm.normalize(pred), gt, norm);
}

RegressionTerms regression_terms_signal(
    const Eigen::Matrix<double, 7, 1>& pred_signal, const Box3D& gt,
    const diffusion::BoxNormalizer& norm) {
  RegressionTerms t;
  const Eigen::Matrix<double, 7, 1> gt_signal = norm.normalize(gt);
  t.l1 = (pred_signal - gt_signal).cwiseAbs().mean();
  const Box3D pred = norm.denormalize(pred_signal);
  t.giou = 1.0 - geometry::giou_3d(pred, gt);
  const Eigen::Vector3d dc(pred.cx - gt.cx, pred.cy - gt.cy, pred.cz - gt.cz);
  t.center = dc.norm() / norm.range_diagonal();
  return t;
}

LossBreakdown set_prediction_loss(const Mat& pred_signal,
                                  const Mat& class_probs,
                                  const std::vector<Box3D>& gt_boxes,
                                  const std::vector<int>& gt_labels,
                                  const std::vector<std::pair<int, int>>& pairs,
                                  const LossWeights& w,
                                  const diffusion::BoxNormalizer& norm) {
  const int n = int(pred_signal.rows());
  const int nc = int(class_probs.cols());  // C + 1, last channel = no object
  if (class_probs.rows() != n)
    throw std::invalid_argument("set_prediction_loss: row mismatch");
  if (gt_boxes.size() != gt_labels.size())
    throw std::invalid_argument("set_prediction_loss: gt label mismatch");

  Mat targets = Mat::Zero(n, nc);
  for (int i = 0; i < n; ++i) targets(i, nc - 1) = 1.0;  // default: no object
  for (const auto& [pi, gj] : pairs) {
    const int label = gt_labels.at(gj);
    if (label < 0 || label >= nc - 1)
      throw std::invalid_argument("set_prediction_loss: label out of range");
    targets.row(pi).setZero();
    targets(pi, label) = 1.0;
  }

  LossBreakdown out;
  out.cls = focal_loss(class_probs, targets, w.gamma);
  out.matched_pairs = int(pairs.size());
  for (const auto& [pi, gj] : pairs) {
    const RegressionTerms t = regression_terms_signal(
        pred_signal.row(pi).transpose(), gt_boxes.at(gj), norm);
    out.l1 += t.l1;
    out.giou += t.giou;
    out.center += t.center;
  }
  if (!pairs.empty()) {
    out.l1 /= double(pairs.size());
    out.giou /= double(pairs.size());
    out.center /= double(pairs.size());
  }
  out.total = w.lambda1 * out.cls +
              w.lambda2 * (w.lambda3 * out.l1 + w.lambda4 * out.giou +
                           w.lambda5 * out.center);
  return out;
}

}  // namespace difdet::losses
