#pragma once

#include <utility>
#include <vector>

#include "difdet/diffusion.hpp"
#include "difdet/types.hpp"

namespace difdet::losses {

struct LossWeights {
  double lambda1 = 1.0;  // classification
  double lambda2 = 1.0;  // regression group
  double lambda3 = 2.5;  // L1
  double lambda4 = 1.0;  // GIoU
  double lambda5 = 1.0;  // center
  double gamma = 2.0;    // focal modulating factor
};

struct LossBreakdown {
  double cls = 0, l1 = 0, giou = 0, center = 0, total = 0;
  int matched_pairs = 0;
};

struct RegressionTerms {
  double l1 = 0, giou = 0, center = 0;
};

constexpr double kProbEps = 1e-7;

/// Focal loss over per-class sigmoid probabilities with one-hot targets,
/// summed over channels and averaged over rows.
double focal_loss(const Mat& probs, const Mat& targets, double gamma);

/// Positive-term focal cost at probability p: (1-p)^gamma * (-log p).
double focal_cost(double p, double gamma);

/// L1 in normalized signal space; GIoU and center in metric space, the
/// center distance divided by the normalizer's range diagonal.
RegressionTerms regression_loss(const Box3D& pred, const Box3D& gt,
                                const diffusion::BoxNormalizer& norm);

/// Same terms with the prediction given directly in signal space (head
/// output), so out-of-range predicted centers stay total.
RegressionTerms regression_terms_signal(
    const Eigen::Matrix<double, 7, 1>& pred_signal, const Box3D& gt,
    const diffusion::BoxNormalizer& norm);

/// Set-prediction loss: classification over all N predictions (unmatched
/// rows target the trailing "no object" channel), regression averaged over
/// matched (prediction, gt) pairs.
LossBreakdown set_prediction_loss(const Mat& pred_signal,
                                  const Mat& class_probs,
                                  const std::vector<Box3D>& gt_boxes,
                                  const std::vector<int>& gt_labels,
                                  const std::vector<std::pair<int, int>>& pairs,
                                  const LossWeights& w,
                                  const diffusion::BoxNormalizer& norm);

}  // namespace difdet::losses
