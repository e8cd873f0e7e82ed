#pragma once

#include <utility>
#include <vector>

#include "difdet/diffusion.hpp"
#include "difdet/losses.hpp"
#include "difdet/types.hpp"

namespace difdet::matching {

/// N x M pairwise costs with the per-component breakdown kept around for
/// diagnostics.
struct CostMatrix {
  Mat values;  // N x M
  Mat cls, l1, giou, center;
};

struct Assignment {
  std::vector<std::pair<int, int>> pairs;  // (prediction index, gt index)
  std::vector<int> unmatched_predictions;
};

/// cost[i][j] = lambda1 * focal_cost + lambda3 * L1 + lambda4 * (1 - GIoU)
///            + lambda5 * normalized center distance, matching the training
/// loss weights.
CostMatrix build_cost_matrix(const Mat& pred_signal, const Mat& class_probs,
                             const std::vector<Box3D>& gt_boxes,
                             const std::vector<int>& gt_labels,
                             const losses::LossWeights& w,
                             const diffusion::BoxNormalizer& norm);

/// Kuhn-Munkres optimal one-to-one assignment over min(N, M) pairs.
Assignment hungarian_match(const CostMatrix& c);
Assignment hungarian_match(const Mat& cost);

/// Top-k lowest-cost predictions per ground truth; a prediction wanted by
/// several ground truths stays with the one it is cheapest for (ties to the
/// lower gt index). Every gt keeps at least one prediction when N >= M.
Assignment ota_assign(const CostMatrix& c, int k);
Assignment ota_assign(const Mat& cost, int k);

}  // namespace difdet::matching
