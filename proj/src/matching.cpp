#include "difdet/matching.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "difdet/geometry.hpp"

namespace difdet::matching {

CostMatrix build_cost_matrix(const Mat& pred_signal, const Mat& class_probs,
                             const std::vector<Box3D>& gt_boxes,
                             const std::vector<int>& gt_labels,
                             const losses::LossWeights& w,
                             const diffusion::BoxNormalizer& norm) {
  const int n = int(pred_signal.rows());
  const int m = int(gt_boxes.size());
  if (n < 1 || m < 1)
    throw std::invalid_argument("build_cost_matrix: empty side");
  if (gt_labels.size() != gt_boxes.size())
    throw std::invalid_argument("build_cost_matrix: gt label count mismatch");
  for (int lab : gt_labels)
    if (lab < 0 || lab >= int(class_probs.cols()) - 1)
      throw std::invalid_argument("build_cost_matrix: label/class mismatch");

  CostMatrix c;
  c.values.resize(n, m);
  c.cls.resize(n, m);
  c.l1.resize(n, m);
  c.giou.resize(n, m);
  c.center.resize(n, m);
  for (int i = 0; i < n; ++i) {
    const Eigen::Matrix<double, 7, 1> ps = pred_signal.row(i).transpose();
    for (int j = 0; j < m; ++j) {
      const losses::RegressionTerms t =
          losses::regression_terms_signal(ps, gt_boxes[j], norm);
      c.cls(i, j) = losses::focal_cost(class_probs(i, gt_labels[j]), w.gamma);
      c.l1(i, j) = t.l1;
      c.giou(i, j) = t.giou;
      c.center(i, j) = t.center;
      c.values(i, j) = w.lambda1 * c.cls(i, j) + w.lambda3 * c.l1(i, j) +
                       w.lambda4 * c.giou(i, j) + w.lambda5 * c.center(i, j);
    }
  }
  return c;
}

namespace {

// Shortest-augmenting-path Kuhn-Munkres; rows <= cols. Returns row -> col.
std::vector<int> solve_rect(const Mat& a) {
  const int n = int(a.rows()), m = int(a.cols());
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0), v(m + 1, 0);
  std::vector<int> p(m + 1, 0), way(m + 1, 0);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(m + 1, inf);
    std::vector<char> used(m + 1, 0);
    do {
      used[j0] = 1;
      const int i0 = p[j0];
      int j1 = -1;
      double delta = inf;
      for (int j = 1; j <= m; ++j) {
        if (used[j]) continue;
        const double cur = a(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= m; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0);
  }
  std::vector<int> row2col(n, -1);
  for (int j = 1; j <= m; ++j)
    if (p[j]) row2col[p[j] - 1] = j - 1;
  return row2col;
}

Assignment finalize(std::vector<std::pair<int, int>> pairs, int n) {
  std::sort(pairs.begin(), pairs.end());
  std::vector<char> used(n, 0);
  for (const auto& [pi, gj] : pairs) used[pi] = 1;
  Assignment a;
  a.pairs = std::move(pairs);
  for (int i = 0; i < n; ++i)
    if (!used[i]) a.unmatched_predictions.push_back(i);
  return a;
}

}  // namespace

Assignment hungarian_match(const Mat& cost) {
  if (!cost.allFinite())
    throw std::invalid_argument("hungarian_match: non-finite cost");
  const int n = int(cost.rows()), m = int(cost.cols());
  std::vector<std::pair<int, int>> pairs;
  if (n >= m) {
    const std::vector<int> gt2pred = solve_rect(cost.transpose());
    for (int j = 0; j < m; ++j) pairs.emplace_back(gt2pred[j], j);
  } else {
    const std::vector<int> pred2gt = solve_rect(cost);
    for (int i = 0; i < n; ++i) pairs.emplace_back(i, pred2gt[i]);
  }
  return finalize(std::move(pairs), n);
}

Assignment hungarian_match(const CostMatrix& c) {
  return hungarian_match(c.values);
}

Assignment ota_assign(const Mat& cost, int k) {
  if (k < 1) throw std::invalid_argument("ota_assign: k must be >= 1");
  const int n = int(cost.rows()), m = int(cost.cols());
  // claims[i] = gt that currently owns prediction i.
  std::vector<int> claims(n, -1);
  for (int j = 0; j < m; ++j) {
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return cost(a, j) < cost(b, j); });
    const int take = std::min(k, n);
    for (int r = 0; r < take; ++r) {
      const int i = order[r];
      if (claims[i] == -1) {
        claims[i] = j;
      } else {
        const int other = claims[i];
        if (cost(i, j) < cost(i, other)) claims[i] = j;  // tie: keep lower gt
      }
    }
  }
  std::vector<int> count(m, 0);
  for (int i = 0; i < n; ++i)
    if (claims[i] >= 0) ++count[claims[i]];
  // A gt that lost every candidate takes its cheapest free prediction, or
  // steals the cheapest one from a gt holding more than one.
  for (int j = 0; j < m; ++j) {
    if (count[j] > 0) continue;
    int best = -1;
    for (int i = 0; i < n; ++i) {
      const bool available =
          claims[i] == -1 || (claims[i] != j && count[claims[i]] > 1);
      if (!available) continue;
      if (best == -1 || cost(i, j) < cost(best, j)) best = i;
    }
    if (best >= 0) {
      if (claims[best] >= 0) --count[claims[best]];
      claims[best] = j;
      ++count[j];
    }
  }
  std::vector<std::pair<int, int>> pairs;
  for (int i = 0; i < n; ++i)
    if (claims[i] >= 0) pairs.emplace_back(i, claims[i]);
  return finalize(std::move(pairs), n);
}

Assignment ota_assign(const CostMatrix& c, int k) {
  return ota_assign(c.values, k);
}

}  // namespace difdet::matching
