#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "difdet/types.hpp"

namespace difdet::selfcheck {

struct SuiteResult {
  std::string name;
  bool passed = false;
  std::string detail;
};

/// Monte-Carlo volume-sampling oracle for the rotated 3D IoU: random box
/// pairs must agree within `tol`, and the canonical 45-degree overlap case
/// must hit 1/sqrt(2) within 1e-3.
SuiteResult check_iou_monte_carlo(int pairs = 100, int samples = 1000000,
                                  double tol = 0.01, std::uint64_t seed = 7);

/// Exhaustive-permutation oracle for the Hungarian solver on random
/// rectangular cost matrices with min(N, M) <= 7.
SuiteResult check_hungarian_bruteforce(int trials = 1000,
                                       std::uint64_t seed = 11);

/// End-to-end gradient check on a tiny model (4 proposals, 2 classes,
/// d_model 16): analytic gradients of the total loss against central finite
/// differences, relative error < 1e-3.
SuiteResult check_gradients(std::uint64_t seed = 3);

/// Direct Monte-Carlo IoU estimate (uniform samples inside box a).
double monte_carlo_iou(const Box3D& a, const Box3D& b, int samples,
                       std::uint64_t seed);

/// Minimal assignment cost by exhaustive enumeration (oracle only).
double brute_force_min_cost(const Mat& cost);

std::vector<SuiteResult> run_all();

}  // namespace difdet::selfcheck
