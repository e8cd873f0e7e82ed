#pragma once

#include <random>
#include <string>
#include <utility>
#include <vector>

#include "difdet/types.hpp"

namespace difdet::diffusion {

enum class ScheduleKind { kCosine, kLinear };

ScheduleKind schedule_kind_from_string(const std::string& s);

/// Variance schedule with cached cumulative signal fractions.
struct DiffusionSchedule {
  int steps = 0;        // T
  Vec beta;             // per-step variance, in (0, 1)
  Vec alpha_bar;        // cumprod of (1 - beta), strictly decreasing
  ScheduleKind kind = ScheduleKind::kCosine;
};

DiffusionSchedule make_schedule(ScheduleKind kind, int steps);

/// Affine map between metric boxes and the signal space the diffusion runs
/// in. Centers map from the configured range to [-signal_scale, signal_scale],
/// sizes from (0, max_size] to (-signal_scale, signal_scale], yaw linearly
/// from [-pi, pi).
struct BoxNormalizer {
  Eigen::Vector3d center_min{0, 0, 0};
  Eigen::Vector3d center_max{1, 1, 1};
  Eigen::Vector3d max_size{1, 1, 1};  // for l, w, h
  double signal_scale = 2.0;

  Eigen::Matrix<double, 7, 1> normalize(const Box3D& b) const;
  /// Inverse of normalize. Sizes are floored at 1e-3 m and yaw re-wrapped
  /// into [-pi, pi).
  Box3D denormalize(const Eigen::Matrix<double, 7, 1>& v) const;

  Mat normalize_all(const std::vector<Box3D>& boxes) const;
  std::vector<Box3D> denormalize_all(const Mat& rows) const;

  double range_diagonal() const { return (center_max - center_min).norm(); }
};

/// Closed-form forward corruption at timestep t. The default noise
/// coefficient is sqrt(1 - alpha_bar[t]); `paper_literal_noise` switches to
/// the plain (1 - alpha_bar[t]) coefficient.
Mat corrupt(const Mat& u0, int t, const Mat& noise, const DiffusionSchedule& s,
            bool paper_literal_noise = false);

/// Pads M ground-truth rows up to n_train rows with standard Gaussian draws.
/// Returns the padded matrix and a mask marking the padded rows.
std::pair<Mat, std::vector<bool>> pad_ground_truth(const Mat& gt, int n_train,
                                                   std::mt19937_64& rng);

/// Deterministic (eta = 0) DDIM update from timestep t to t_prev given the
/// model's x0 estimate. t_prev == -1 denotes the terminal step
/// (alpha_bar treated as 1) and returns x0_pred unchanged.
Mat ddim_step(const Mat& u_t, const Mat& x0_pred, int t, int t_prev,
              const DiffusionSchedule& s);

/// Evenly spaced descending timesteps from T-1 toward 0 (d_steps entries).
std::vector<int> ddim_timesteps(int total_steps, int d_steps);

/// Clamp signal-space boxes to [-3*signal_scale, 3*signal_scale].
Mat clamp_signal(Mat u, double signal_scale);

Mat gaussian_matrix(int rows, int cols, std::mt19937_64& rng);

}  // namespace difdet::diffusion
