#include "difdet/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace difdet::diffusion {

ScheduleKind schedule_kind_from_string(const std::string& s) {
  if (s == "cosine") return ScheduleKind::kCosine;
  if (s == "linear") return ScheduleKind::kLinear;
  throw std::invalid_argument("unknown schedule kind: " + s);
}

DiffusionSchedule make_schedule(ScheduleKind kind, int steps) {
  if (steps < 1) throw std::invalid_argument("schedule steps must be >= 1");
  DiffusionSchedule s;
  s.steps = steps;
  s.kind = kind;
  s.beta.resize(steps);
  s.alpha_bar.resize(steps);
  if (kind == ScheduleKind::kLinear) {
    const double b0 = 1e-4, b1 = 0.02;
    for (int t = 0; t < steps; ++t)
      s.beta[t] = steps == 1 ? b0 : b0 + (b1 - b0) * t / (steps - 1);
  } else {
    // Squared-cosine alpha_bar with the usual 0.008 offset; betas derived
    // from consecutive ratios and clipped.
    const double off = 0.008;
    auto f = [&](double u) {
      const double c = std::cos((u + off) / (1.0 + off) * kPi / 2.0);
      return c * c;
    };
    const double f0 = f(0.0);
    double prev = 1.0;
    for (int t = 0; t < steps; ++t) {
      const double cur = f(double(t + 1) / steps) / f0;
      s.beta[t] = std::clamp(1.0 - cur / prev, 1e-8, 0.999);
      prev = cur;
    }
  }
  double acc = 1.0;
  for (int t = 0; t < steps; ++t) {
    acc *= 1.0 - s.beta[t];
    s.alpha_bar[t] = acc;
  }
  return s;
}

Eigen::Matrix<double, 7, 1> BoxNormalizer::normalize(const Box3D& b) const {
  const Eigen::Vector3d c(b.cx, b.cy, b.cz);
  for (int k = 0; k < 3; ++k) {
    if (c[k] < center_min[k] - 1e-9 || c[k] > center_max[k] + 1e-9)
      throw std::out_of_range("BoxNormalizer: box center outside range");
  }
  Eigen::Matrix<double, 7, 1> v;
  const Eigen::Vector3d mid = 0.5 * (center_min + center_max);
  const Eigen::Vector3d half = 0.5 * (center_max - center_min);
  for (int k = 0; k < 3; ++k) v[k] = (c[k] - mid[k]) / half[k] * signal_scale;
  const double size[3] = {b.l, b.w, b.h};
  for (int k = 0; k < 3; ++k)
    v[3 + k] = (2.0 * size[k] / max_size[k] - 1.0) * signal_scale;
  v[6] = b.yaw / kPi * signal_scale;
  return v;
}

Box3D BoxNormalizer::denormalize(const Eigen::Matrix<double, 7, 1>& v) const {
  const Eigen::Vector3d mid = 0.5 * (center_min + center_max);
  const Eigen::Vector3d half = 0.5 * (center_max - center_min);
  double c[3], size[3];
  for (int k = 0; k < 3; ++k) c[k] = mid[k] + v[k] / signal_scale * half[k];
  for (int k = 0; k < 3; ++k)
    size[k] =
        std::max(1e-3, (v[3 + k] / signal_scale + 1.0) * 0.5 * max_size[k]);
  const double yaw = wrap_angle(v[6] / signal_scale * kPi);
  return Box3D(c[0], c[1], c[2], size[0], size[1], size[2], yaw);
}

Mat BoxNormalizer::normalize_all(const std::vector<Box3D>& boxes) const {
  Mat out(boxes.size(), 7);
  for (size_t i = 0; i < boxes.size(); ++i)
    out.row(i) = normalize(boxes[i]).transpose();
  return out;
}

std::vector<Box3D> BoxNormalizer::denormalize_all(const Mat& rows) const {
  std::vector<Box3D> out;
  out.reserve(rows.rows());
  for (int i = 0; i < rows.rows(); ++i) {
    Eigen::Matrix<double, 7, 1> v = rows.row(i).transpose();
    out.push_back(denormalize(v));
  }
  return out;
}

Mat corrupt(const Mat& u0, int t, const Mat& noise, const DiffusionSchedule& s,
            bool paper_literal_noise) {
  if (t < 0 || t >= s.steps) throw std::out_of_range("corrupt: bad timestep");
  const double ab = s.alpha_bar[t];
  const double noise_coef =
      paper_literal_noise ? (1.0 - ab) : std::sqrt(1.0 - ab);
  return std::sqrt(ab) * u0 + noise_coef * noise;
}

std::pair<Mat, std::vector<bool>> pad_ground_truth(const Mat& gt, int n_train,
                                                   std::mt19937_64& rng) {
  const int m = int(gt.rows());
  if (m > n_train)
    throw std::invalid_argument(
        "pad_ground_truth: more ground-truth boxes than proposal budget");
  Mat out(n_train, 7);
  std::vector<bool> pad(n_train, false);
  if (m > 0) out.topRows(m) = gt;
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (int i = m; i < n_train; ++i) {
    pad[i] = true;
    for (int j = 0; j < 7; ++j) out(i, j) = gauss(rng);
  }
  return {out, pad};
}

Mat ddim_step(const Mat& u_t, const Mat& x0_pred, int t, int t_prev,
              const DiffusionSchedule& s) {
  if (t < 0 || t >= s.steps || t_prev >= t || t_prev < -1)
    throw std::out_of_range("ddim_step: bad timestep pair");
  if (t_prev == -1) return x0_pred;
  const double ab_t = s.alpha_bar[t];
  const double ab_p = s.alpha_bar[t_prev];
  const Mat eps_hat =
      (u_t - std::sqrt(ab_t) * x0_pred) / std::sqrt(1.0 - ab_t);
  return std::sqrt(ab_p) * x0_pred + std::sqrt(1.0 - ab_p) * eps_hat;
}

std::vector<int> ddim_timesteps(int total_steps, int d_steps) {
  if (d_steps < 1 || d_steps > total_steps)
    throw std::invalid_argument("ddim_timesteps: bad step count");
  std::vector<int> ts;
  for (int i = 0; i < d_steps; ++i) {
    const int t = d_steps == 1
                      ? total_steps - 1
                      : int(std::lround(double(total_steps - 1) *
                                        (d_steps - 1 - i) / (d_steps - 1)));
    if (ts.empty() || ts.back() != t) ts.push_back(t);
  }
  return ts;
}

Mat clamp_signal(Mat u, double signal_scale) {
  const double lim = 3.0 * signal_scale;
  return u.cwiseMax(-lim).cwiseMin(lim);
}

Mat gaussian_matrix(int rows, int cols, std::mt19937_64& rng) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  Mat m(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) m(i, j) = gauss(rng);
  return m;
}

}  // namespace difdet::diffusion
