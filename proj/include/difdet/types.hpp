#pragma once

#include <Eigen/Core>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

namespace difdet {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

constexpr double kPi = 3.14159265358979323846;

/// Wrap an angle into [-pi, pi).
inline double wrap_angle(double a) {
  a = std::fmod(a + kPi, 2.0 * kPi);
  if (a < 0) a += 2.0 * kPi;
  return a - kPi;
}

/// 7-DoF oriented box: center (cx, cy, cz), size (l, w, h), yaw about +z.
/// Sizes are strictly positive; yaw is kept in [-pi, pi).
struct Box3D {
  double cx = 0, cy = 0, cz = 0;
  double l = 1, w = 1, h = 1;
  double yaw = 0;

  Box3D() = default;
  Box3D(double cx_, double cy_, double cz_, double l_, double w_, double h_,
        double yaw_)
      : cx(cx_), cy(cy_), cz(cz_), l(l_), w(w_), h(h_), yaw(wrap_angle(yaw_)) {
    validate();
  }

  void validate() const {
    if (!(std::isfinite(cx) && std::isfinite(cy) && std::isfinite(cz) &&
          std::isfinite(l) && std::isfinite(w) && std::isfinite(h) &&
          std::isfinite(yaw)))
      throw std::invalid_argument("Box3D: non-finite field");
    if (l < 1e-6 || w < 1e-6 || h < 1e-6)
      throw std::invalid_argument("Box3D: degenerate size");
  }

  Eigen::Matrix<double, 7, 1> as_vector() const {
    Eigen::Matrix<double, 7, 1> v;
    v << cx, cy, cz, l, w, h, yaw;
    return v;
  }
  static Box3D from_vector(const Eigen::Matrix<double, 7, 1>& v) {
    return Box3D(v[0], v[1], v[2], v[3], v[4], v[5], v[6]);
  }
};

/// One training/eval sample.
struct Scene {
  int id = 0;
  Mat points;            // K x 4: x, y, z, intensity
  int image_h = 0, image_w = 0;
  std::vector<double> image;  // H*W*3, row-major, values in [0,1]
  Eigen::Matrix<double, 3, 4> projection;  // world -> pixel (homogeneous)
  std::vector<Box3D> gt_boxes;
  std::vector<int> gt_labels;
};

/// Final detections for one scene.
struct DetectionOutput {
  std::vector<Box3D> boxes;
  Mat class_probs;          // N x (C+1), per-class sigmoid probabilities
  std::vector<double> scores;
  std::vector<int> labels;  // argmax over the C real classes
};

}  // namespace difdet
