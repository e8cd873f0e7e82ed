#pragma once

#include <Eigen/Core>
#include <cmath>

namespace difdet {

/// Forward-mode dual number with N derivative slots. Used to get exact
/// derivatives of the rotated-box GIoU through the polygon clipping code,
/// which is templated on the scalar type.
template <int N>
struct Dual {
  double v = 0;
  Eigen::Matrix<double, N, 1> d = Eigen::Matrix<double, N, 1>::Zero();

  Dual() = default;
  Dual(double value) : v(value) {}  // NOLINT: implicit from constants
  Dual(double value, int slot) : v(value) { d[slot] = 1.0; }

  Dual operator-() const { Dual r; r.v = -v; r.d = -d; return r; }

  Dual& operator+=(const Dual& o) { v += o.v; d += o.d; return *this; }
  Dual& operator-=(const Dual& o) { v -= o.v; d -= o.d; return *this; }

  friend Dual operator+(Dual a, const Dual& b) { a += b; return a; }
  friend Dual operator-(Dual a, const Dual& b) { a -= b; return a; }
  friend Dual operator*(const Dual& a, const Dual& b) {
    Dual r; r.v = a.v * b.v; r.d = a.v * b.d + b.v * a.d; return r;
  }
  friend Dual operator/(const Dual& a, const Dual& b) {
    Dual r; r.v = a.v / b.v;
    r.d = (a.d - r.v * b.d) / b.v;
    return r;
  }

  friend bool operator<(const Dual& a, const Dual& b) { return a.v < b.v; }
  friend bool operator>(const Dual& a, const Dual& b) { return a.v > b.v; }
  friend bool operator<=(const Dual& a, const Dual& b) { return a.v <= b.v; }
  friend bool operator>=(const Dual& a, const Dual& b) { return a.v >= b.v; }

  friend Dual sin(const Dual& a) {
    Dual r; r.v = std::sin(a.v); r.d = std::cos(a.v) * a.d; return r;
  }
  friend Dual cos(const Dual& a) {
    Dual r; r.v = std::cos(a.v); r.d = -std::sin(a.v) * a.d; return r;
  }
  friend Dual abs(const Dual& a) { return a.v < 0 ? -a : a; }
  friend Dual min(const Dual& a, const Dual& b) { return a.v < b.v ? a : b; }
  friend Dual max(const Dual& a, const Dual& b) { return a.v > b.v ? a : b; }
};

inline double value_of(double x) { return x; }
template <int N>
double value_of(const Dual<N>& x) { return x.v; }

}  // namespace difdet
