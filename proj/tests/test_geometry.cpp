#include <cmath>
#include <random>

#include "difdet/geometry.hpp"
#include "difdet/selfcheck.hpp"
#include "doctest.h"

using namespace difdet;

namespace {

Box3D random_box(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> c(-2.0, 2.0);
  std::uniform_real_distribution<double> s(0.3, 2.5);
  std::uniform_real_distribution<double> y(-kPi, kPi);
  return Box3D(c(rng), c(rng), c(rng), s(rng), s(rng), s(rng), y(rng));
}

}  // namespace

TEST_CASE("box corners: axis-aligned unit cube") {
  const auto c = geometry::box_corners(Box3D(0, 0, 0, 1, 1, 1, 0));
  for (int i = 0; i < 8; ++i) {
    CHECK(std::abs(c[i][0]) == doctest::Approx(0.5));
    CHECK(std::abs(c[i][1]) == doctest::Approx(0.5));
    CHECK(c[i][2] == doctest::Approx(i < 4 ? -0.5 : 0.5));
  }
  // winding starts at the body-frame (+l/2, +w/2) corner
  CHECK(c[0][0] == doctest::Approx(0.5));
  CHECK(c[0][1] == doctest::Approx(0.5));
}

TEST_CASE("box corners match direct rotation arithmetic") {
  const Box3D b(1, 2, 3, 4, 2, 2, kPi / 4);
  const auto c = geometry::box_corners(b);
  const double cs = std::cos(kPi / 4), sn = std::sin(kPi / 4);
  const double body[4][2] = {{2, 1}, {-2, 1}, {-2, -1}, {2, -1}};
  for (int i = 0; i < 4; ++i) {
    CHECK(c[i][0] == doctest::Approx(1 + cs * body[i][0] - sn * body[i][1]));
    CHECK(c[i][1] == doctest::Approx(2 + sn * body[i][0] + cs * body[i][1]));
    CHECK(c[i][2] == doctest::Approx(2.0));
    CHECK(c[i + 4][2] == doctest::Approx(4.0));
  }
}

TEST_CASE("bev intersection: identity, disjoint and 45-degree octagon") {
  const Box3D sq(0, 0, 0, 1, 1, 1, 0);
  CHECK(geometry::bev_intersection_area(sq, sq) == doctest::Approx(1.0));
  const Box3D far(10, 0, 0, 1, 1, 1, 0);
  CHECK(geometry::bev_intersection_area(sq, far) == doctest::Approx(0.0));
  const Box3D rot(0, 0, 0, 1, 1, 1, kPi / 4);
  CHECK(geometry::bev_intersection_area(sq, rot) ==
        doctest::Approx(2.0 * (std::sqrt(2.0) - 1.0)).epsilon(1e-9));
}

TEST_CASE("iou_3d: identity, vertical disjoint, 45-degree value") {
  const Box3D a(0, 0, 0, 1, 1, 1, 0);
  CHECK(geometry::iou_3d(a, a) == doctest::Approx(1.0));
  const Box3D above(0, 0, 5, 1, 1, 1, 0);
  CHECK(geometry::iou_3d(a, above) == doctest::Approx(0.0));
  const Box3D rot(0, 0, 0, 1, 1, 1, kPi / 4);
  CHECK(geometry::iou_3d(a, rot) ==
        doctest::Approx(1.0 / std::sqrt(2.0)).epsilon(1e-6));
  CHECK(geometry::iou_bev(a, rot) ==
        doctest::Approx(1.0 / std::sqrt(2.0)).epsilon(1e-6));
}

TEST_CASE("giou_3d: identity, touching cubes, distant limit") {
  const Box3D a(0, 0, 0, 1, 1, 1, 0);
  CHECK(geometry::giou_3d(a, a) == doctest::Approx(1.0));
  // offset (1,0,0): enclosing box volume 2, union 2, IoU 0
  const Box3D b(1, 0, 0, 1, 1, 1, 0);
  CHECK(geometry::giou_3d(a, b) == doctest::Approx(0.0));
  const Box3D far(1000, 0, 0, 1, 1, 1, 0);
  const double g = geometry::giou_3d(a, far);
  CHECK(g < -0.99);
  CHECK(g > -1.0);
}

TEST_CASE("iou properties: symmetry, bounds, giou dominance, invariances") {
  std::mt19937_64 rng(42);
  for (int i = 0; i < 300; ++i) {
    const Box3D a = random_box(rng), b = random_box(rng);
    const double iou = geometry::iou_3d(a, b);
    const double giou = geometry::giou_3d(a, b);
    CHECK(iou == doctest::Approx(geometry::iou_3d(b, a)).epsilon(1e-12));
    CHECK(iou >= 0.0);
    CHECK(iou <= 1.0 + 1e-12);
    CHECK(giou > -1.0);
    CHECK(giou <= iou + 1e-12);
    // shared rigid motion leaves IoU unchanged
    const double dyaw = 0.7, dx = 1.3, dy = -2.1;
    const Box3D a2(a.cx + dx, a.cy + dy, a.cz, a.l, a.w, a.h, a.yaw + dyaw);
    // rotate the relative offset of b the same way about a's center
    const double rx = b.cx - a.cx, ry = b.cy - a.cy;
    const double cs = std::cos(dyaw), sn = std::sin(dyaw);
    const Box3D b2(a.cx + dx + cs * rx - sn * ry,
                   a.cy + dy + sn * rx + cs * ry, b.cz, b.l, b.w, b.h,
                   b.yaw + dyaw);
    CHECK(geometry::iou_3d(a2, b2) == doctest::Approx(iou).epsilon(1e-9));
    // uniform scaling leaves IoU unchanged
    const double s = 2.5;
    const Box3D as(a.cx * s, a.cy * s, a.cz * s, a.l * s, a.w * s, a.h * s,
                   a.yaw);
    const Box3D bs(b.cx * s, b.cy * s, b.cz * s, b.l * s, b.w * s, b.h * s,
                   b.yaw);
    CHECK(geometry::iou_3d(as, bs) == doctest::Approx(iou).epsilon(1e-9));
  }
}

TEST_CASE("iou_3d agrees with Monte-Carlo sampling (smoke subset)") {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> c(-1.0, 1.0);
  std::uniform_real_distribution<double> s(0.5, 2.5);
  std::uniform_real_distribution<double> y(-kPi, kPi);
  for (int i = 0; i < 10; ++i) {
    const Box3D a(c(rng), c(rng), c(rng), s(rng), s(rng), s(rng), y(rng));
    const Box3D b(c(rng), c(rng), c(rng), s(rng), s(rng), s(rng), y(rng));
    const double exact = geometry::iou_3d(a, b);
    const double mc = selfcheck::monte_carlo_iou(a, b, 200000, 100 + i);
    CHECK(std::abs(exact - mc) < 0.02);
  }
}

TEST_CASE("degenerate sizes are rejected at construction") {
  CHECK_THROWS_AS(Box3D(0, 0, 0, 0.0, 1, 1, 0), std::invalid_argument);
  CHECK_THROWS_AS(Box3D(0, 0, 0, 1, 1e-9, 1, 0), std::invalid_argument);
}

TEST_CASE("giou gradient matches central finite differences") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    Box3D a = random_box(rng);
    const Box3D b = random_box(rng);
    const auto [val, grad] = geometry::giou_3d_grad(a, b);
    CHECK(val == doctest::Approx(geometry::giou_3d(a, b)).epsilon(1e-12));
    double params[7] = {a.cx, a.cy, a.cz, a.l, a.w, a.h, a.yaw};
    for (int k = 0; k < 7; ++k) {
      const double h = 1e-6;
      double p = params[k];
      auto eval = [&](double v) {
        double q[7] = {params[0], params[1], params[2], params[3],
                       params[4], params[5], params[6]};
        q[k] = v;
        return geometry::giou_3d(Box3D(q[0], q[1], q[2], q[3], q[4], q[5],
                                       q[6]),
                                 b);
      };
      const double num = (eval(p + h) - eval(p - h)) / (2 * h);
      const double rel = std::abs(grad[k] - num) /
                         std::max({std::abs(grad[k]), std::abs(num), 1e-4});
      CHECK(rel < 1e-3);
    }
  }
}
