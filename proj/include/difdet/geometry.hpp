#pragma once

#include <algorithm>
#include <array>
#include <utility>
#include <vector>

#include "difdet/dual.hpp"
#include "difdet/types.hpp"

namespace difdet::geometry {

// Pull the double overloads into scope so the templated code resolves them
// alongside the Dual overloads found via ADL.
using std::abs;
using std::cos;
using std::max;
using std::min;
using std::sin;

// Points within this distance of a clip edge count as on-edge, so sliver
// polygons collapse instead of producing near-zero-area noise.
constexpr double kClipEps = 1e-9;

template <class T>
struct BoxT {
  T cx, cy, cz, l, w, h, yaw;
};

inline BoxT<double> to_boxt(const Box3D& b) {
  return {b.cx, b.cy, b.cz, b.l, b.w, b.h, b.yaw};
}

template <class T>
using Poly = std::vector<std::array<T, 2>>;

/// BEV footprint as a CCW convex polygon. Winding starts at the body-frame
/// (+l/2, +w/2) corner and is CCW viewed from above.
template <class T>
Poly<T> bev_footprint(const BoxT<T>& b) {
  const T c = cos(b.yaw), s = sin(b.yaw);
  const T hl = b.l * T(0.5), hw = b.w * T(0.5);
  const std::array<std::array<T, 2>, 4> body = {{
      {hl, hw}, {-hl, hw}, {-hl, -hw}, {hl, -hw}}};
  Poly<T> out;
  out.reserve(4);
  for (const auto& p : body)
    out.push_back({b.cx + c * p[0] - s * p[1], b.cy + s * p[0] + c * p[1]});
  return out;
}

/// 8 corners; bottom face first (cz - h/2) with the same winding as
/// bev_footprint, then the top face in the same order.
template <class T>
std::array<std::array<T, 3>, 8> box_corners_t(const BoxT<T>& b) {
  const Poly<T> bev = bev_footprint(b);
  std::array<std::array<T, 3>, 8> out;
  for (int i = 0; i < 4; ++i) {
    out[i] = {bev[i][0], bev[i][1], b.cz - b.h * T(0.5)};
    out[i + 4] = {bev[i][0], bev[i][1], b.cz + b.h * T(0.5)};
  }
  return out;
}

/// Signed area (shoelace); >= 0 for CCW polygons.
template <class T>
T polygon_area(const Poly<T>& p) {
  if (p.size() < 3) return T(0);
  T acc = T(0);
  for (size_t i = 0; i < p.size(); ++i) {
    const auto& a = p[i];
    const auto& b = p[(i + 1) % p.size()];
    acc += a[0] * b[1] - b[0] * a[1];
  }
  return acc * T(0.5);
}

/// Sutherland-Hodgman clip of a convex CCW subject by a convex CCW clip
/// polygon.
template <class T>
Poly<T> clip_convex(const Poly<T>& subject, const Poly<T>& clip) {
  Poly<T> poly = subject;
  for (size_t e = 0; e < clip.size() && !poly.empty(); ++e) {
    const auto& a = clip[e];
    const auto& b = clip[(e + 1) % clip.size()];
    const T ex = b[0] - a[0], ey = b[1] - a[1];
    Poly<T> next;
    next.reserve(poly.size() + 1);
    auto side = [&](const std::array<T, 2>& p) {
      return ex * (p[1] - a[1]) - ey * (p[0] - a[0]);
    };
    for (size_t i = 0; i < poly.size(); ++i) {
      const auto& cur = poly[i];
      const auto& nxt = poly[(i + 1) % poly.size()];
      const T sc = side(cur), sn = side(nxt);
      const bool in_c = value_of(sc) >= -kClipEps;
      const bool in_n = value_of(sn) >= -kClipEps;
      if (in_c) next.push_back(cur);
      if (in_c != in_n) {
        const T t = sc / (sc - sn);
        next.push_back({cur[0] + t * (nxt[0] - cur[0]),
                        cur[1] + t * (nxt[1] - cur[1])});
      }
    }
    poly = std::move(next);
  }
  return poly;
}

template <class T>
T bev_intersection_area_t(const BoxT<T>& a, const BoxT<T>& b) {
  const T area = polygon_area(clip_convex(bev_footprint(a), bev_footprint(b)));
  if (value_of(area) < kClipEps) return T(0);
  return area;
}

template <class T>
T intersection_volume_t(const BoxT<T>& a, const BoxT<T>& b) {
  const T zlo = max(a.cz - a.h * T(0.5), b.cz - b.h * T(0.5));
  const T zhi = min(a.cz + a.h * T(0.5), b.cz + b.h * T(0.5));
  if (value_of(zhi) <= value_of(zlo)) return T(0);
  return bev_intersection_area_t(a, b) * (zhi - zlo);
}

template <class T>
T iou_3d_t(const BoxT<T>& a, const BoxT<T>& b) {
  const T inter = intersection_volume_t(a, b);
  const T uni = a.l * a.w * a.h + b.l * b.w * b.h - inter;
  if (value_of(uni) < 1e-12) return T(0);
  return inter / uni;
}

/// GIoU with the smallest axis-aligned box enclosing both corner sets as the
/// enclosing region (not the convex hull).
template <class T>
T giou_3d_t(const BoxT<T>& a, const BoxT<T>& b) {
  const T inter = intersection_volume_t(a, b);
  const T uni = a.l * a.w * a.h + b.l * b.w * b.h - inter;
  const auto ca = box_corners_t(a), cb = box_corners_t(b);
  T lo[3], hi[3];
  for (int k = 0; k < 3; ++k) {
    lo[k] = ca[0][k];
    hi[k] = ca[0][k];
    for (int i = 1; i < 8; ++i) {
      lo[k] = min(lo[k], ca[i][k]);
      hi[k] = max(hi[k], ca[i][k]);
    }
    for (int i = 0; i < 8; ++i) {
      lo[k] = min(lo[k], cb[i][k]);
      hi[k] = max(hi[k], cb[i][k]);
    }
  }
  const T volc = (hi[0] - lo[0]) * (hi[1] - lo[1]) * (hi[2] - lo[2]);
  T iou = value_of(uni) < 1e-12 ? T(0) : inter / uni;
  return iou - (volc - uni) / volc;
}

template <class T>
T iou_bev_t(const BoxT<T>& a, const BoxT<T>& b) {
  const T inter = bev_intersection_area_t(a, b);
  const T uni = a.l * a.w + b.l * b.w - inter;
  if (value_of(uni) < 1e-12) return T(0);
  return inter / uni;
}

// Double-precision surface used everywhere outside the loss gradients.

using BevPolygon = Poly<double>;

std::array<std::array<double, 3>, 8> box_corners(const Box3D& b);
double bev_intersection_area(const Box3D& a, const Box3D& b);
double iou_3d(const Box3D& a, const Box3D& b);
double giou_3d(const Box3D& a, const Box3D& b);
double iou_bev(const Box3D& a, const Box3D& b);

/// GIoU value plus its exact gradient with respect to the 7 parameters of
/// `a` (forward-mode dual numbers through the clipping code).
std::pair<double, Eigen::Matrix<double, 7, 1>> giou_3d_grad(const Box3D& a,
                                                            const Box3D& b);

}  // namespace difdet::geometry
