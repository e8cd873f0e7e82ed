#include "difdet/geometry.hpp"

namespace difdet::geometry {

std::array<std::array<double, 3>, 8> box_corners(const Box3D& b) {
  b.validate();
  return box_corners_t(to_boxt(b));
}

double bev_intersection_area(const Box3D& a, const Box3D& b) {
  return bev_intersection_area_t(to_boxt(a), to_boxt(b));
}

double iou_3d(const Box3D& a, const Box3D& b) {
  return iou_3d_t(to_boxt(a), to_boxt(b));
}

double giou_3d(const Box3D& a, const Box3D& b) {
  return giou_3d_t(to_boxt(a), to_boxt(b));
}

double iou_bev(const Box3D& a, const Box3D& b) {
  return iou_bev_t(to_boxt(a), to_boxt(b));
}

std::pair<double, Eigen::Matrix<double, 7, 1>> giou_3d_grad(const Box3D& a,
                                                            const Box3D& b) {
  using D7 = Dual<7>;
  BoxT<D7> da{D7(a.cx, 0), D7(a.cy, 1), D7(a.cz, 2), D7(a.l, 3),
              D7(a.w, 4),  D7(a.h, 5),  D7(a.yaw, 6)};
  BoxT<D7> db{D7(b.cx), D7(b.cy), D7(b.cz), D7(b.l),
              D7(b.w),  D7(b.h),  D7(b.yaw)};
  const D7 g = giou_3d_t(da, db);
  return {g.v, g.d};
}

}  // namespace difdet::geometry
