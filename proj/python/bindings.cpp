#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "difdet/diffusion.hpp"
#include "difdet/evaluation.hpp"
#include "difdet/geometry.hpp"
#include "difdet/kitti_io.hpp"
#include "difdet/losses.hpp"
#include "difdet/matching.hpp"
#include "difdet/selfcheck.hpp"
#include "difdet/voxelize.hpp"

namespace py = pybind11;
using namespace difdet;

namespace {

Box3D to_box(const std::array<double, 7>& v) {
  return Box3D(v[0], v[1], v[2], v[3], v[4], v[5], v[6]);
}

Mat to_mat(const std::vector<std::vector<double>>& rows) {
  const int n = int(rows.size());
  const int m = n > 0 ? int(rows[0].size()) : 0;
  Mat out(n, m);
  for (int i = 0; i < n; ++i) {
    if (int(rows[i].size()) != m)
      throw std::invalid_argument("ragged matrix");
    for (int j = 0; j < m; ++j) out(i, j) = rows[i][j];
  }
  return out;
}

}  // namespace

PYBIND11_MODULE(_core, mod) {
  mod.doc() = "Diffusion-based 3D object detection core operations";

  mod.def("iou_3d",
          [](const std::array<double, 7>& a, const std::array<double, 7>& b) {
            return geometry::iou_3d(to_box(a), to_box(b));
          },
          py::arg("box_a"), py::arg("box_b"),
          "Rotated 3D IoU of two (cx, cy, cz, l, w, h, yaw) boxes");
  mod.def("iou_bev",
          [](const std::array<double, 7>& a, const std::array<double, 7>& b) {
            return geometry::iou_bev(to_box(a), to_box(b));
          },
          py::arg("box_a"), py::arg("box_b"));
  mod.def("giou_3d",
          [](const std::array<double, 7>& a, const std::array<double, 7>& b) {
            return geometry::giou_3d(to_box(a), to_box(b));
          },
          py::arg("box_a"), py::arg("box_b"));

  mod.def("make_schedule",
          [](const std::string& kind, int steps) {
            const auto s = diffusion::make_schedule(
                diffusion::schedule_kind_from_string(kind), steps);
            std::vector<double> beta(s.beta.data(), s.beta.data() + s.steps);
            std::vector<double> ab(s.alpha_bar.data(),
                                   s.alpha_bar.data() + s.steps);
            return py::make_tuple(beta, ab);
          },
          py::arg("kind"), py::arg("steps"),
          "Returns (beta, alpha_bar) for the named variance schedule");
  mod.def("ddim_timesteps", &diffusion::ddim_timesteps, py::arg("total_steps"),
          py::arg("d_steps"));

  mod.def("hungarian_match",
          [](const std::vector<std::vector<double>>& cost) {
            return matching::hungarian_match(to_mat(cost)).pairs;
          },
          py::arg("cost"), "Optimal assignment as (row, column) pairs");
  mod.def("ota_assign",
          [](const std::vector<std::vector<double>>& cost, int k) {
            return matching::ota_assign(to_mat(cost), k).pairs;
          },
          py::arg("cost"), py::arg("k"));

  mod.def("focal_loss",
          [](const std::vector<std::vector<double>>& probs,
             const std::vector<std::vector<double>>& targets, double gamma) {
            return losses::focal_loss(to_mat(probs), to_mat(targets), gamma);
          },
          py::arg("probs"), py::arg("targets"), py::arg("gamma"));

  mod.def("compute_ap",
          [](const std::vector<bool>& tp, const std::vector<double>& scores,
             int num_gt, int interp) {
            return eval::compute_ap(tp, scores, num_gt, interp).ap;
          },
          py::arg("tp_flags"), py::arg("scores"), py::arg("num_gt"),
          py::arg("interp_points"));

  mod.def("voxel_grid_dims",
          [](const std::array<double, 3>& mn, const std::array<double, 3>& mx,
             const std::array<double, 3>& vox) {
            data::VoxelRange r;
            r.min = Eigen::Vector3d(mn[0], mn[1], mn[2]);
            r.max = Eigen::Vector3d(mx[0], mx[1], mx[2]);
            r.voxel_size = Eigen::Vector3d(vox[0], vox[1], vox[2]);
            return r.grid_dims();
          },
          py::arg("range_min"), py::arg("range_max"), py::arg("voxel_size"));

  mod.def("parse_kitti_label",
          [](const std::string& line) {
            const data::KittiRecord rec = data::parse_kitti_label(line);
            py::dict d;
            d["type"] = rec.type;
            d["truncated"] = rec.truncated;
            d["occluded"] = rec.occluded;
            d["alpha"] = rec.alpha;
            d["bbox"] = std::vector<double>(rec.bbox, rec.bbox + 4);
            d["ignorable"] = rec.ignorable;
            if (!rec.ignorable) {
              const auto v = rec.box.as_vector();
              d["box"] = std::vector<double>(v.data(), v.data() + 7);
            }
            if (rec.score) d["score"] = *rec.score;
            return d;
          },
          py::arg("line"));

  mod.def("selftest",
          [] {
            std::vector<py::dict> out;
            for (const auto& r : selfcheck::run_all()) {
              py::dict d;
              d["name"] = r.name;
              d["passed"] = r.passed;
              d["detail"] = r.detail;
              out.push_back(d);
            }
            return out;
          },
          "Runs the oracle suites and returns their results");
}
