#include "difdet/voxelize.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <unordered_map>

namespace difdet::data {

std::array<int, 3> VoxelRange::grid_dims() const {
  std::array<int, 3> d{};
  for (int k = 0; k < 3; ++k) {
    if (voxel_size[k] <= 0)
      throw std::invalid_argument("VoxelRange: voxel size must be positive");
    d[k] = int(std::lround((max[k] - min[k]) / voxel_size[k]));
    if (d[k] < 1) throw std::invalid_argument("VoxelRange: empty grid axis");
  }
  return d;
}

VoxelGrid voxelize(const Mat& points, const VoxelRange& range,
                   int max_points_per_voxel) {
  if (max_points_per_voxel < 1)
    throw std::invalid_argument("voxelize: max_points_per_voxel must be >= 1");
  VoxelGrid grid;
  grid.range = range;
  grid.dims = range.grid_dims();

  std::unordered_map<int, int> cell_of;  // linear index -> position in cells
  for (int p = 0; p < points.rows(); ++p) {
    std::array<int, 3> idx{};
    bool in_range = true;
    for (int k = 0; k < 3; ++k) {
      const double x = points(p, k);
      if (x < range.min[k] || x >= range.max[k]) {
        in_range = false;
        break;
      }
      idx[k] = int(std::floor((x - range.min[k]) / range.voxel_size[k]));
      idx[k] = std::min(idx[k], grid.dims[k] - 1);  // float-edge guard
    }
    if (!in_range) continue;
    const int lin = grid.linear_index(idx);
    auto it = cell_of.find(lin);
    if (it == cell_of.end()) {
      cell_of.emplace(lin, int(grid.cells.size()));
      grid.cells.push_back({idx, Eigen::Vector4d::Zero(), {p}});
    } else {
      auto& cell = grid.cells[it->second];
      if (int(cell.point_ids.size()) < max_points_per_voxel)
        cell.point_ids.push_back(p);
    }
  }

  std::sort(grid.cells.begin(), grid.cells.end(),
            [&](const VoxelGrid::Cell& a, const VoxelGrid::Cell& b) {
              return grid.linear_index(a.index) < grid.linear_index(b.index);
            });
  for (auto& cell : grid.cells) {
    Eigen::Vector4d acc = Eigen::Vector4d::Zero();
    for (int p : cell.point_ids)
      acc += points.row(p).head<4>().transpose();
    cell.feature = acc / double(cell.point_ids.size());
  }
  return grid;
}

}  // namespace difdet::data
