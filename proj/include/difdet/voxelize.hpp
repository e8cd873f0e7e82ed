#pragma once

#include <array>
#include <vector>

#include "difdet/types.hpp"

namespace difdet::data {

struct VoxelRange {
  Eigen::Vector3d min;
  Eigen::Vector3d max;
  Eigen::Vector3d voxel_size;

  std::array<int, 3> grid_dims() const;
};

/// Sparse voxel grid: only occupied cells are stored, sorted by linear index
/// so iteration order is deterministic.
struct VoxelGrid {
  VoxelRange range;
  std::array<int, 3> dims{};

  struct Cell {
    std::array<int, 3> index;
    Eigen::Vector4d feature;        // mean of (x, y, z, intensity)
    std::vector<int> point_ids;     // kept points, capped, first-come order
  };
  std::vector<Cell> cells;

  int linear_index(const std::array<int, 3>& idx) const {
    return (idx[0] * dims[1] + idx[1]) * dims[2] + idx[2];
  }
};

/// Points on or beyond an upper range boundary are dropped (half-open
/// intervals per axis). Per-voxel point lists are capped at
/// max_points_per_voxel keeping the earliest points.
VoxelGrid voxelize(const Mat& points, const VoxelRange& range,
                   int max_points_per_voxel);

}  // namespace difdet::data
