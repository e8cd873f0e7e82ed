#include <algorithm>
#include <random>

#include "difdet/voxelize.hpp"
#include "doctest.h"

using namespace difdet;

namespace {

data::VoxelRange kitti_range() {
  data::VoxelRange r;
  r.min = Eigen::Vector3d(2.0, -30.08, -3.0);
  r.max = Eigen::Vector3d(46.8, 30.08, 1.0);
  r.voxel_size = Eigen::Vector3d(0.16, 0.16, 0.16);
  return r;
}

data::VoxelRange desk_range() {
  data::VoxelRange r;
  r.min = Eigen::Vector3d(0.0, -8.0, -1.0);
  r.max = Eigen::Vector3d(16.0, 8.0, 3.0);
  r.voxel_size = Eigen::Vector3d(0.5, 0.5, 0.5);
  return r;
}

}  // namespace

TEST_CASE("grid dimensions for the reference detection range") {
  const auto dims = kitti_range().grid_dims();
  CHECK(dims[0] == 280);
  CHECK(dims[1] == 376);
  CHECK(dims[2] == 25);
  const auto d = desk_range().grid_dims();
  CHECK(d[0] == 32);
  CHECK(d[1] == 32);
  CHECK(d[2] == 8);
}

TEST_CASE("corner point lands in cell (0, 0, 0)") {
  Mat pts(1, 4);
  pts << 0.0, -8.0, -1.0, 0.5;
  const auto g = data::voxelize(pts, desk_range(), 32);
  REQUIRE(g.cells.size() == 1);
  CHECK(g.cells[0].index == std::array<int, 3>{0, 0, 0});
  CHECK(g.cells[0].point_ids == std::vector<int>{0});
}

TEST_CASE("points on or beyond the upper boundary are dropped") {
  Mat pts(4, 4);
  pts << 16.0, 0.0, 0.0, 1.0,   // on max x, dropped
      8.0, 8.0, 0.0, 1.0,       // on max y, dropped
      -0.01, 0.0, 0.0, 1.0,     // below min x, dropped
      15.99, 7.99, 2.99, 1.0;   // interior, kept
  const auto g = data::voxelize(pts, desk_range(), 32);
  REQUIRE(g.cells.size() == 1);
  CHECK(g.cells[0].index == std::array<int, 3>{31, 31, 7});
}

TEST_CASE("per-cell point lists cap at the limit keeping the first arrivals") {
  Mat pts(5, 4);
  for (int i = 0; i < 5; ++i) pts.row(i) << 0.1, 0.1, 0.1, double(i);
  const auto g = data::voxelize(pts, desk_range(), 3);
  REQUIRE(g.cells.size() == 1);
  CHECK(g.cells[0].point_ids == std::vector<int>({0, 1, 2}));
  // the mean feature covers the kept points only
  CHECK(g.cells[0].feature[3] == doctest::Approx(1.0));
}

TEST_CASE("cell features are the mean of their points") {
  Mat pts(3, 4);
  pts << 1.0, 1.0, 0.0, 0.2, 1.1, 1.2, 0.1, 0.4, 1.3, 1.4, 0.3, 0.6;
  const auto g = data::voxelize(pts, desk_range(), 32);
  bool found = false;
  for (const auto& c : g.cells) {
    if (c.point_ids.size() == 3) {
      found = true;
      CHECK(c.feature[0] == doctest::Approx((1.0 + 1.1 + 1.3) / 3));
      CHECK(c.feature[1] == doctest::Approx((1.0 + 1.2 + 1.4) / 3));
      CHECK(c.feature[2] == doctest::Approx((0.0 + 0.1 + 0.3) / 3));
      CHECK(c.feature[3] == doctest::Approx(0.4));
    }
  }
  CHECK(found);
}

TEST_CASE("occupancy is insensitive to point ordering") {
  std::mt19937_64 rng(41);
  std::uniform_real_distribution<double> ux(0.0, 15.9), uy(-8.0, 7.9),
      uz(-1.0, 2.9), ui(0.0, 1.0);
  Mat pts(200, 4);
  for (int i = 0; i < 200; ++i)
    pts.row(i) << ux(rng), uy(rng), uz(rng), ui(rng);
  std::vector<int> perm(200);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  Mat shuffled(200, 4);
  for (int i = 0; i < 200; ++i) shuffled.row(i) = pts.row(perm[i]);

  const auto a = data::voxelize(pts, desk_range(), 200);
  const auto b = data::voxelize(shuffled, desk_range(), 200);
  REQUIRE(a.cells.size() == b.cells.size());
  for (size_t k = 0; k < a.cells.size(); ++k) {
    CHECK(a.cells[k].index == b.cells[k].index);
    CHECK((a.cells[k].feature - b.cells[k].feature).cwiseAbs().maxCoeff() <
          1e-9);
    CHECK(a.cells[k].point_ids.size() == b.cells[k].point_ids.size());
  }
}

TEST_CASE("cells come out sorted by linear index and round-trip it") {
  std::mt19937_64 rng(43);
  std::uniform_real_distribution<double> ux(0.0, 15.9), uy(-8.0, 7.9),
      uz(-1.0, 2.9);
  Mat pts(500, 4);
  for (int i = 0; i < 500; ++i) pts.row(i) << ux(rng), uy(rng), uz(rng), 1.0;
  const auto g = data::voxelize(pts, desk_range(), 8);
  int prev = -1;
  for (const auto& c : g.cells) {
    const int lin = g.linear_index(c.index);
    CHECK(lin > prev);
    prev = lin;
    // decompose the linear index back to the 3d cell coordinates
    const int z = lin % g.dims[2];
    const int y = (lin / g.dims[2]) % g.dims[1];
    const int x = lin / (g.dims[2] * g.dims[1]);
    CHECK(std::array<int, 3>{x, y, z} == c.index);
  }
}
