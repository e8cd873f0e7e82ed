#pragma once

#include <random>

#include "difdet/nn.hpp"
#include "difdet/types.hpp"
#include "difdet/voxelize.hpp"

namespace difdet::encoders {

/// Per-point image-plane projection: pixel coords plus a validity mask
/// (points behind the camera or outside the image are invalid).
struct ProjectedPoints {
  std::vector<double> u, v;
  std::vector<bool> valid;
};
ProjectedPoints project_points_to_image(const Mat& points,
                                        const Eigen::Matrix<double, 3, 4>& proj,
                                        int image_h, int image_w);

/// Four conv layers (two stride-2), total stride 4, GELU activations.
class ImageEncoder {
 public:
  ImageEncoder(nn::ParamStore& params, int out_channels, std::mt19937_64& rng);

  /// image: H*W*3 row-major doubles; H and W must be divisible by 4.
  nn::Var encode(nn::Graph& g, const std::vector<double>& image, int h,
                 int w) const;

  static constexpr int kStride = 4;
  int channels() const { return channels_; }

 private:
  nn::ParamStore& params_;
  int channels_;
};

/// Voxel stats (+ optionally image features gathered at projected points)
/// flattened along z, mapped per BEV cell and refined by two 3x3 convs.
class PointEncoder {
 public:
  PointEncoder(nn::ParamStore& params, int out_channels, int image_channels,
               int z_cells, std::mt19937_64& rng);

  /// img_features: valid Var when fusion is on, otherwise pass
  /// {nullptr, -1} and the image-feature channels stay zero so shapes are
  /// stable across the fusion ablation.
  nn::Var encode(nn::Graph& g, const data::VoxelGrid& grid, const Mat& points,
                 const Eigen::Matrix<double, 3, 4>& projection, int image_h,
                 int image_w, nn::Var img_features, int img_feat_h,
                 int img_feat_w) const;

  int channels() const { return channels_; }

  // stats per z-slab: (dx, dy, dz relative to the voxel center in voxel
  // units), intensity, occupancy
  static constexpr int kStatChannels = 5;

 private:
  nn::ParamStore& params_;
  int channels_;
  int image_channels_;
  int z_cells_;
};

/// Bilinear sampling weights at a continuous grid coordinate (gx, gy) on a
/// gw x gh grid stored row-major (row = gy * gw + gx). Neighbors are
/// border-clamped; returns false if the sample lies outside the grid's
/// coverage entirely.
bool bilinear_weights(double gx, double gy, int gw, int gh,
                      std::array<nn::SparseRowMap::Entry, 4>* out);

}  // namespace difdet::encoders
