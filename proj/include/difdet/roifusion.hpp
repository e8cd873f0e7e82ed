#pragma once

#include <random>
#include <string>
#include <vector>

#include "difdet/nn.hpp"
#include "difdet/types.hpp"
#include "difdet/voxelize.hpp"

namespace difdet::fusion {

/// G x G bilinear samples over the axis-aligned rect covering the projected
/// corners of each box, mean-pooled per box to one row of image-feature
/// channels. Boxes fully behind the camera or with an empty on-image rect
/// pool zeros.
nn::Var roi_align_2d(nn::Var img_features, int feat_h, int feat_w,
                     const std::vector<Box3D>& boxes,
                     const Eigen::Matrix<double, 3, 4>& projection,
                     int image_h, int image_w, int grid);

/// G x G bilinear samples over the rotated BEV footprint of each box,
/// mean-pooled, with the box geometry (l, w, h, yaw) appended as four extra
/// columns so the pooled feature keeps the proposal's own shape.
nn::Var roi_align_3d(nn::Var bev_features, const data::VoxelRange& range,
                     const std::vector<Box3D>& boxes, int grid);

/// Creates the projection parameters used by the matching apply functions
/// below. Weight shapes depend only on (d_model, heads, head_dim); the
/// output projection starts at zero so residual fusion begins as identity.
void init_cross_attention(nn::ParamStore& params, const std::string& prefix,
                          int d_model, int heads, int head_dim,
                          std::mt19937_64& rng);

/// Multi-head cross attention: queries from q_in, keys and values from
/// kv_in (both N x d_model). With `diagonal` each row attends only to its
/// own row (the softmax collapses to weight one). With `residual` kv_in is
/// added back to the projected attention output.
nn::Var cross_attention(nn::Graph& g, nn::ParamStore& params,
                        const std::string& prefix, nn::Var q_in, nn::Var kv_in,
                        int heads, int head_dim, bool diagonal, bool residual);

void init_fuse_alternative(nn::ParamStore& params, const std::string& prefix,
                           const std::string& mode, int d_model,
                           std::mt19937_64& rng);

/// Non-attention fusion of two N x d_model streams: "sum", elementwise
/// product "dp", linear "concat" or two-layer "mlp" on the concatenation.
nn::Var fuse_alternative(nn::Graph& g, nn::ParamStore& params,
                         const std::string& prefix, const std::string& mode,
                         nn::Var a, nn::Var b);

/// Fixed sinusoidal embedding of an integer timestep, 1 x dim
/// (interleaved sin/cos over geometrically spaced frequencies).
Mat sinusoidal_time_embedding(int t, int dim);

void init_time_mlp(nn::ParamStore& params, const std::string& prefix, int dim,
                   std::mt19937_64& rng);

/// Two-layer MLP over the sinusoidal embedding, broadcast-added to x.
nn::Var add_time_embedding(nn::Graph& g, nn::ParamStore& params,
                           const std::string& prefix, nn::Var x, int t);

void init_detection_head(nn::ParamStore& params, const std::string& prefix,
                         int d_model, int hidden, int num_classes,
                         std::mt19937_64& rng);

struct HeadOutput {
  nn::Var boxes_signal;  // N x 7, proposal signal plus predicted deltas
  nn::Var cls_logits;    // N x (num_classes + 1), trailing no-object channel
};

/// Shared hidden layer, then zero-initialised regression and classification
/// projections. Regression predicts deltas on the signal-space proposals so
/// the untrained head returns them unchanged.
HeadOutput detection_head(nn::Graph& g, nn::ParamStore& params,
                          const std::string& prefix, nn::Var features,
                          const Mat& proposals_signal);

}  // namespace difdet::fusion
