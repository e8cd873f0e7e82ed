#pragma once

#include <memory>
#include <random>
#include <utility>
#include <vector>

#include "difdet/config.hpp"
#include "difdet/encoders.hpp"
#include "difdet/losses.hpp"
#include "difdet/nn.hpp"
#include "difdet/roifusion.hpp"
#include "difdet/types.hpp"

namespace difdet::model {

/// Full detector: image and BEV point encoders, RoI fusion with cross
/// attention, timestep conditioning and the detection head, all on one
/// parameter store. Encoding runs once per scene; decode can be called many
/// times on the same encoded features (one call per denoising step).
class Model {
 public:
  explicit Model(const config::RunConfig& cfg);

  struct Encoded {
    std::shared_ptr<nn::Graph> graph;
    nn::Var img_feats;  // unset when the image branch is disabled
    int feat_h = 0, feat_w = 0;
    nn::Var bev_feats;
    std::array<int, 3> grid_dims{};
    Eigen::Matrix<double, 3, 4> projection;
    int image_h = 0, image_w = 0;
  };
  Encoded encode(const Scene& scene) const;

  struct Decoded {
    nn::Var boxes_signal;  // N x 7
    nn::Var cls_logits;    // N x (C+1)
    nn::Var cls_probs;     // sigmoid(cls_logits)
    // outputs of the earlier refinement rounds, oldest first; the training
    // loss supervises every round so each one learns to refine its input
    std::vector<Decoded> rounds;
  };
  /// The two branches carry distinct noisy box sets: point_proposals feed
  /// the BEV RoI crops and the head's regression base, image_proposals only
  /// the projected 2D RoI rects (ignored when the image branch is off; pass
  /// the point set again to share boxes). Both are N x 7 in signal space.
  /// dropout_rate > 0 requires an rng and is used during training only.
  Decoded decode(Encoded& enc, const Mat& point_proposals,
                 const Mat& image_proposals, int t, double dropout_rate = 0.0,
                 std::mt19937_64* rng = nullptr) const;

  struct LossResult {
    nn::Var total;  // 1 x 1, differentiable
    losses::LossBreakdown breakdown;
  };
  /// Set-prediction loss on a decode output; `pairs` are (prediction, gt)
  /// indices from the matcher. Gradients of the GIoU and center terms use
  /// the exact dual-number derivatives chained through denormalization.
  LossResult loss(const Decoded& dec, const std::vector<Box3D>& gt_boxes,
                  const std::vector<int>& gt_labels,
                  const std::vector<std::pair<int, int>>& pairs) const;

  nn::ParamStore& params() { return params_; }
  const nn::ParamStore& params() const { return params_; }
  const config::RunConfig& cfg() const { return cfg_; }
  const diffusion::BoxNormalizer& normalizer() const { return norm_; }
  const diffusion::DiffusionSchedule& schedule() const { return sched_; }
  const data::VoxelRange& voxel_range() const { return range_; }
  std::int64_t encode_calls() const { return encode_calls_; }

 private:
  config::RunConfig cfg_;
  diffusion::BoxNormalizer norm_;
  diffusion::DiffusionSchedule sched_;
  data::VoxelRange range_;
  // forward passes are const but bind leaves for gradient accumulation
  mutable nn::ParamStore params_;
  std::unique_ptr<encoders::ImageEncoder> img_enc_;
  std::unique_ptr<encoders::PointEncoder> pt_enc_;
  mutable std::int64_t encode_calls_ = 0;
};

}  // namespace difdet::model
