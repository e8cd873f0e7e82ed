#include "difdet/model.hpp"

#include <cmath>
#include <stdexcept>

#include "difdet/geometry.hpp"
#include "difdet/voxelize.hpp"

namespace difdet::model {

Model::Model(const config::RunConfig& cfg)
    : cfg_(cfg),
      norm_(cfg.normalizer()),
      sched_(cfg.schedule()),
      range_(cfg.voxel_range()) {
  std::mt19937_64 rng(cfg.model.seed);
  const auto& m = cfg_.model;
  const auto dims = range_.grid_dims();
  img_enc_ = std::make_unique<encoders::ImageEncoder>(params_,
                                                      m.image_channels, rng);
  pt_enc_ = std::make_unique<encoders::PointEncoder>(
      params_, m.bev_channels, m.image_channels, dims[2], rng);
  nn::init_normal(params_.create("roi2.proj.w", m.image_channels, m.d_model),
                  std::sqrt(2.0 / double(m.image_channels)), rng);
  params_.create("roi2.proj.b", 1, m.d_model);
  nn::init_normal(params_.create("roi3.proj.w", m.bev_channels + 4, m.d_model),
                  std::sqrt(2.0 / double(m.bev_channels + 4)), rng);
  params_.create("roi3.proj.b", 1, m.d_model);
  if (m.fusion_mode == "res_ca" || m.fusion_mode == "ca")
    fusion::init_cross_attention(params_, "att", m.d_model, m.heads,
                                 m.head_dim, rng);
  else
    fusion::init_fuse_alternative(params_, "fuse", m.fusion_mode, m.d_model,
                                  rng);
  fusion::init_time_mlp(params_, "time", m.d_model, rng);
  // the head also receives both branches' proposal signals (7 dims each)
  // so box deltas can be regressed against the exact proposal geometry
  fusion::init_detection_head(params_, "head", m.d_model + 14, m.head_hidden,
                              cfg_.data.num_classes, rng);
}

Model::Encoded Model::encode(const Scene& scene) const {
  ++encode_calls_;
  Encoded enc;
  enc.graph = std::make_shared<nn::Graph>();
  enc.projection = scene.projection;
  enc.image_h = scene.image_h;
  enc.image_w = scene.image_w;
  enc.grid_dims = range_.grid_dims();
  nn::Graph& g = *enc.graph;

  if (cfg_.model.image_branch) {
    enc.img_feats =
        img_enc_->encode(g, scene.image, scene.image_h, scene.image_w);
    enc.feat_h = scene.image_h / encoders::ImageEncoder::kStride;
    enc.feat_w = scene.image_w / encoders::ImageEncoder::kStride;
  }

  const data::VoxelGrid grid =
      data::voxelize(scene.points, range_, cfg_.data.max_points_per_voxel);
  nn::Var img_for_fusion;  // stays unset unless voxel-level fusion is on
  if (cfg_.model.image_branch && cfg_.model.encoder_fusion)
    img_for_fusion = enc.img_feats;
  enc.bev_feats =
      pt_enc_->encode(g, grid, scene.points, scene.projection, scene.image_h,
                      scene.image_w, img_for_fusion, enc.feat_h, enc.feat_w);
  return enc;
}

Model::Decoded Model::decode(Encoded& enc, const Mat& point_proposals,
                             const Mat& image_proposals, int t,
                             double dropout_rate, std::mt19937_64* rng) const {
  if (point_proposals.cols() != 7 || image_proposals.cols() != 7 ||
      point_proposals.rows() != image_proposals.rows())
    throw std::invalid_argument("decode: proposals must be matching N x 7");
  if (dropout_rate > 0 && rng == nullptr)
    throw std::invalid_argument("decode: dropout requires an rng");
  nn::Graph& g = *enc.graph;
  const auto& m = cfg_.model;

  // Weight-shared refinement: each round pools RoI features at the current
  // boxes, fuses the branches, and regresses a delta. Later rounds re-pool
  // at the previous prediction, treated as a constant so gradients flow
  // through features rather than pooling coordinates.
  Mat cur_p = point_proposals;
  Mat cur_i = image_proposals;
  fusion::HeadOutput head;
  Decoded out;
  const int rounds = std::max(1, m.head_rounds);
  for (int round = 0; round < rounds; ++round) {
    const Mat clamped_p = diffusion::clamp_signal(cur_p, norm_.signal_scale);
    const Mat clamped_i = diffusion::clamp_signal(cur_i, norm_.signal_scale);
    const std::vector<Box3D> boxes = norm_.denormalize_all(clamped_p);

    nn::Var roi3 = fusion::roi_align_3d(enc.bev_feats, range_, boxes,
                                        m.roi_grid);
    nn::Var pt = nn::gelu(nn::add_row_broadcast(
        nn::matmul(roi3, nn::leaf(g, params_.get("roi3.proj.w"))),
        nn::leaf(g, params_.get("roi3.proj.b"))));

    nn::Var fused = pt;
    if (m.image_branch) {
      const std::vector<Box3D> img_boxes = norm_.denormalize_all(clamped_i);
      nn::Var roi2 = fusion::roi_align_2d(enc.img_feats, enc.feat_h,
                                          enc.feat_w, img_boxes,
                                          enc.projection, enc.image_h,
                                          enc.image_w, m.roi_grid);
      nn::Var img = nn::gelu(nn::add_row_broadcast(
          nn::matmul(roi2, nn::leaf(g, params_.get("roi2.proj.w"))),
          nn::leaf(g, params_.get("roi2.proj.b"))));
      const bool diagonal = m.attention_scope == "diagonal";
      if (m.fusion_mode == "res_ca")
        fused = fusion::cross_attention(g, params_, "att", img, pt, m.heads,
                                        m.head_dim, diagonal, true);
      else if (m.fusion_mode == "ca")
        fused = fusion::cross_attention(g, params_, "att", img, pt, m.heads,
                                        m.head_dim, diagonal, false);
      else
        fused = fusion::fuse_alternative(g, params_, "fuse", m.fusion_mode,
                                         img, pt);
    }

    if (m.time_embedding)
      fused = fusion::add_time_embedding(g, params_, "time", fused, t);
    if (dropout_rate > 0) fused = nn::dropout(fused, dropout_rate, *rng);

    // append the proposal signals after dropout so the geometry always
    // reaches the head intact
    fused = nn::concat_cols(nn::concat_cols(fused, nn::constant(g, clamped_p)),
                            nn::constant(g, clamped_i));

    head = fusion::detection_head(g, params_, "head", fused, cur_p);
    if (round + 1 < rounds) {
      out.rounds.push_back({head.boxes_signal, head.cls_logits,
                            nn::sigmoid(head.cls_logits), {}});
      cur_p = head.boxes_signal.val();
      cur_i = cur_p;
    }
  }
  out.boxes_signal = head.boxes_signal;
  out.cls_logits = head.cls_logits;
  out.cls_probs = nn::sigmoid(head.cls_logits);
  return out;
}

namespace {

// d/dp of the per-element focal term; zero where the clamp is active.
double focal_dp(double p, double target, double gamma) {
  if (p <= losses::kProbEps || p >= 1.0 - losses::kProbEps) return 0.0;
  if (target > 0.5)
    return gamma * std::pow(1.0 - p, gamma - 1.0) * std::log(p) -
           std::pow(1.0 - p, gamma) / p;
  return -gamma * std::pow(p, gamma - 1.0) * std::log(1.0 - p) +
         std::pow(p, gamma) / (1.0 - p);
}

}  // namespace

Model::LossResult Model::loss(const Decoded& dec,
                              const std::vector<Box3D>& gt_boxes,
                              const std::vector<int>& gt_labels,
                              const std::vector<std::pair<int, int>>& pairs)
    const {
  nn::Graph& g = *dec.boxes_signal.g;
  const losses::LossWeights w = cfg_.loss_weights();
  const int n = dec.boxes_signal.rows();
  const int nc = dec.cls_probs.cols();

  Mat targets = Mat::Zero(n, nc);
  for (int i = 0; i < n; ++i) targets(i, nc - 1) = 1.0;
  for (const auto& [pi, gj] : pairs) {
    targets.row(pi).setZero();
    targets(pi, gt_labels.at(gj)) = 1.0;
  }

  const double gamma = w.gamma;
  nn::Var cls = nn::custom(
      g, Mat::Constant(1, 1, losses::focal_loss(dec.cls_probs.val(), targets,
                                                gamma)),
      {dec.cls_probs},
      [targets, gamma, n](nn::Graph& gg, const Mat& dout,
                          const std::vector<int>& pids) {
        if (!gg.needs_grad(pids[0])) return;
        const Mat& p = gg.val(pids[0]);
        Mat& dp = gg.grad(pids[0]);
        const double s = dout(0, 0) / double(n);
        for (int i = 0; i < p.rows(); ++i)
          for (int j = 0; j < p.cols(); ++j)
            dp(i, j) += s * focal_dp(p(i, j), targets(i, j), gamma);
      });

  // Regression group, averaged over matched pairs. Forward values reuse the
  // scalar loss helpers; backward chains the exact GIoU/center derivatives
  // through the affine signal-to-metric map.
  losses::LossBreakdown bd;
  bd.cls = cls.val()(0, 0);
  bd.matched_pairs = int(pairs.size());
  const Mat& sig = dec.boxes_signal.val();
  Mat dsig = Mat::Zero(n, 7);
  if (!pairs.empty()) {
    const double inv_m = 1.0 / double(pairs.size());
    // per-dimension scale of denormalize (yaw wrap and the size floor have
    // unit and zero slope respectively)
    const Eigen::Vector3d half = 0.5 * (norm_.center_max - norm_.center_min);
    const double ss = norm_.signal_scale;
    const double diag = norm_.range_diagonal();
    for (const auto& [pi, gj] : pairs) {
      const Eigen::Matrix<double, 7, 1> ps = sig.row(pi).transpose();
      const Box3D& gt = gt_boxes.at(gj);
      const losses::RegressionTerms terms =
          losses::regression_terms_signal(ps, gt, norm_);
      bd.l1 += terms.l1 * inv_m;
      bd.giou += terms.giou * inv_m;
      bd.center += terms.center * inv_m;

      const Eigen::Matrix<double, 7, 1> gs = norm_.normalize(gt);
      const Box3D pred = norm_.denormalize(ps);
      Eigen::Matrix<double, 7, 1> scale;  // d(metric)/d(signal)
      for (int k = 0; k < 3; ++k) scale[k] = half[k] / ss;
      for (int k = 0; k < 3; ++k) {
        const double raw = (ps[3 + k] / ss + 1.0) * 0.5 * norm_.max_size[k];
        scale[3 + k] = raw > 1e-3 ? 0.5 * norm_.max_size[k] / ss : 0.0;
      }
      scale[6] = kPi / ss;

      Eigen::Matrix<double, 7, 1> grow = Eigen::Matrix<double, 7, 1>::Zero();
      for (int k = 0; k < 7; ++k) {
        const double d = ps[k] - gs[k];
        grow[k] += w.lambda3 * (d > 0 ? 1.0 : (d < 0 ? -1.0 : 0.0)) / 7.0;
      }
      const auto [giou_val, giou_grad] = geometry::giou_3d_grad(pred, gt);
      (void)giou_val;
      for (int k = 0; k < 7; ++k)
        grow[k] -= w.lambda4 * giou_grad[k] * scale[k];
      const Eigen::Vector3d dc(pred.cx - gt.cx, pred.cy - gt.cy,
                               pred.cz - gt.cz);
      const double dn = dc.norm();
      if (dn > 1e-12)
        for (int k = 0; k < 3; ++k)
          grow[k] += w.lambda5 * dc[k] / dn / diag * scale[k];
      dsig.row(pi) += inv_m * grow.transpose();
    }
  }
  const double reg_val =
      w.lambda3 * bd.l1 + w.lambda4 * bd.giou + w.lambda5 * bd.center;
  nn::Var reg = nn::custom(
      g, Mat::Constant(1, 1, reg_val), {dec.boxes_signal},
      [dsig](nn::Graph& gg, const Mat& dout, const std::vector<int>& pids) {
        if (!gg.needs_grad(pids[0])) return;
        gg.grad(pids[0]) += dout(0, 0) * dsig;
      });

  nn::Var total =
      nn::add(nn::scale(cls, w.lambda1), nn::scale(reg, w.lambda2));
  bd.total = total.val()(0, 0);
  return {total, bd};
}

}  // namespace difdet::model
