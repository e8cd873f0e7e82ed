#include "difdet/roifusion.hpp"

#include <cmath>
#include <stdexcept>

#include "difdet/encoders.hpp"
#include "difdet/geometry.hpp"

namespace difdet::fusion {

// Fixed gain on zero-initialized residual output projections. The optimizer
// moves each weight by at most lr per step, so without a gain these layers
// stay near zero for the whole run; the gain lets small weights contribute
// full-scale residuals.
constexpr double kResidualGain = 8.0;

nn::Var roi_align_2d(nn::Var img_features, int feat_h, int feat_w,
                     const std::vector<Box3D>& boxes,
                     const Eigen::Matrix<double, 3, 4>& projection,
                     int image_h, int image_w, int grid) {
  const int n = int(boxes.size());
  const double stride_x = double(image_w) / feat_w;
  const double stride_y = double(image_h) / feat_h;
  nn::SparseRowMap map;
  map.output_rows = n;
  map.rows.resize(n);
  const double inv_samples = 1.0 / double(grid * grid);
  for (int i = 0; i < n; ++i) {
    const auto corners = geometry::box_corners(boxes[i]);
    double u0 = 0, v0 = 0, u1 = 0, v1 = 0;
    bool any = false;
    for (const auto& c : corners) {
      const Eigen::Vector3d px =
          projection * Eigen::Vector4d(c[0], c[1], c[2], 1.0);
      if (px.z() <= 1e-6) continue;
      const double u = px.x() / px.z(), v = px.y() / px.z();
      if (!any) {
        u0 = u1 = u;
        v0 = v1 = v;
        any = true;
      } else {
        u0 = std::min(u0, u);
        u1 = std::max(u1, u);
        v0 = std::min(v0, v);
        v1 = std::max(v1, v);
      }
    }
    if (!any) continue;
    u0 = std::max(u0, 0.0);
    v0 = std::max(v0, 0.0);
    u1 = std::min(u1, double(image_w));
    v1 = std::min(v1, double(image_h));
    if (u1 <= u0 || v1 <= v0) continue;
    for (int gy = 0; gy < grid; ++gy) {
      for (int gx = 0; gx < grid; ++gx) {
        const double u = u0 + (gx + 0.5) * (u1 - u0) / grid;
        const double v = v0 + (gy + 0.5) * (v1 - v0) / grid;
        std::array<nn::SparseRowMap::Entry, 4> wts;
        if (!encoders::bilinear_weights(u / stride_x - 0.5, v / stride_y - 0.5,
                                        feat_w, feat_h, &wts))
          continue;
        for (const auto& e : wts)
          map.rows[i].push_back({e.input_row, e.weight * inv_samples});
      }
    }
  }
  return nn::apply_row_map(img_features, map);
}

nn::Var roi_align_3d(nn::Var bev_features, const data::VoxelRange& range,
                     const std::vector<Box3D>& boxes, int grid) {
  const auto dims = range.grid_dims();
  const int n = int(boxes.size());
  nn::SparseRowMap map;
  map.output_rows = n;
  map.rows.resize(n);
  const double inv_samples = 1.0 / double(grid * grid);
  Mat geom(n, 4);
  for (int i = 0; i < n; ++i) {
    const Box3D& b = boxes[i];
    geom.row(i) << b.l, b.w, b.h, b.yaw;
    const double c = std::cos(b.yaw), s = std::sin(b.yaw);
    for (int gy = 0; gy < grid; ++gy) {
      for (int gx = 0; gx < grid; ++gx) {
        const double bx = b.l * ((gx + 0.5) / grid - 0.5);
        const double by = b.w * ((gy + 0.5) / grid - 0.5);
        const double wx = b.cx + c * bx - s * by;
        const double wy = b.cy + s * bx + c * by;
        // BEV rows are x-major, columns run along y
        const double ix = (wx - range.min.x()) / range.voxel_size.x() - 0.5;
        const double iy = (wy - range.min.y()) / range.voxel_size.y() - 0.5;
        std::array<nn::SparseRowMap::Entry, 4> wts;
        if (!encoders::bilinear_weights(iy, ix, dims[1], dims[0], &wts))
          continue;
        for (const auto& e : wts)
          map.rows[i].push_back({e.input_row, e.weight * inv_samples});
      }
    }
  }
  nn::Var pooled = nn::apply_row_map(bev_features, map);
  nn::Var extra = nn::constant(*bev_features.g, std::move(geom));
  return nn::concat_cols(pooled, extra);
}

void init_cross_attention(nn::ParamStore& params, const std::string& prefix,
                          int d_model, int heads, int head_dim,
                          std::mt19937_64& rng) {
  const double std_in = std::sqrt(1.0 / double(d_model));
  for (int h = 0; h < heads; ++h) {
    const std::string hs = "." + std::to_string(h);
    nn::init_normal(params.create(prefix + ".wq" + hs, d_model, head_dim),
                    std_in, rng);
    nn::init_normal(params.create(prefix + ".wk" + hs, d_model, head_dim),
                    std_in, rng);
    nn::init_normal(params.create(prefix + ".wv" + hs, d_model, head_dim),
                    std_in, rng);
  }
  // zero so residual fusion starts as identity on the point stream
  params.create(prefix + ".wout", heads * head_dim, d_model);
}

nn::Var cross_attention(nn::Graph& g, nn::ParamStore& params,
                        const std::string& prefix, nn::Var q_in, nn::Var kv_in,
                        int heads, int head_dim, bool diagonal, bool residual) {
  nn::Var heads_cat;
  for (int h = 0; h < heads; ++h) {
    const std::string hs = "." + std::to_string(h);
    nn::Var v = nn::matmul(kv_in, nn::leaf(g, params.get(prefix + ".wv" + hs)));
    nn::Var head_out;
    if (diagonal) {
      // one-element softmax: each proposal attends to itself with weight 1
      head_out = v;
    } else {
      nn::Var q =
          nn::matmul(q_in, nn::leaf(g, params.get(prefix + ".wq" + hs)));
      nn::Var k =
          nn::matmul(kv_in, nn::leaf(g, params.get(prefix + ".wk" + hs)));
      nn::Var scores =
          nn::scale(nn::matmul_nt(q, k), 1.0 / std::sqrt(double(head_dim)));
      head_out = nn::matmul(nn::softmax_rows(scores), v);
    }
    heads_cat = h == 0 ? head_out : nn::concat_cols(heads_cat, head_out);
  }
  // same fixed gain as the head: the zero-initialized output projection
  // would otherwise stay near zero under a bounded optimizer step budget
  nn::Var out = nn::scale(
      nn::matmul(heads_cat, nn::leaf(g, params.get(prefix + ".wout"))),
      kResidualGain);
  return residual ? nn::add(out, kv_in) : out;
}

void init_fuse_alternative(nn::ParamStore& params, const std::string& prefix,
                           const std::string& mode, int d_model,
                           std::mt19937_64& rng) {
  if (mode == "sum" || mode == "dp") return;
  if (mode == "concat") {
    nn::init_normal(params.create(prefix + ".w", 2 * d_model, d_model),
                    std::sqrt(2.0 / double(2 * d_model)), rng);
    params.create(prefix + ".b", 1, d_model);
    return;
  }
  if (mode == "mlp") {
    nn::init_normal(params.create(prefix + ".w1", 2 * d_model, d_model),
                    std::sqrt(2.0 / double(2 * d_model)), rng);
    params.create(prefix + ".b1", 1, d_model);
    nn::init_normal(params.create(prefix + ".w2", d_model, d_model),
                    std::sqrt(2.0 / double(d_model)), rng);
    params.create(prefix + ".b2", 1, d_model);
    return;
  }
  throw std::invalid_argument("unknown fusion mode: " + mode);
}

nn::Var fuse_alternative(nn::Graph& g, nn::ParamStore& params,
                         const std::string& prefix, const std::string& mode,
                         nn::Var a, nn::Var b) {
  if (mode == "sum") return nn::add(a, b);
  if (mode == "dp") return nn::mul(a, b);
  nn::Var cat = nn::concat_cols(a, b);
  if (mode == "concat") {
    return nn::add_row_broadcast(
        nn::matmul(cat, nn::leaf(g, params.get(prefix + ".w"))),
        nn::leaf(g, params.get(prefix + ".b")));
  }
  if (mode == "mlp") {
    nn::Var h = nn::gelu(nn::add_row_broadcast(
        nn::matmul(cat, nn::leaf(g, params.get(prefix + ".w1"))),
        nn::leaf(g, params.get(prefix + ".b1"))));
    return nn::add_row_broadcast(
        nn::matmul(h, nn::leaf(g, params.get(prefix + ".w2"))),
        nn::leaf(g, params.get(prefix + ".b2")));
  }
  throw std::invalid_argument("unknown fusion mode: " + mode);
}

Mat sinusoidal_time_embedding(int t, int dim) {
  if (dim % 2 != 0)
    throw std::invalid_argument("time embedding dim must be even");
  Mat e(1, dim);
  const int half = dim / 2;
  for (int i = 0; i < half; ++i) {
    const double freq = std::exp(-std::log(10000.0) * double(i) / half);
    e(0, 2 * i) = std::sin(t * freq);
    e(0, 2 * i + 1) = std::cos(t * freq);
  }
  return e;
}

void init_time_mlp(nn::ParamStore& params, const std::string& prefix, int dim,
                   std::mt19937_64& rng) {
  nn::init_normal(params.create(prefix + ".w1", dim, dim),
                  std::sqrt(2.0 / double(dim)), rng);
  params.create(prefix + ".b1", 1, dim);
  // zero output projection: the timestep signal fades in during training
  params.create(prefix + ".w2", dim, dim);
  params.create(prefix + ".b2", 1, dim);
}

nn::Var add_time_embedding(nn::Graph& g, nn::ParamStore& params,
                           const std::string& prefix, nn::Var x, int t) {
  nn::Var e = nn::constant(g, sinusoidal_time_embedding(t, x.cols()));
  nn::Var h = nn::gelu(nn::add_row_broadcast(
      nn::matmul(e, nn::leaf(g, params.get(prefix + ".w1"))),
      nn::leaf(g, params.get(prefix + ".b1"))));
  nn::Var emb = nn::scale(
      nn::add_row_broadcast(
          nn::matmul(h, nn::leaf(g, params.get(prefix + ".w2"))),
          nn::leaf(g, params.get(prefix + ".b2"))),
      kResidualGain);
  return nn::add_row_broadcast(x, emb);
}

void init_detection_head(nn::ParamStore& params, const std::string& prefix,
                         int d_model, int hidden, int num_classes,
                         std::mt19937_64& rng) {
  nn::init_normal(params.create(prefix + ".h.w", d_model, hidden),
                  std::sqrt(2.0 / double(d_model)), rng);
  params.create(prefix + ".h.b", 1, hidden);
  // zero output layers: the head starts by echoing the proposals and
  // predicting uniform class logits
  params.create(prefix + ".reg.w", hidden, 7);
  params.create(prefix + ".reg.b", 1, 7);
  params.create(prefix + ".cls.w", hidden, num_classes + 1);
  params.create(prefix + ".cls.b", 1, num_classes + 1);
}

// Same idea for the head output layers: small weights must be able to
// express full-scale box deltas and confident logits.
constexpr double kHeadGain = 16.0;

HeadOutput detection_head(nn::Graph& g, nn::ParamStore& params,
                          const std::string& prefix, nn::Var features,
                          const Mat& proposals_signal) {
  nn::Var h = nn::gelu(nn::add_row_broadcast(
      nn::matmul(features, nn::leaf(g, params.get(prefix + ".h.w"))),
      nn::leaf(g, params.get(prefix + ".h.b"))));
  nn::Var deltas = nn::scale(
      nn::add_row_broadcast(
          nn::matmul(h, nn::leaf(g, params.get(prefix + ".reg.w"))),
          nn::leaf(g, params.get(prefix + ".reg.b"))),
      kHeadGain);
  nn::Var boxes = nn::add(nn::constant(g, proposals_signal), deltas);
  nn::Var logits = nn::scale(
      nn::add_row_broadcast(
          nn::matmul(h, nn::leaf(g, params.get(prefix + ".cls.w"))),
          nn::leaf(g, params.get(prefix + ".cls.b"))),
      kHeadGain);
  return {boxes, logits};
}

}  // namespace difdet::fusion
