#include "difdet/encoders.hpp"

#include <cmath>
#include <stdexcept>

namespace difdet::encoders {

ProjectedPoints project_points_to_image(const Mat& points,
                                        const Eigen::Matrix<double, 3, 4>& proj,
                                        int image_h, int image_w) {
  ProjectedPoints out;
  const int n = int(points.rows());
  out.u.resize(n);
  out.v.resize(n);
  out.valid.resize(n);
  for (int i = 0; i < n; ++i) {
    const Eigen::Vector4d hom(points(i, 0), points(i, 1), points(i, 2), 1.0);
    const Eigen::Vector3d px = proj * hom;
    if (px.z() <= 1e-6) {
      out.u[i] = out.v[i] = 0;
      out.valid[i] = false;
      continue;
    }
    const double u = px.x() / px.z(), v = px.y() / px.z();
    out.u[i] = u;
    out.v[i] = v;
    out.valid[i] = u >= 0 && u < image_w && v >= 0 && v < image_h;
  }
  return out;
}

bool bilinear_weights(double gx, double gy, int gw, int gh,
                      std::array<nn::SparseRowMap::Entry, 4>* out) {
  if (gx < -0.5 || gx > gw - 0.5 || gy < -0.5 || gy > gh - 0.5) return false;
  const int x0 = int(std::floor(gx)), y0 = int(std::floor(gy));
  const double fx = gx - x0, fy = gy - y0;
  const double wts[4] = {(1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy,
                         fx * fy};
  const int xs[4] = {x0, x0 + 1, x0, x0 + 1};
  const int ys[4] = {y0, y0, y0 + 1, y0 + 1};
  for (int k = 0; k < 4; ++k) {
    const int cx = std::clamp(xs[k], 0, gw - 1);
    const int cy = std::clamp(ys[k], 0, gh - 1);
    (*out)[k] = {cy * gw + cx, wts[k]};
  }
  return true;
}

namespace {

struct ConvParams {
  nn::Param *w, *b;
};

ConvParams make_conv(nn::ParamStore& params, const std::string& name, int cin,
                     int cout, int k, std::mt19937_64& rng) {
  nn::Param& w = params.create(name + ".w", k * k * cin, cout);
  nn::Param& b = params.create(name + ".b", 1, cout);
  nn::init_normal(w, std::sqrt(2.0 / double(k * k * cin)), rng);
  return {&w, &b};
}

}  // namespace

ImageEncoder::ImageEncoder(nn::ParamStore& params, int out_channels,
                           std::mt19937_64& rng)
    : params_(params), channels_(out_channels) {
  const int c1 = std::max(8, out_channels / 4);
  const int c2 = std::max(8, out_channels / 2);
  make_conv(params, "img.conv0", 3, c1, 3, rng);
  make_conv(params, "img.conv1", c1, c2, 3, rng);
  make_conv(params, "img.conv2", c2, out_channels, 3, rng);
  make_conv(params, "img.conv3", out_channels, out_channels, 3, rng);
}

nn::Var ImageEncoder::encode(nn::Graph& g, const std::vector<double>& image,
                             int h, int w) const {
  if (h % kStride != 0 || w % kStride != 0)
    throw std::invalid_argument("ImageEncoder: dims not divisible by stride");
  if (int(image.size()) != h * w * 3)
    throw std::invalid_argument("ImageEncoder: image size mismatch");
  Mat in(h * w, 3);
  for (int i = 0; i < h * w; ++i)
    for (int c = 0; c < 3; ++c) in(i, c) = image[size_t(i) * 3 + c];

  auto conv = [&](nn::Var x, const std::string& name, int hh, int ww,
                  int stride) {
    nn::Var wv = nn::leaf(g, params_.get(name + ".w"));
    nn::Var bv = nn::leaf(g, params_.get(name + ".b"));
    return nn::conv2d(x, wv, bv, hh, ww, 3, stride, 1);
  };
  nn::Var x = nn::constant(g, std::move(in));
  x = nn::gelu(conv(x, "img.conv0", h, w, 2));
  x = nn::gelu(conv(x, "img.conv1", h / 2, w / 2, 2));
  x = nn::gelu(conv(x, "img.conv2", h / 4, w / 4, 1));
  x = conv(x, "img.conv3", h / 4, w / 4, 1);
  return x;
}

PointEncoder::PointEncoder(nn::ParamStore& params, int out_channels,
                           int image_channels, int z_cells,
                           std::mt19937_64& rng)
    : params_(params),
      channels_(out_channels),
      image_channels_(image_channels),
      z_cells_(z_cells) {
  const int in_ch = z_cells * (kStatChannels + image_channels);
  nn::Param& w = params.create("pts.proj.w", in_ch, out_channels);
  params.create("pts.proj.b", 1, out_channels);
  nn::init_normal(w, std::sqrt(2.0 / double(in_ch)), rng);
  make_conv(params, "pts.conv0", out_channels, out_channels, 3, rng);
  make_conv(params, "pts.conv1", out_channels, out_channels, 3, rng);
}

nn::Var PointEncoder::encode(nn::Graph& g, const data::VoxelGrid& grid,
                             const Mat& points,
                             const Eigen::Matrix<double, 3, 4>& projection,
                             int image_h, int image_w, nn::Var img_features,
                             int img_feat_h, int img_feat_w) const {
  const auto dims = grid.dims;
  const int bev_cells = dims[0] * dims[1];
  const int in_ch = z_cells_ * (kStatChannels + image_channels_);
  if (dims[2] != z_cells_)
    throw std::invalid_argument("PointEncoder: z cell count mismatch");

  // Constant part: per-voxel stats scattered into the dense BEV input.
  Mat dense = Mat::Zero(bev_cells, in_ch);
  const auto& r = grid.range;
  for (const auto& cell : grid.cells) {
    const int bev_row = cell.index[0] * dims[1] + cell.index[1];
    const int base = cell.index[2] * (kStatChannels + image_channels_);
    Eigen::Vector3d center;
    for (int k = 0; k < 3; ++k)
      center[k] = r.min[k] + (cell.index[k] + 0.5) * r.voxel_size[k];
    for (int k = 0; k < 3; ++k)
      dense(bev_row, base + k) =
          (cell.feature[k] - center[k]) / r.voxel_size[k];
    dense(bev_row, base + 3) = cell.feature[3];
    dense(bev_row, base + 4) = 1.0;  // occupancy
  }
  nn::Var x = nn::constant(g, std::move(dense));

  if (image_channels_ > 0) {
    const bool fusion_on = img_features.g != nullptr;
    Mat fused_part = Mat::Zero(bev_cells * z_cells_, image_channels_);
    nn::Var gathered;
    if (fusion_on) {
      if (img_features.cols() != image_channels_)
        throw std::invalid_argument(
            "PointEncoder: gathered feature width mismatch");
      // voxel-mean of bilinear image-feature samples at projected points
      const ProjectedPoints pp =
          project_points_to_image(points, projection, image_h, image_w);
      const double stride_x = double(image_w) / img_feat_w;
      const double stride_y = double(image_h) / img_feat_h;
      nn::SparseRowMap map;
      map.output_rows = bev_cells * z_cells_;
      map.rows.resize(map.output_rows);
      for (const auto& cell : grid.cells) {
        const int out_row =
            (cell.index[0] * dims[1] + cell.index[1]) * z_cells_ +
            cell.index[2];
        const double inv_n = 1.0 / double(cell.point_ids.size());
        for (int p : cell.point_ids) {
          if (!pp.valid[p]) continue;  // invalid points gather zeros
          std::array<nn::SparseRowMap::Entry, 4> wts;
          if (!bilinear_weights(pp.u[p] / stride_x - 0.5,
                                pp.v[p] / stride_y - 0.5, img_feat_w,
                                img_feat_h, &wts))
            continue;
          for (const auto& e : wts)
            map.rows[out_row].push_back({e.input_row, e.weight * inv_n});
        }
      }
      gathered = nn::apply_row_map(img_features, map);
    } else {
      gathered = nn::constant(g, std::move(fused_part));
    }
    // interleave gathered rows (bev*z, Ci) into the dense input columns
    nn::SparseRowMap identity;  // used with concat via custom scatter below
    (void)identity;
    // Build scatter: output (bev_cells, in_ch) where image columns for slab z
    // come from gathered row bev*z. Done with a custom op to place columns.
    const int ci = image_channels_;
    const int zc = z_cells_;
    nn::Var scattered = nn::custom(
        g,
        [&] {
          Mat out = Mat::Zero(bev_cells, in_ch);
          const Mat& gv = gathered.val();
          for (int b = 0; b < bev_cells; ++b)
            for (int z = 0; z < zc; ++z)
              out.block(b, z * (kStatChannels + ci) + kStatChannels, 1, ci) =
                  gv.row(b * zc + z);
          return out;
        }(),
        {gathered},
        [bev_cells, zc, ci, in_ch](nn::Graph& gg, const Mat& dout,
                                   const std::vector<int>& pids) {
          (void)in_ch;
          if (!gg.needs_grad(pids[0])) return;
          Mat& dg = gg.grad(pids[0]);
          for (int b = 0; b < bev_cells; ++b)
            for (int z = 0; z < zc; ++z)
              dg.row(b * zc + z) +=
                  dout.block(b, z * (kStatChannels + ci) + kStatChannels, 1,
                             ci);
        });
    x = nn::add(x, scattered);
  }

  nn::Var w0 = nn::leaf(g, params_.get("pts.proj.w"));
  nn::Var b0 = nn::leaf(g, params_.get("pts.proj.b"));
  x = nn::gelu(nn::add_row_broadcast(nn::matmul(x, w0), b0));
  auto conv = [&](nn::Var in, const std::string& name) {
    nn::Var wv = nn::leaf(g, params_.get(name + ".w"));
    nn::Var bv = nn::leaf(g, params_.get(name + ".b"));
    return nn::conv2d(in, wv, bv, dims[0], dims[1], 3, 1, 1);
  };
  x = nn::gelu(conv(x, "pts.conv0"));
  x = conv(x, "pts.conv1");
  return x;
}

}  // namespace difdet::encoders
