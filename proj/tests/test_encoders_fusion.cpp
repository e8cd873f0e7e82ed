#include <cmath>
#include <random>

#include "difdet/encoders.hpp"
#include "difdet/kitti_io.hpp"
#include "difdet/roifusion.hpp"
#include "doctest.h"

using namespace difdet;

TEST_CASE("point projection follows the pinhole model") {
  const auto P = data::make_projection(48, 48, 32, 32);
  Mat pts(4, 4);
  pts << 6.0, 0.0, 0.0, 1.0,   // on the optical axis
      6.0, 1.0, 0.0, 1.0,      // world +y maps to image -u
      -2.0, 0.0, 0.0, 1.0,     // behind the camera
      6.0, 40.0, 0.0, 1.0;     // far outside the frame
  const auto pp = encoders::project_points_to_image(pts, P, 64, 64);
  REQUIRE(pp.valid.size() == 4);
  CHECK(pp.valid[0]);
  CHECK(pp.u[0] == doctest::Approx(32.0));
  CHECK(pp.v[0] == doctest::Approx(32.0));
  CHECK(pp.valid[1]);
  CHECK(pp.u[1] == doctest::Approx(32.0 - 48.0 / 6.0));
  CHECK(!pp.valid[2]);
  CHECK(!pp.valid[3]);
}

TEST_CASE("bilinear weights partition unity and reproduce linear fields") {
  std::array<nn::SparseRowMap::Entry, 4> w;
  REQUIRE(encoders::bilinear_weights(1.25, 2.5, 6, 5, &w));
  double sum = 0;
  for (const auto& e : w) sum += e.weight;
  CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
  // a linear function of grid coordinates interpolates exactly
  auto field = [](int row) {
    const int gy = row / 6, gx = row % 6;
    return 3.0 * gx - 2.0 * gy + 0.5;
  };
  double interp = 0;
  for (const auto& e : w) interp += e.weight * field(e.input_row);
  CHECK(interp == doctest::Approx(3.0 * 1.25 - 2.0 * 2.5 + 0.5).epsilon(1e-9));
  // border samples clamp, fully outside samples fail
  REQUIRE(encoders::bilinear_weights(-0.25, 0.0, 6, 5, &w));
  sum = 0;
  for (const auto& e : w) sum += e.weight;
  CHECK(sum == doctest::Approx(1.0));
  CHECK(!encoders::bilinear_weights(-0.75, 0.0, 6, 5, &w));
  CHECK(!encoders::bilinear_weights(0.0, 4.7, 6, 5, &w));
}

TEST_CASE("image encoder downsamples by four and validates its input") {
  nn::ParamStore params;
  std::mt19937_64 rng(5);
  encoders::ImageEncoder enc(params, 16, rng);
  const int h = 16, w = 12;
  std::vector<double> img(h * w * 3, 0.3);
  nn::Graph g;
  const auto out = enc.encode(g, img, h, w);
  CHECK(out.rows() == (h / 4) * (w / 4));
  CHECK(out.cols() == 16);
  std::vector<double> bad(15 * 12 * 3, 0.0);
  CHECK_THROWS_AS(enc.encode(g, bad, 15, 12), std::invalid_argument);
}

TEST_CASE("zeroing the final conv layer zeroes the image features") {
  nn::ParamStore params;
  std::mt19937_64 rng(7);
  encoders::ImageEncoder enc(params, 8, rng);
  params.get("img.conv3.w").value.setZero();
  params.get("img.conv3.b").value.setZero();
  std::vector<double> img(8 * 8 * 3, 0.6);
  nn::Graph g;
  const auto out = enc.encode(g, img, 8, 8);
  CHECK(out.val().cwiseAbs().maxCoeff() == 0.0);
}

namespace {

data::VoxelRange desk_range() {
  data::VoxelRange r;
  r.min = Eigen::Vector3d(0.0, -8.0, -1.0);
  r.max = Eigen::Vector3d(16.0, 8.0, 3.0);
  r.voxel_size = Eigen::Vector3d(0.5, 0.5, 0.5);
  return r;
}

}  // namespace

TEST_CASE("point encoder: output shape and fusion-off equivalence") {
  const auto range = desk_range();
  const auto dims = range.grid_dims();
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> ux(1.0, 15.0), uy(-7.0, 7.0),
      uz(-0.5, 2.5);
  Mat pts(150, 4);
  for (int i = 0; i < 150; ++i) pts.row(i) << ux(rng), uy(rng), uz(rng), 0.5;
  const auto grid = data::voxelize(pts, range, 32);
  const auto P = data::make_projection(48, 48, 32, 32);

  nn::ParamStore p1;
  std::mt19937_64 r1(11);
  encoders::PointEncoder enc1(p1, 12, 8, dims[2], r1);
  nn::Graph g1;
  const auto off =
      enc1.encode(g1, grid, pts, P, 64, 64, nn::Var{nullptr, -1}, -1, -1);
  CHECK(off.rows() == dims[0] * dims[1]);
  CHECK(off.cols() == 12);

  // identical weights with an all-zero image feature map must match the
  // fusion-off path exactly
  nn::ParamStore p2;
  std::mt19937_64 r2(11);
  encoders::PointEncoder enc2(p2, 12, 8, dims[2], r2);
  nn::Graph g2;
  const auto zero_img = nn::constant(g2, Mat::Zero(16 * 16, 8));
  const auto on = enc2.encode(g2, grid, pts, P, 64, 64, zero_img, 16, 16);
  CHECK((on.val() - off.val()).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("2d roi pooling of a constant field returns the constant") {
  nn::Graph g;
  const int fh = 16, fw = 16;
  Mat feats = Mat::Constant(fh * fw, 4, 0.75);
  const auto P = data::make_projection(48, 48, 32, 32);
  const std::vector<Box3D> boxes = {Box3D(6.0, 0.0, 0.5, 2.0, 1.0, 1.0, 0.3),
                                    Box3D(-5.0, 0.0, 0.5, 1.0, 1.0, 1.0, 0.0)};
  const auto pooled =
      fusion::roi_align_2d(nn::constant(g, feats), fh, fw, boxes, P, 64, 64, 5);
  REQUIRE(pooled.rows() == 2);
  REQUIRE(pooled.cols() == 4);
  for (int c = 0; c < 4; ++c)
    CHECK(pooled.val()(0, c) == doctest::Approx(0.75).epsilon(1e-9));
  // the box behind the camera pools zeros
  CHECK(pooled.val().row(1).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("3d roi pooling: constant field, geometry columns, linear oracle") {
  const auto range = desk_range();
  const auto dims = range.grid_dims();
  nn::Graph g;
  Mat feats(dims[0] * dims[1], 2);
  for (int ix = 0; ix < dims[0]; ++ix)
    for (int iy = 0; iy < dims[1]; ++iy) {
      // column 0 constant, column 1 linear in the world coordinates of the
      // cell center, so bilinear pooling is exact and grid-symmetric
      const double wx = range.min.x() + (ix + 0.5) * range.voxel_size.x();
      const double wy = range.min.y() + (iy + 0.5) * range.voxel_size.y();
      feats(ix * dims[1] + iy, 0) = 0.4;
      feats(ix * dims[1] + iy, 1) = 2.0 * wx + 3.0 * wy;
    }
  const Box3D b(8.0, 1.0, 0.5, 2.0, 1.2, 1.0, kPi / 4);
  const auto pooled =
      fusion::roi_align_3d(nn::constant(g, feats), range, {b}, 7);
  REQUIRE(pooled.rows() == 1);
  REQUIRE(pooled.cols() == 2 + 4);
  CHECK(pooled.val()(0, 0) == doctest::Approx(0.4).epsilon(1e-9));
  // the sample grid is symmetric about the center, so a linear field pools
  // to its value at the box center regardless of yaw
  CHECK(pooled.val()(0, 1) ==
        doctest::Approx(2.0 * b.cx + 3.0 * b.cy).epsilon(1e-9));
  CHECK(pooled.val()(0, 2) == doctest::Approx(b.l));
  CHECK(pooled.val()(0, 3) == doctest::Approx(b.w));
  CHECK(pooled.val()(0, 4) == doctest::Approx(b.h));
  CHECK(pooled.val()(0, 5) == doctest::Approx(b.yaw));
}

TEST_CASE("cross attention: zero output projection is the identity") {
  nn::ParamStore params;
  std::mt19937_64 rng(13);
  fusion::init_cross_attention(params, "att", 6, 2, 3, rng);
  nn::Graph g;
  std::normal_distribution<double> n(0.0, 1.0);
  Mat q(4, 6), kv(4, 6);
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 6; ++j) {
      q(i, j) = n(rng);
      kv(i, j) = n(rng);
    }
  const auto out =
      fusion::cross_attention(g, params, "att", nn::constant(g, q),
                              nn::constant(g, kv), 2, 3, false, true);
  CHECK((out.val() - kv).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("cross attention: single-row softmax collapses to v projections") {
  nn::ParamStore params;
  std::mt19937_64 rng(17);
  const int d = 4, heads = 2, hd = 2;
  fusion::init_cross_attention(params, "att", d, heads, hd, rng);
  std::normal_distribution<double> n(0.0, 1.0);
  auto& wout = params.get("att.wout").value;
  for (int i = 0; i < wout.rows(); ++i)
    for (int j = 0; j < wout.cols(); ++j) wout(i, j) = n(rng);
  Mat q(1, d), kv(1, d);
  for (int j = 0; j < d; ++j) {
    q(0, j) = n(rng);
    kv(0, j) = n(rng);
  }
  nn::Graph g;
  const auto out =
      fusion::cross_attention(g, params, "att", nn::constant(g, q),
                              nn::constant(g, kv), heads, hd, false, false);
  Mat cat(1, heads * hd);
  cat << kv * params.get("att.wv.0").value, kv * params.get("att.wv.1").value;
  const Mat expect = cat * wout;
  CHECK((out.val() - expect).cwiseAbs().maxCoeff() < 1e-12);

  // diagonal scope gives the same result independent of the queries
  const auto diag =
      fusion::cross_attention(g, params, "att", nn::constant(g, Mat::Zero(1, d)),
                              nn::constant(g, kv), heads, hd, true, false);
  CHECK((diag.val() - expect).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("cross attention: explicit three-proposal single-head oracle") {
  nn::ParamStore params;
  std::mt19937_64 rng(19);
  const int d = 2, hd = 2;
  fusion::init_cross_attention(params, "att", d, 1, hd, rng);
  params.get("att.wq.0").value = Mat::Identity(d, hd);
  params.get("att.wk.0").value = Mat::Identity(d, hd);
  params.get("att.wv.0").value = Mat::Identity(d, hd);
  params.get("att.wout").value = Mat::Identity(hd, d);
  Mat q(3, 2), kv(3, 2);
  q << 1, 0, 0, 1, 1, 1;
  kv << 2, 0, 0, 2, 1, 1;
  nn::Graph g;
  const auto out =
      fusion::cross_attention(g, params, "att", nn::constant(g, q),
                              nn::constant(g, kv), 1, hd, false, false);
  // hand-computed: softmax over (q kv^T) / sqrt(2), then times kv
  const double s = 1.0 / std::sqrt(2.0);
  for (int i = 0; i < 3; ++i) {
    Eigen::Vector3d sc;
    for (int j = 0; j < 3; ++j)
      sc[j] = s * (q(i, 0) * kv(j, 0) + q(i, 1) * kv(j, 1));
    const Eigen::Vector3d e = (sc.array() - sc.maxCoeff()).exp();
    const Eigen::Vector3d a = e / e.sum();
    for (int c = 0; c < 2; ++c) {
      const double expect =
          a[0] * kv(0, c) + a[1] * kv(1, c) + a[2] * kv(2, c);
      CHECK(out.val()(i, c) == doctest::Approx(expect).epsilon(1e-12));
    }
  }
}

TEST_CASE("fusion alternatives: sum, dp and mlp arithmetic") {
  nn::ParamStore params;
  std::mt19937_64 rng(23);
  nn::Graph g;
  Mat a(2, 2), b(2, 2);
  a << 1, 2, 3, 4;
  b << 5, 6, 7, 8;
  const auto va = nn::constant(g, a), vb = nn::constant(g, b);
  CHECK((fusion::fuse_alternative(g, params, "f", "sum", va, vb).val() -
         (a + b))
            .cwiseAbs()
            .maxCoeff() == 0.0);
  CHECK((fusion::fuse_alternative(g, params, "f", "dp", va, vb).val() -
         a.cwiseProduct(b))
            .cwiseAbs()
            .maxCoeff() == 0.0);

  fusion::init_fuse_alternative(params, "m", "mlp", 2, rng);
  // zero first layer: gelu(0) = 0, so the output is exactly b2
  params.get("m.w1").value.setZero();
  params.get("m.b1").value.setZero();
  params.get("m.b2").value << 0.3, -0.7;
  const auto mlp = fusion::fuse_alternative(g, params, "m", "mlp", va, vb);
  for (int i = 0; i < 2; ++i) {
    CHECK(mlp.val()(i, 0) == doctest::Approx(0.3));
    CHECK(mlp.val()(i, 1) == doctest::Approx(-0.7));
  }
  CHECK_THROWS_AS(fusion::init_fuse_alternative(params, "x", "bogus", 2, rng),
                  std::invalid_argument);
}

TEST_CASE("sinusoidal time embedding matches its closed form") {
  const int dim = 8;
  const Mat e = fusion::sinusoidal_time_embedding(37, dim);
  REQUIRE(e.cols() == dim);
  for (int i = 0; i < dim / 2; ++i) {
    const double freq = std::exp(-std::log(10000.0) * double(i) / (dim / 2));
    CHECK(e(0, 2 * i) == doctest::Approx(std::sin(37 * freq)).epsilon(1e-12));
    CHECK(e(0, 2 * i + 1) ==
          doctest::Approx(std::cos(37 * freq)).epsilon(1e-12));
  }
  CHECK_THROWS_AS(fusion::sinusoidal_time_embedding(1, 7),
                  std::invalid_argument);
}

TEST_CASE("time conditioning starts as a no-op and grows with its weights") {
  nn::ParamStore params;
  std::mt19937_64 rng(29);
  fusion::init_time_mlp(params, "time", 4, rng);
  nn::Graph g;
  Mat x(3, 4);
  x.setConstant(0.5);
  const auto vx = nn::constant(g, x);
  // zero-initialised output projection: identical for every timestep
  const auto a = fusion::add_time_embedding(g, params, "time", vx, 5);
  const auto b = fusion::add_time_embedding(g, params, "time", vx, 900);
  CHECK((a.val() - x).cwiseAbs().maxCoeff() == 0.0);
  CHECK((b.val() - x).cwiseAbs().maxCoeff() == 0.0);

  params.get("time.b2").value << 1, 2, 3, 4;
  const auto c = fusion::add_time_embedding(g, params, "time", vx, 5);
  CHECK(c.val()(0, 3) == doctest::Approx(4.5));
}

TEST_CASE("zero-initialised head echoes proposals with logits at zero") {
  nn::ParamStore params;
  std::mt19937_64 rng(31);
  fusion::init_detection_head(params, "head", 6, 8, 3, rng);
  nn::Graph g;
  std::normal_distribution<double> n(0.0, 1.0);
  Mat feats(4, 6), proposals(4, 7);
  for (int i = 0; i < 4; ++i) {
    for (int j = 0; j < 6; ++j) feats(i, j) = n(rng);
    for (int j = 0; j < 7; ++j) proposals(i, j) = n(rng);
  }
  const auto out = fusion::detection_head(g, params, "head",
                                          nn::constant(g, feats), proposals);
  CHECK((out.boxes_signal.val() - proposals).cwiseAbs().maxCoeff() == 0.0);
  CHECK(out.cls_logits.val().cwiseAbs().maxCoeff() == 0.0);
  CHECK(out.cls_logits.cols() == 4);  // three classes plus no-object
  // sigmoid of zero logits puts every class probability at one half
  const auto probs = nn::sigmoid(out.cls_logits);
  CHECK(probs.val()(0, 0) == doctest::Approx(0.5));
}
