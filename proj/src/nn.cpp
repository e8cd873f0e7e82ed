#include "difdet/nn.hpp"

#include <cmath>
#include <stdexcept>

namespace difdet::nn {

Param& ParamStore::create(const std::string& name, int rows, int cols) {
  auto [it, inserted] = params_.emplace(name, std::make_unique<Param>());
  if (!inserted) throw std::invalid_argument("duplicate param: " + name);
  Param& p = *it->second;
  p.name = name;
  p.value = Mat::Zero(rows, cols);
  p.grad = Mat::Zero(rows, cols);
  p.m = Mat::Zero(rows, cols);
  p.v = Mat::Zero(rows, cols);
  return p;
}

Param& ParamStore::get(const std::string& name) {
  auto it = params_.find(name);
  if (it == params_.end()) throw std::out_of_range("no param: " + name);
  return *it->second;
}

const Param& ParamStore::get(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw std::out_of_range("no param: " + name);
  return *it->second;
}

bool ParamStore::has(const std::string& name) const {
  return params_.count(name) > 0;
}

void ParamStore::zero_grad() {
  for (auto& [_, p] : params_) p->grad.setZero();
}

double ParamStore::grad_global_norm() const {
  double acc = 0;
  for (const auto& [_, p] : params_) acc += p->grad.squaredNorm();
  return std::sqrt(acc);
}

void ParamStore::adam_step(double lr, double beta1, double beta2, double eps,
                           double clip_norm) {
  double scale = 1.0;
  if (clip_norm > 0) {
    const double norm = grad_global_norm();
    if (norm > clip_norm) scale = clip_norm / norm;
  }
  ++step_count_;
  const double bc1 = 1.0 - std::pow(beta1, double(step_count_));
  const double bc2 = 1.0 - std::pow(beta2, double(step_count_));
  for (auto& [_, p] : params_) {
    const Mat g = p->grad * scale;
    p->m = beta1 * p->m + (1.0 - beta1) * g;
    p->v = beta2 * p->v + (1.0 - beta2) * g.cwiseProduct(g);
    const Mat mhat = p->m / bc1;
    const Mat vhat = p->v / bc2;
    const Mat denom =
        vhat.cwiseSqrt() + Mat::Constant(vhat.rows(), vhat.cols(), eps);
    p->value -= lr * mhat.cwiseQuotient(denom);
  }
}

std::vector<Param*> ParamStore::all() {
  std::vector<Param*> out;
  for (auto& [_, p] : params_) out.push_back(p.get());
  return out;
}

std::vector<const Param*> ParamStore::all() const {
  std::vector<const Param*> out;
  for (const auto& [_, p] : params_) out.push_back(p.get());
  return out;
}

void init_normal(Param& p, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> gauss(0.0, stddev);
  for (int i = 0; i < p.value.rows(); ++i)
    for (int j = 0; j < p.value.cols(); ++j) p.value(i, j) = gauss(rng);
}

int Graph::add_node(Mat value, std::vector<int> parents,
                    std::function<void(Graph&)> backward, bool force_grad) {
  Node n;
  n.value = std::move(value);
  n.parents = std::move(parents);
  n.backward = std::move(backward);
  n.needs_grad = force_grad;
  for (int p : n.parents)
    if (nodes_[p].needs_grad) n.needs_grad = true;
  nodes_.push_back(std::move(n));
  return int(nodes_.size()) - 1;
}

Mat& Graph::grad(int id) {
  Node& n = nodes_[id];
  if (n.grad.size() == 0)
    n.grad = Mat::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

void Graph::backward(int root) {
  if (nodes_[root].value.size() != 1)
    throw std::invalid_argument("backward: root must be scalar");
  grad(root)(0, 0) = 1.0;
  for (int i = root; i >= 0; --i) {
    Node& n = nodes_[i];
    if (!n.needs_grad || n.grad.size() == 0) continue;
    if (n.backward) n.backward(*this);
    if (n.sink) n.sink->grad += n.grad;
  }
}

Var constant(Graph& g, Mat value) {
  return {&g, g.add_node(std::move(value), {}, nullptr)};
}

Var leaf(Graph& g, Param& p) {
  const int id = g.add_node(p.value, {}, nullptr, true);
  g.nodes_[id].sink = &p;
  return {&g, id};
}

namespace {
void check_same(Var a, Var b, const char* what) {
  if (a.val().rows() != b.val().rows() || a.val().cols() != b.val().cols())
    throw std::invalid_argument(std::string(what) + ": shape mismatch");
}
}  // namespace

Var add(Var a, Var b) {
  check_same(a, b, "add");
  Graph& g = *a.g;
  const int ia = a.id, ib = b.id;
  const int id = g.add_node(a.val() + b.val(), {ia, ib}, nullptr);
  g.nodes_[id].backward = [id, ia, ib](Graph& gg) {
    const Mat& d = gg.nodes_[id].grad;
    if (gg.needs_grad(ia)) gg.grad(ia) += d;
    if (gg.needs_grad(ib)) gg.grad(ib) += d;
  };
  return {&g, id};
}

Var sub(Var a, Var b) {
  check_same(a, b, "sub");
  Graph& g = *a.g;
  const int ia = a.id, ib = b.id;
  const int id = g.add_node(a.val() - b.val(), {ia, ib}, nullptr);
  g.nodes_[id].backward = [id, ia, ib](Graph& gg) {
    const Mat& d = gg.nodes_[id].grad;
    if (gg.needs_grad(ia)) gg.grad(ia) += d;
    if (gg.needs_grad(ib)) gg.grad(ib) -= d;
  };
  return {&g, id};
}

Var mul(Var a, Var b) {
  check_same(a, b, "mul");
  Graph& g = *a.g;
  const int ia = a.id, ib = b.id;
  const int id = g.add_node(a.val().cwiseProduct(b.val()), {ia, ib}, nullptr);
  g.nodes_[id].backward = [id, ia, ib](Graph& gg) {
    const Mat& d = gg.nodes_[id].grad;
    if (gg.needs_grad(ia)) gg.grad(ia) += d.cwiseProduct(gg.val(ib));
    if (gg.needs_grad(ib)) gg.grad(ib) += d.cwiseProduct(gg.val(ia));
  };
  return {&g, id};
}

Var scale(Var a, double s) {
  Graph& g = *a.g;
  const int ia = a.id;
  const int id = g.add_node(a.val() * s, {ia}, nullptr);
  g.nodes_[id].backward = [id, ia, s](Graph& gg) {
    if (gg.needs_grad(ia)) gg.grad(ia) += gg.nodes_[id].grad * s;
  };
  return {&g, id};
}

Var matmul(Var a, Var b) {
  if (a.val().cols() != b.val().rows())
    throw std::invalid_argument("matmul: inner dim mismatch");
  Graph& g = *a.g;
  const int ia = a.id, ib = b.id;
  const int id = g.add_node(a.val() * b.val(), {ia, ib}, nullptr);
  g.nodes_[id].backward = [id, ia, ib](Graph& gg) {
    const Mat& d = gg.nodes_[id].grad;
    if (gg.needs_grad(ia)) gg.grad(ia) += d * gg.val(ib).transpose();
    if (gg.needs_grad(ib)) gg.grad(ib) += gg.val(ia).transpose() * d;
  };
  return {&g, id};
}

Var matmul_nt(Var a, Var b) {
  if (a.val().cols() != b.val().cols())
    throw std::invalid_argument("matmul_nt: inner dim mismatch");
  Graph& g = *a.g;
  const int ia = a.id, ib = b.id;
  const int id = g.add_node(a.val() * b.val().transpose(), {ia, ib}, nullptr);
  g.nodes_[id].backward = [id, ia, ib](Graph& gg) {
    const Mat& d = gg.nodes_[id].grad;
    if (gg.needs_grad(ia)) gg.grad(ia) += d * gg.val(ib);
    if (gg.needs_grad(ib)) gg.grad(ib) += d.transpose() * gg.val(ia);
  };
  return {&g, id};
}

Var add_row_broadcast(Var a, Var row) {
  if (row.val().rows() != 1 || row.val().cols() != a.val().cols())
    throw std::invalid_argument("add_row_broadcast: shape mismatch");
  Graph& g = *a.g;
  const int ia = a.id, ir = row.id;
  Mat out = a.val();
  out.rowwise() += row.val().row(0);
  const int id = g.add_node(std::move(out), {ia, ir}, nullptr);
  g.nodes_[id].backward = [id, ia, ir](Graph& gg) {
    const Mat& d = gg.nodes_[id].grad;
    if (gg.needs_grad(ia)) gg.grad(ia) += d;
    if (gg.needs_grad(ir)) gg.grad(ir) += d.colwise().sum();
  };
  return {&g, id};
}

Var gelu(Var a) {
  Graph& g = *a.g;
  const int ia = a.id;
  const Mat& x = a.val();
  Mat out(x.rows(), x.cols());
  for (int i = 0; i < x.size(); ++i)
    out(i) = 0.5 * x(i) * (1.0 + std::erf(x(i) / std::sqrt(2.0)));
  const int id = g.add_node(std::move(out), {ia}, nullptr);
  g.nodes_[id].backward = [id, ia](Graph& gg) {
    if (!gg.needs_grad(ia)) return;
    const Mat& x = gg.val(ia);
    const Mat& d = gg.nodes_[id].grad;
    Mat& da = gg.grad(ia);
    const double inv_sqrt2 = 1.0 / std::sqrt(2.0);
    const double inv_sqrt2pi = 1.0 / std::sqrt(2.0 * 3.14159265358979323846);
    for (int i = 0; i < x.size(); ++i) {
      const double cdf = 0.5 * (1.0 + std::erf(x(i) * inv_sqrt2));
      const double pdf = inv_sqrt2pi * std::exp(-0.5 * x(i) * x(i));
      da(i) += d(i) * (cdf + x(i) * pdf);
    }
  };
  return {&g, id};
}

Var sigmoid(Var a) {
  Graph& g = *a.g;
  const int ia = a.id;
  const Mat& x = a.val();
  Mat out(x.rows(), x.cols());
  for (int i = 0; i < x.size(); ++i) out(i) = 1.0 / (1.0 + std::exp(-x(i)));
  const int id = g.add_node(std::move(out), {ia}, nullptr);
  g.nodes_[id].backward = [id, ia](Graph& gg) {
    if (!gg.needs_grad(ia)) return;
    const Mat& y = gg.val(id);
    const Mat& d = gg.nodes_[id].grad;
    gg.grad(ia) += d.cwiseProduct(
        y.cwiseProduct(Mat::Constant(y.rows(), y.cols(), 1.0) - y));
  };
  return {&g, id};
}

Var softmax_rows(Var a) {
  Graph& g = *a.g;
  const int ia = a.id;
  const Mat& x = a.val();
  Mat out(x.rows(), x.cols());
  for (int i = 0; i < x.rows(); ++i) {
    const double mx = x.row(i).maxCoeff();
    Eigen::RowVectorXd e = (x.row(i).array() - mx).exp();
    out.row(i) = e / e.sum();
  }
  const int id = g.add_node(std::move(out), {ia}, nullptr);
  g.nodes_[id].backward = [id, ia](Graph& gg) {
    if (!gg.needs_grad(ia)) return;
    const Mat& y = gg.val(id);
    const Mat& d = gg.nodes_[id].grad;
    Mat& da = gg.grad(ia);
    for (int i = 0; i < y.rows(); ++i) {
      const double dot = d.row(i).dot(y.row(i));
      da.row(i) += y.row(i).cwiseProduct(
          d.row(i) - Eigen::RowVectorXd::Constant(y.cols(), dot));
    }
  };
  return {&g, id};
}

Var concat_cols(Var a, Var b) {
  if (a.val().rows() != b.val().rows())
    throw std::invalid_argument("concat_cols: row mismatch");
  Graph& g = *a.g;
  const int ia = a.id, ib = b.id;
  Mat out(a.val().rows(), a.val().cols() + b.val().cols());
  out.leftCols(a.val().cols()) = a.val();
  out.rightCols(b.val().cols()) = b.val();
  const int id = g.add_node(std::move(out), {ia, ib}, nullptr);
  const int ca = int(a.val().cols());
  g.nodes_[id].backward = [id, ia, ib, ca](Graph& gg) {
    const Mat& d = gg.nodes_[id].grad;
    if (gg.needs_grad(ia)) gg.grad(ia) += d.leftCols(ca);
    if (gg.needs_grad(ib)) gg.grad(ib) += d.rightCols(d.cols() - ca);
  };
  return {&g, id};
}

Var sum_all(Var a) {
  Graph& g = *a.g;
  const int ia = a.id;
  Mat out(1, 1);
  out(0, 0) = a.val().sum();
  const int id = g.add_node(std::move(out), {ia}, nullptr);
  g.nodes_[id].backward = [id, ia](Graph& gg) {
    if (gg.needs_grad(ia))
      gg.grad(ia).array() += gg.nodes_[id].grad(0, 0);
  };
  return {&g, id};
}

Var dropout(Var a, double rate, std::mt19937_64& rng) {
  if (rate <= 0) return a;
  Graph& g = *a.g;
  const int ia = a.id;
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  Mat mask(a.val().rows(), a.val().cols());
  const double keep = 1.0 - rate;
  for (int i = 0; i < mask.size(); ++i)
    mask(i) = uni(rng) < rate ? 0.0 : 1.0 / keep;
  const int id = g.add_node(a.val().cwiseProduct(mask), {ia}, nullptr);
  g.nodes_[id].backward = [id, ia, mask](Graph& gg) {
    if (gg.needs_grad(ia))
      gg.grad(ia) += gg.nodes_[id].grad.cwiseProduct(mask);
  };
  return {&g, id};
}

Var apply_row_map(Var a, const SparseRowMap& map) {
  Graph& g = *a.g;
  const int ia = a.id;
  const int c = int(a.val().cols());
  Mat out = Mat::Zero(map.output_rows, c);
  for (int r = 0; r < map.output_rows; ++r)
    for (const auto& e : map.rows[r])
      out.row(r) += e.weight * a.val().row(e.input_row);
  const int id = g.add_node(std::move(out), {ia}, nullptr);
  auto mp = std::make_shared<SparseRowMap>(map);
  g.nodes_[id].backward = [id, ia, mp](Graph& gg) {
    if (!gg.needs_grad(ia)) return;
    const Mat& d = gg.nodes_[id].grad;
    Mat& da = gg.grad(ia);
    for (int r = 0; r < mp->output_rows; ++r)
      for (const auto& e : mp->rows[r])
        da.row(e.input_row) += e.weight * d.row(r);
  };
  return {&g, id};
}

namespace {
struct ConvShape {
  int h, w, k, stride, pad, ho, wo, cin;
};

Mat im2col(const Mat& input, const ConvShape& s) {
  Mat col = Mat::Zero(s.ho * s.wo, s.k * s.k * s.cin);
  for (int oy = 0; oy < s.ho; ++oy)
    for (int ox = 0; ox < s.wo; ++ox) {
      const int orow = oy * s.wo + ox;
      for (int ky = 0; ky < s.k; ++ky) {
        const int iy = oy * s.stride - s.pad + ky;
        if (iy < 0 || iy >= s.h) continue;
        for (int kx = 0; kx < s.k; ++kx) {
          const int ix = ox * s.stride - s.pad + kx;
          if (ix < 0 || ix >= s.w) continue;
          col.block(orow, (ky * s.k + kx) * s.cin, 1, s.cin) =
              input.row(iy * s.w + ix);
        }
      }
    }
  return col;
}
}  // namespace

Var conv2d(Var input, Var weight, Var bias, int h, int w, int k, int stride,
           int pad) {
  Graph& g = *input.g;
  const int cin = int(input.val().cols());
  if (input.val().rows() != h * w)
    throw std::invalid_argument("conv2d: input rows != h*w");
  if (weight.val().rows() != k * k * cin)
    throw std::invalid_argument("conv2d: weight rows mismatch");
  ConvShape s{h, w, k, stride, pad,
              (h + 2 * pad - k) / stride + 1,
              (w + 2 * pad - k) / stride + 1, cin};
  const Mat col = im2col(input.val(), s);
  Mat out = col * weight.val();
  out.rowwise() += bias.val().row(0);
  const int ii = input.id, iw = weight.id, ib = bias.id;
  const int id = g.add_node(std::move(out), {ii, iw, ib}, nullptr);
  g.nodes_[id].backward = [id, ii, iw, ib, s](Graph& gg) {
    const Mat& d = gg.nodes_[id].grad;
    const Mat col = im2col(gg.val(ii), s);
    if (gg.needs_grad(iw)) gg.grad(iw) += col.transpose() * d;
    if (gg.needs_grad(ib)) gg.grad(ib) += d.colwise().sum();
    if (gg.needs_grad(ii)) {
      const Mat dcol = d * gg.val(iw).transpose();
      Mat& di = gg.grad(ii);
      for (int oy = 0; oy < s.ho; ++oy)
        for (int ox = 0; ox < s.wo; ++ox) {
          const int orow = oy * s.wo + ox;
          for (int ky = 0; ky < s.k; ++ky) {
            const int iy = oy * s.stride - s.pad + ky;
            if (iy < 0 || iy >= s.h) continue;
            for (int kx = 0; kx < s.k; ++kx) {
              const int ix = ox * s.stride - s.pad + kx;
              if (ix < 0 || ix >= s.w) continue;
              di.row(iy * s.w + ix) +=
                  dcol.block(orow, (ky * s.k + kx) * s.cin, 1, s.cin);
            }
          }
        }
    }
  };
  return {&g, id};
}

Var custom(Graph& g, Mat value, std::vector<Var> parents,
           std::function<void(Graph&, const Mat& dout,
                              const std::vector<int>& parent_ids)>
               backward) {
  std::vector<int> pids;
  for (const Var& p : parents) pids.push_back(p.id);
  const int id = g.add_node(std::move(value), pids, nullptr);
  g.nodes_[id].backward = [id, pids, backward](Graph& gg) {
    backward(gg, gg.nodes_[id].grad, pids);
  };
  return {&g, id};
}

double finite_diff(Param& p, int r, int c, double step,
                   const std::function<double()>& eval) {
  const double saved = p.value(r, c);
  p.value(r, c) = saved + step;
  const double up = eval();
  p.value(r, c) = saved - step;
  const double down = eval();
  p.value(r, c) = saved;
  return (up - down) / (2.0 * step);
}

}  // namespace difdet::nn
