#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "difdet/types.hpp"

namespace difdet::nn {

struct Param {
  std::string name;
  Mat value;
  Mat grad;
  Mat m, v;  // Adam moments
};

/// Named 64-bit parameter arrays plus the Adam state. Map-ordered iteration
/// keeps checkpoints and updates deterministic.
class ParamStore {
 public:
  Param& create(const std::string& name, int rows, int cols);
  Param& get(const std::string& name);
  const Param& get(const std::string& name) const;
  bool has(const std::string& name) const;

  void zero_grad();
  /// Single Adam update using the accumulated grads; gradients are first
  /// clipped to the given global norm (0 disables clipping).
  void adam_step(double lr, double beta1, double beta2, double eps,
                 double clip_norm);
  double grad_global_norm() const;

  std::vector<Param*> all();
  std::vector<const Param*> all() const;
  int64_t step_count() const { return step_count_; }
  void set_step_count(int64_t n) { step_count_ = n; }

 private:
  std::map<std::string, std::unique_ptr<Param>> params_;
  int64_t step_count_ = 0;
};

void init_normal(Param& p, double stddev, std::mt19937_64& rng);

/// Reverse-mode tape over dense double matrices. One Graph per forward pass.
class Graph {
 public:
  struct Node {
    Mat value;
    Mat grad;
    std::vector<int> parents;
    std::function<void(Graph&)> backward;  // reads grad_, writes parents' grads
    Param* sink = nullptr;                 // leaf: accumulate grad into param
    bool needs_grad = false;
  };

  int add_node(Mat value, std::vector<int> parents,
               std::function<void(Graph&)> backward, bool force_grad = false);

  const Mat& val(int id) const { return nodes_[id].value; }
  Mat& grad(int id);
  bool needs_grad(int id) const { return nodes_[id].needs_grad; }

  /// Backpropagate from a scalar (1x1) node; accumulates into Param::grad
  /// for every leaf bound via `leaf`.
  void backward(int root);

  std::vector<Node> nodes_;
};

struct Var {
  Graph* g = nullptr;
  int id = -1;
  const Mat& val() const { return g->val(id); }
  int rows() const { return int(val().rows()); }
  int cols() const { return int(val().cols()); }
};

Var constant(Graph& g, Mat value);
Var leaf(Graph& g, Param& p);

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);  // elementwise
Var scale(Var a, double s);
Var matmul(Var a, Var b);
Var matmul_nt(Var a, Var b);         // a * b^T
Var add_row_broadcast(Var a, Var row);  // (n x c) + (1 x c)
Var gelu(Var a);
Var sigmoid(Var a);
Var softmax_rows(Var a);
Var concat_cols(Var a, Var b);
Var sum_all(Var a);  // 1x1
Var dropout(Var a, double rate, std::mt19937_64& rng);

/// Generic row-space linear map with a constant sparse matrix: each output
/// row is a weighted combination of input rows (same column count). Covers
/// bilinear gathering, mean pooling, voxel averaging and scatter.
struct SparseRowMap {
  struct Entry {
    int input_row;
    double weight;
  };
  int output_rows = 0;
  std::vector<std::vector<Entry>> rows;  // size == output_rows
};
Var apply_row_map(Var a, const SparseRowMap& map);

/// 2D convolution over a (H*W) x Cin feature matrix (row index = y*W + x),
/// zero padding. weight is (k*k*Cin) x Cout, bias 1 x Cout.
Var conv2d(Var input, Var weight, Var bias, int h, int w, int k, int stride,
           int pad);

/// Custom op: caller supplies the forward value and a backward closure that
/// maps d(out) to d(parents).
Var custom(Graph& g, Mat value, std::vector<Var> parents,
           std::function<void(Graph&, const Mat& dout,
                              const std::vector<int>& parent_ids)>
               backward);

/// Central finite differences of `eval` w.r.t. selected parameter entries.
double finite_diff(Param& p, int r, int c, double step,
                   const std::function<double()>& eval);

}  // namespace difdet::nn
