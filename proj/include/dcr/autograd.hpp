// SPDX-License-Identifier: Apache-2.0
//
// Minimal reverse-mode automatic differentiation over dense row-major
// matrices. A Tape records every operation of one forward pass; calling
// backward() walks the record in reverse and accumulates gradients into the
// Parameter objects that were bound to the tape.
#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace dcr {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

}  // namespace dcr

namespace dcr::ag {

/// A named trainable (or frozen) tensor owned by a module.
struct Parameter {
  std::string name;
  Matrix value;
  Matrix grad;
  bool trainable = true;

  Parameter() = default;
  Parameter(std::string n, Matrix v, bool is_trainable = true);

  void zero_grad();
};

class Tape;

/// Handle to a node recorded on a tape.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}

  const Matrix& value() const;
  /// Gradient accumulated by the last backward pass; zeros if none reached it.
  Matrix grad() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  double scalar() const { return value()(0, 0); }

  int id() const { return id_; }
  Tape* tape() const { return tape_; }
  bool valid() const { return tape_ != nullptr && id_ >= 0; }

 private:
  Tape* tape_ = nullptr;
  int id_ = -1;
};

class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, const Matrix& out_grad)>;

  /// A non-recording tape evaluates forward values only.
  explicit Tape(bool record = true) : record_(record) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Matrix value);
  /// A leaf that receives a gradient, for differentiating w.r.t. inputs.
  Var input(Matrix value);
  /// Binds a parameter; the same parameter maps to a single leaf per tape.
  /// Frozen parameters behave as constants.
  Var param(Parameter& p);

  /// Records an op output. `inputs` decide whether the node needs a gradient.
  Var push(Matrix value, std::initializer_list<Var> inputs, BackwardFn backward);
  Var push(Matrix value, std::span<const Var> inputs, BackwardFn backward);

  /// Backpropagates from a 1x1 root and accumulates into bound parameters.
  void backward(const Var& root);
  /// Backpropagates from several seeded outputs at once.
  void backward(std::span<const std::pair<Var, Matrix>> seeds);

  const Matrix& value(int id) const;
  bool requires_grad(int id) const { return nodes_[id].requires_grad; }
  bool recording() const { return record_; }
  std::size_t size() const { return nodes_.size(); }

  /// Adds `g` into the gradient of node `id` when that node needs one.
  template <typename Expr>
  void accumulate(int id, const Expr& g) {
    Node& n = nodes_[id];
    if (!n.requires_grad) return;
    if (!n.has_grad) {
      n.grad = g;
      n.has_grad = true;
    } else {
      n.grad += g;
    }
  }
  Matrix grad_of(int id) const;

 private:
  struct Node {
    Matrix value;
    const Matrix* ref = nullptr;
    Matrix grad;
    bool requires_grad = false;
    bool has_grad = false;
    BackwardFn backward;
    Parameter* param = nullptr;
  };

  void run_backward();

  std::vector<Node> nodes_;
  std::unordered_map<Parameter*, int> param_nodes_;
  bool record_;
};

// Elementwise and structural ops.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double c);
/// a (R x C) + r (1 x C) broadcast over rows.
Var add_rowvec(const Var& a, const Var& r);
/// a (R x C) elementwise-times r (1 x C) broadcast over rows.
Var mul_rowvec(const Var& a, const Var& r);
Var matmul(const Var& a, const Var& b);
/// a * b^T
Var matmul_nt(const Var& a, const Var& b);
/// x * W + b with W (in x out) and b (1 x out).
Var linear(const Var& x, const Var& w, const Var& b);
Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-5);
Var gelu(const Var& x);
Var relu(const Var& x);
Var abs(const Var& x);
Var sum(const Var& x);
Var mean(const Var& x);
Var mean_rows(const Var& x);
Var concat_rows(std::span<const Var> parts);
Var concat_cols(const Var& a, const Var& b);
Var slice_rows(const Var& x, Eigen::Index start, Eigen::Index count);
Var gather_rows(const Var& x, std::span<const int> rows);
Var repeat_rows(const Var& r, Eigen::Index n);
/// Column vector of the selected (row, col) entries.
Var pick(const Var& x, std::span<const std::pair<int, int>> at);
Var row_normalize(const Var& x, double eps = 1e-12);
Var log_softmax_rows(const Var& x);
/// Sum of entries strictly above the diagonal of a square matrix.
Var sum_strict_upper(const Var& x);
/// Inverted dropout; identity when rate == 0.
Var dropout(const Var& x, double rate, std::mt19937_64& rng);

/// Multi-head scaled dot-product attention on already projected q, k, v.
Var attention(const Var& q, const Var& k, const Var& v, int n_heads);

/// Per-row KL(softmax(src/tau) || softmax(tgt/tau)) as an R x 1 column.
Var kl_div_rows(const Var& src, const Var& tgt, double tau);

/// B x B Euclidean distance matrix between rows.
Var pairwise_distance(const Var& x);

}  // namespace dcr::ag
