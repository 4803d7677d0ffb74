// SPDX-License-Identifier: Apache-2.0
#include "dcr/autograd.hpp"

#include <cmath>
#include <memory>
#include <stdexcept>

namespace dcr::ag {

Parameter::Parameter(std::string n, Matrix v, bool is_trainable)
    : name(std::move(n)), value(std::move(v)), trainable(is_trainable) {
  grad = Matrix::Zero(value.rows(), value.cols());
}

void Parameter::zero_grad() {
  if (grad.rows() != value.rows() || grad.cols() != value.cols()) {
    grad = Matrix::Zero(value.rows(), value.cols());
  } else {
    grad.setZero();
  }
}

const Matrix& Var::value() const { return tape_->value(id_); }

Matrix Var::grad() const { return tape_->grad_of(id_); }

const Matrix& Tape::value(int id) const {
  const Node& n = nodes_[id];
  return n.ref != nullptr ? *n.ref : n.value;
}

Matrix Tape::grad_of(int id) const {
  const Node& n = nodes_[id];
  if (n.has_grad) return n.grad;
  const Matrix& v = value(id);
  return Matrix::Zero(v.rows(), v.cols());
}

Var Tape::constant(Matrix value) {
  Node n;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::input(Matrix value) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = record_;
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::param(Parameter& p) {
  if (auto it = param_nodes_.find(&p); it != param_nodes_.end()) {
    return Var(this, it->second);
  }
  Node n;
  n.ref = &p.value;
  n.requires_grad = record_ && p.trainable;
  n.param = p.trainable ? &p : nullptr;
  nodes_.push_back(std::move(n));
  const int id = static_cast<int>(nodes_.size()) - 1;
  param_nodes_.emplace(&p, id);
  return Var(this, id);
}

Var Tape::push(Matrix value, std::initializer_list<Var> inputs, BackwardFn backward) {
  return push(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()),
              std::move(backward));
}

Var Tape::push(Matrix value, std::span<const Var> inputs, BackwardFn backward) {
  Node n;
  n.value = std::move(value);
  if (record_) {
    for (const Var& in : inputs) {
      if (nodes_[in.id()].requires_grad) {
        n.requires_grad = true;
        break;
      }
    }
    if (n.requires_grad) n.backward = std::move(backward);
  }
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

void Tape::backward(const Var& root) {
  if (root.rows() != 1 || root.cols() != 1) {
    throw std::invalid_argument("backward root must be a scalar");
  }
  const std::pair<Var, Matrix> seed{root, Matrix::Ones(1, 1)};
  backward(std::span<const std::pair<Var, Matrix>>(&seed, 1));
}

void Tape::backward(std::span<const std::pair<Var, Matrix>> seeds) {
  if (!record_) throw std::logic_error("backward on a non-recording tape");
  for (Node& n : nodes_) {
    n.has_grad = false;
  }
  for (const auto& [var, g] : seeds) {
    accumulate(var.id(), g);
  }
  run_backward();
}

void Tape::run_backward() {
  for (int id = static_cast<int>(nodes_.size()) - 1; id >= 0; --id) {
    Node& n = nodes_[id];
    if (!n.has_grad) continue;
    if (n.backward) {
      n.backward(*this, n.grad);
    } else if (n.param != nullptr) {
      Parameter& p = *n.param;
      if (p.grad.rows() != p.value.rows() || p.grad.cols() != p.value.cols()) {
        p.grad = Matrix::Zero(p.value.rows(), p.value.cols());
      }
      p.grad += n.grad;
    }
  }
}

namespace {

void check_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch");
  }
}

Tape& tape_of(const Var& a) { return *a.tape(); }

}  // namespace

Var add(const Var& a, const Var& b) {
  check_same_shape(a, b, "add");
  const int ia = a.id(), ib = b.id();
  return tape_of(a).push(a.value() + b.value(), {a, b}, [ia, ib](Tape& t, const Matrix& g) {
    t.accumulate(ia, g);
    t.accumulate(ib, g);
  });
}

Var sub(const Var& a, const Var& b) {
  check_same_shape(a, b, "sub");
  const int ia = a.id(), ib = b.id();
  return tape_of(a).push(a.value() - b.value(), {a, b}, [ia, ib](Tape& t, const Matrix& g) {
    t.accumulate(ia, g);
    t.accumulate(ib, -g);
  });
}

Var mul(const Var& a, const Var& b) {
  check_same_shape(a, b, "mul");
  const int ia = a.id(), ib = b.id();
  return tape_of(a).push(a.value().cwiseProduct(b.value()), {a, b},
                         [ia, ib](Tape& t, const Matrix& g) {
                           t.accumulate(ia, g.cwiseProduct(t.value(ib)));
                           t.accumulate(ib, g.cwiseProduct(t.value(ia)));
                         });
}

Var scale(const Var& a, double s) {
  const int ia = a.id();
  return tape_of(a).push(a.value() * s, {a},
                         [ia, s](Tape& t, const Matrix& g) { t.accumulate(ia, g * s); });
}

Var add_scalar(const Var& a, double c) {
  const int ia = a.id();
  Matrix out = a.value().array() + c;
  return tape_of(a).push(std::move(out), {a},
                         [ia](Tape& t, const Matrix& g) { t.accumulate(ia, g); });
}

Var add_rowvec(const Var& a, const Var& r) {
  if (r.rows() != 1 || r.cols() != a.cols()) {
    throw std::invalid_argument("add_rowvec: shape mismatch");
  }
  const int ia = a.id(), ir = r.id();
  Matrix out = a.value().rowwise() + r.value().row(0);
  return tape_of(a).push(std::move(out), {a, r}, [ia, ir](Tape& t, const Matrix& g) {
    t.accumulate(ia, g);
    t.accumulate(ir, g.colwise().sum());
  });
}

Var mul_rowvec(const Var& a, const Var& r) {
  if (r.rows() != 1 || r.cols() != a.cols()) {
    throw std::invalid_argument("mul_rowvec: shape mismatch");
  }
  const int ia = a.id(), ir = r.id();
  Matrix out = a.value().array().rowwise() * r.value().row(0).array();
  return tape_of(a).push(std::move(out), {a, r}, [ia, ir](Tape& t, const Matrix& g) {
    const Matrix& av = t.value(ia);
    const Matrix& rv = t.value(ir);
    t.accumulate(ia, Matrix(g.array().rowwise() * rv.row(0).array()));
    t.accumulate(ir, g.cwiseProduct(av).colwise().sum());
  });
}

Var matmul(const Var& a, const Var& b) {
  if (a.cols() != b.rows()) throw std::invalid_argument("matmul: shape mismatch");
  const int ia = a.id(), ib = b.id();
  Matrix out = a.value() * b.value();
  return tape_of(a).push(std::move(out), {a, b}, [ia, ib](Tape& t, const Matrix& g) {
    if (t.requires_grad(ia)) t.accumulate(ia, g * t.value(ib).transpose());
    if (t.requires_grad(ib)) t.accumulate(ib, t.value(ia).transpose() * g);
  });
}

Var matmul_nt(const Var& a, const Var& b) {
  if (a.cols() != b.cols()) throw std::invalid_argument("matmul_nt: shape mismatch");
  const int ia = a.id(), ib = b.id();
  Matrix out = a.value() * b.value().transpose();
  return tape_of(a).push(std::move(out), {a, b}, [ia, ib](Tape& t, const Matrix& g) {
    if (t.requires_grad(ia)) t.accumulate(ia, g * t.value(ib));
    if (t.requires_grad(ib)) t.accumulate(ib, g.transpose() * t.value(ia));
  });
}

Var linear(const Var& x, const Var& w, const Var& b) {
  if (x.cols() != w.rows() || b.rows() != 1 || b.cols() != w.cols()) {
    throw std::invalid_argument("linear: shape mismatch");
  }
  const int ix = x.id(), iw = w.id(), ib = b.id();
  Matrix out = x.value() * w.value();
  out.rowwise() += b.value().row(0);
  return tape_of(x).push(std::move(out), {x, w, b}, [ix, iw, ib](Tape& t, const Matrix& g) {
    if (t.requires_grad(ix)) t.accumulate(ix, g * t.value(iw).transpose());
    if (t.requires_grad(iw)) t.accumulate(iw, t.value(ix).transpose() * g);
    if (t.requires_grad(ib)) t.accumulate(ib, g.colwise().sum());
  });
}

Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps) {
  const Matrix& xv = x.value();
  const Eigen::Index cols = xv.cols();
  if (gamma.cols() != cols || beta.cols() != cols) {
    throw std::invalid_argument("layer_norm: shape mismatch");
  }
  auto xhat = std::make_shared<Matrix>(xv.rows(), cols);
  auto inv_std = std::make_shared<Eigen::VectorXd>(xv.rows());
  for (Eigen::Index r = 0; r < xv.rows(); ++r) {
    const double mu = xv.row(r).mean();
    const double var = (xv.row(r).array() - mu).square().mean();
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)(r) = is;
    xhat->row(r) = (xv.row(r).array() - mu) * is;
  }
  Matrix out = xhat->array().rowwise() * gamma.value().row(0).array();
  out.rowwise() += beta.value().row(0);
  const int ix = x.id(), ig = gamma.id(), ib = beta.id();
  return tape_of(x).push(std::move(out), {x, gamma, beta},
                         [ix, ig, ib, xhat, inv_std](Tape& t, const Matrix& g) {
                           const Matrix& gv = t.value(ig);
                           if (t.requires_grad(ig)) t.accumulate(ig, g.cwiseProduct(*xhat).colwise().sum());
                           if (t.requires_grad(ib)) t.accumulate(ib, g.colwise().sum());
                           if (!t.requires_grad(ix)) return;
                           Matrix dxhat = g.array().rowwise() * gv.row(0).array();
                           Matrix dx(g.rows(), g.cols());
                           for (Eigen::Index r = 0; r < g.rows(); ++r) {
                             const double m1 = dxhat.row(r).mean();
                             const double m2 = dxhat.row(r).cwiseProduct(xhat->row(r)).mean();
                             dx.row(r) = (dxhat.row(r).array() - m1 - xhat->row(r).array() * m2) *
                                         (*inv_std)(r);
                           }
                           t.accumulate(ix, dx);
                         });
}

Var gelu(const Var& x) {
  constexpr double k = 0.7978845608028654;  // sqrt(2/pi)
  constexpr double c = 0.044715;
  const Matrix& xv = x.value();
  Matrix out = xv.unaryExpr([](double v) {
    return 0.5 * v * (1.0 + std::tanh(k * (v + c * v * v * v)));
  });
  const int ix = x.id();
  return tape_of(x).push(std::move(out), {x}, [ix](Tape& t, const Matrix& g) {
    Matrix d = t.value(ix).unaryExpr([](double v) {
      const double u = k * (v + c * v * v * v);
      const double th = std::tanh(u);
      const double du = k * (1.0 + 3.0 * c * v * v);
      return 0.5 * (1.0 + th) + 0.5 * v * (1.0 - th * th) * du;
    });
    t.accumulate(ix, g.cwiseProduct(d));
  });
}

Var relu(const Var& x) {
  const int ix = x.id();
  Matrix out = x.value().cwiseMax(0.0);
  return tape_of(x).push(std::move(out), {x}, [ix](Tape& t, const Matrix& g) {
    Matrix mask = (t.value(ix).array() > 0.0).cast<double>();
    t.accumulate(ix, g.cwiseProduct(mask));
  });
}

Var abs(const Var& x) {
  const int ix = x.id();
  Matrix out = x.value().cwiseAbs();
  return tape_of(x).push(std::move(out), {x}, [ix](Tape& t, const Matrix& g) {
    Matrix sign = t.value(ix).unaryExpr([](double v) { return v > 0 ? 1.0 : (v < 0 ? -1.0 : 0.0); });
    t.accumulate(ix, g.cwiseProduct(sign));
  });
}

Var sum(const Var& x) {
  const int ix = x.id();
  Matrix out(1, 1);
  out(0, 0) = x.value().sum();
  const Eigen::Index r = x.rows(), c = x.cols();
  return tape_of(x).push(std::move(out), {x}, [ix, r, c](Tape& t, const Matrix& g) {
    t.accumulate(ix, Matrix::Constant(r, c, g(0, 0)));
  });
}

Var mean(const Var& x) {
  const double n = static_cast<double>(x.value().size());
  return scale(sum(x), 1.0 / n);
}

Var mean_rows(const Var& x) {
  const int ix = x.id();
  const Eigen::Index r = x.rows();
  Matrix out = x.value().colwise().mean();
  return tape_of(x).push(std::move(out), {x}, [ix, r](Tape& t, const Matrix& g) {
    t.accumulate(ix, g.replicate(r, 1) / static_cast<double>(r));
  });
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: no inputs");
  const Eigen::Index cols = parts[0].cols();
  Eigen::Index rows = 0;
  for (const Var& p : parts) {
    if (p.cols() != cols) throw std::invalid_argument("concat_rows: column mismatch");
    rows += p.rows();
  }
  Matrix out(rows, cols);
  std::vector<std::pair<int, Eigen::Index>> layout;
  Eigen::Index at = 0;
  for (const Var& p : parts) {
    out.middleRows(at, p.rows()) = p.value();
    layout.emplace_back(p.id(), at);
    at += p.rows();
  }
  return tape_of(parts[0]).push(std::move(out), parts, [layout](Tape& t, const Matrix& g) {
    for (const auto& [id, start] : layout) {
      if (t.requires_grad(id)) t.accumulate(id, g.middleRows(start, t.value(id).rows()));
    }
  });
}

Var concat_cols(const Var& a, const Var& b) {
  if (a.rows() != b.rows()) throw std::invalid_argument("concat_cols: row mismatch");
  Matrix out(a.rows(), a.cols() + b.cols());
  out.leftCols(a.cols()) = a.value();
  out.rightCols(b.cols()) = b.value();
  const int ia = a.id(), ib = b.id();
  const Eigen::Index ca = a.cols(), cb = b.cols();
  return tape_of(a).push(std::move(out), {a, b}, [ia, ib, ca, cb](Tape& t, const Matrix& g) {
    t.accumulate(ia, g.leftCols(ca));
    t.accumulate(ib, g.rightCols(cb));
  });
}

Var slice_rows(const Var& x, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || count < 0 || start + count > x.rows()) {
    throw std::invalid_argument("slice_rows: out of range");
  }
  const int ix = x.id();
  const Eigen::Index r = x.rows(), c = x.cols();
  Matrix out = x.value().middleRows(start, count);
  return tape_of(x).push(std::move(out), {x}, [ix, r, c, start, count](Tape& t, const Matrix& g) {
    Matrix full = Matrix::Zero(r, c);
    full.middleRows(start, count) = g;
    t.accumulate(ix, full);
  });
}

Var gather_rows(const Var& x, std::span<const int> rows) {
  const Matrix& xv = x.value();
  std::vector<int> idx(rows.begin(), rows.end());
  Matrix out(static_cast<Eigen::Index>(idx.size()), xv.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0 || idx[i] >= xv.rows()) throw std::invalid_argument("gather_rows: index out of range");
    out.row(static_cast<Eigen::Index>(i)) = xv.row(idx[i]);
  }
  const int ix = x.id();
  const Eigen::Index r = xv.rows(), c = xv.cols();
  return tape_of(x).push(std::move(out), {x}, [ix, r, c, idx](Tape& t, const Matrix& g) {
    Matrix full = Matrix::Zero(r, c);
    for (std::size_t i = 0; i < idx.size(); ++i) full.row(idx[i]) += g.row(static_cast<Eigen::Index>(i));
    t.accumulate(ix, full);
  });
}

Var repeat_rows(const Var& r, Eigen::Index n) {
  if (r.rows() != 1) throw std::invalid_argument("repeat_rows: expects a row vector");
  const int ir = r.id();
  Matrix out = r.value().replicate(n, 1);
  return tape_of(r).push(std::move(out), {r},
                         [ir](Tape& t, const Matrix& g) { t.accumulate(ir, g.colwise().sum()); });
}

Var pick(const Var& x, std::span<const std::pair<int, int>> at) {
  std::vector<std::pair<int, int>> where(at.begin(), at.end());
  Matrix out(static_cast<Eigen::Index>(where.size()), 1);
  for (std::size_t i = 0; i < where.size(); ++i) {
    out(static_cast<Eigen::Index>(i), 0) = x.value()(where[i].first, where[i].second);
  }
  const int ix = x.id();
  const Eigen::Index r = x.rows(), c = x.cols();
  return tape_of(x).push(std::move(out), {x}, [ix, r, c, where](Tape& t, const Matrix& g) {
    Matrix full = Matrix::Zero(r, c);
    for (std::size_t i = 0; i < where.size(); ++i) {
      full(where[i].first, where[i].second) += g(static_cast<Eigen::Index>(i), 0);
    }
    t.accumulate(ix, full);
  });
}

Var row_normalize(const Var& x, double eps) {
  const Matrix& xv = x.value();
  auto norms = std::make_shared<Eigen::VectorXd>(xv.rowwise().norm());
  Matrix out(xv.rows(), xv.cols());
  for (Eigen::Index r = 0; r < xv.rows(); ++r) {
    out.row(r) = xv.row(r) / std::max((*norms)(r), eps);
  }
  const int ix = x.id();
  return tape_of(x).push(std::move(out), {x}, [ix, norms, eps](Tape& t, const Matrix& g) {
    const Matrix& xv = t.value(ix);
    Matrix dx(g.rows(), g.cols());
    for (Eigen::Index r = 0; r < g.rows(); ++r) {
      const double n = std::max((*norms)(r), eps);
      const Eigen::RowVectorXd y = xv.row(r) / n;
      dx.row(r) = (g.row(r) - y * g.row(r).dot(y)) / n;
    }
    t.accumulate(ix, dx);
  });
}

namespace {

Matrix log_softmax_value(const Matrix& x) {
  Matrix out(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const double m = x.row(r).maxCoeff();
    const double lse = m + std::log((x.row(r).array() - m).exp().sum());
    out.row(r) = x.row(r).array() - lse;
  }
  return out;
}

}  // namespace

Var log_softmax_rows(const Var& x) {
  Matrix out = log_softmax_value(x.value());
  auto probs = std::make_shared<Matrix>(out.array().exp());
  const int ix = x.id();
  return tape_of(x).push(std::move(out), {x}, [ix, probs](Tape& t, const Matrix& g) {
    Matrix dx = g - (probs->array().colwise() * g.rowwise().sum().array()).matrix();
    t.accumulate(ix, dx);
  });
}

Var sum_strict_upper(const Var& x) {
  if (x.rows() != x.cols()) throw std::invalid_argument("sum_strict_upper: expects a square matrix");
  const Eigen::Index n = x.rows();
  double s = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = i + 1; j < n; ++j) s += x.value()(i, j);
  }
  Matrix out(1, 1);
  out(0, 0) = s;
  const int ix = x.id();
  return tape_of(x).push(std::move(out), {x}, [ix, n](Tape& t, const Matrix& g) {
    Matrix full = Matrix::Zero(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index j = i + 1; j < n; ++j) full(i, j) = g(0, 0);
    }
    t.accumulate(ix, full);
  });
}

Var dropout(const Var& x, double rate, std::mt19937_64& rng) {
  if (rate <= 0.0) return x;
  if (rate >= 1.0) throw std::invalid_argument("dropout: rate must be < 1");
  std::bernoulli_distribution keep(1.0 - rate);
  auto mask = std::make_shared<Matrix>(x.rows(), x.cols());
  const double inv = 1.0 / (1.0 - rate);
  for (Eigen::Index i = 0; i < mask->size(); ++i) mask->data()[i] = keep(rng) ? inv : 0.0;
  Matrix out = x.value().cwiseProduct(*mask);
  const int ix = x.id();
  return tape_of(x).push(std::move(out), {x}, [ix, mask](Tape& t, const Matrix& g) {
    t.accumulate(ix, g.cwiseProduct(*mask));
  });
}

Var attention(const Var& q, const Var& k, const Var& v, int n_heads) {
  const Matrix& qv = q.value();
  const Matrix& kv = k.value();
  const Matrix& vv = v.value();
  const Eigen::Index dim = qv.cols();
  if (kv.cols() != dim || vv.cols() != dim || kv.rows() != vv.rows()) {
    throw std::invalid_argument("attention: shape mismatch");
  }
  if (n_heads <= 0 || dim % n_heads != 0) {
    throw std::invalid_argument("attention: heads must divide the embedding width");
  }
  const Eigen::Index dh = dim / n_heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  auto probs = std::make_shared<std::vector<Matrix>>(n_heads);
  Matrix out(qv.rows(), dim);
  for (int h = 0; h < n_heads; ++h) {
    Matrix s = (qv.middleCols(h * dh, dh) * kv.middleCols(h * dh, dh).transpose()) * inv_sqrt;
    for (Eigen::Index r = 0; r < s.rows(); ++r) {
      const double m = s.row(r).maxCoeff();
      s.row(r) = (s.row(r).array() - m).exp();
      s.row(r) /= s.row(r).sum();
    }
    out.middleCols(h * dh, dh) = s * vv.middleCols(h * dh, dh);
    (*probs)[h] = std::move(s);
  }
  const int iq = q.id(), ik = k.id(), iv = v.id();
  return tape_of(q).push(
      std::move(out), {q, k, v}, [iq, ik, iv, n_heads, dh, inv_sqrt, probs](Tape& t, const Matrix& g) {
        const Matrix& qv = t.value(iq);
        const Matrix& kv = t.value(ik);
        const Matrix& vv = t.value(iv);
        Matrix dq = Matrix::Zero(qv.rows(), qv.cols());
        Matrix dk = Matrix::Zero(kv.rows(), kv.cols());
        Matrix dv = Matrix::Zero(vv.rows(), vv.cols());
        for (int h = 0; h < n_heads; ++h) {
          const Matrix& p = (*probs)[h];
          const auto go = g.middleCols(h * dh, dh);
          dv.middleCols(h * dh, dh) = p.transpose() * go;
          Matrix dp = go * vv.middleCols(h * dh, dh).transpose();
          Eigen::VectorXd rowdot = dp.cwiseProduct(p).rowwise().sum();
          Matrix ds = p.array() * (dp.colwise() - rowdot).array();
          dq.middleCols(h * dh, dh) = ds * kv.middleCols(h * dh, dh) * inv_sqrt;
          dk.middleCols(h * dh, dh) = ds.transpose() * qv.middleCols(h * dh, dh) * inv_sqrt;
        }
        t.accumulate(iq, dq);
        t.accumulate(ik, dk);
        t.accumulate(iv, dv);
      });
}

Var kl_div_rows(const Var& src, const Var& tgt, double tau) {
  check_same_shape(src, tgt, "kl_div_rows");
  if (!(tau > 0.0)) throw std::invalid_argument("kl_div_rows: temperature must be positive");
  auto lp = std::make_shared<Matrix>(log_softmax_value(src.value() / tau));
  auto lq = std::make_shared<Matrix>(log_softmax_value(tgt.value() / tau));
  Matrix out(src.rows(), 1);
  for (Eigen::Index r = 0; r < src.rows(); ++r) {
    out(r, 0) = (lp->row(r).array().exp() * (lp->row(r) - lq->row(r)).array()).sum();
  }
  const int is = src.id(), it = tgt.id();
  return tape_of(src).push(std::move(out), {src, tgt}, [is, it, tau, lp, lq](Tape& t, const Matrix& g) {
    const Matrix p = lp->array().exp();
    const Matrix q = lq->array().exp();
    if (t.requires_grad(it)) {
      Matrix d = ((q - p).array().colwise() * g.col(0).array()) / tau;
      t.accumulate(it, d);
    }
    if (t.requires_grad(is)) {
      const Matrix diff = *lp - *lq;
      Eigen::VectorXd expect = p.cwiseProduct(diff).rowwise().sum();
      Matrix d = p.array() * (diff.colwise() - expect).array();
      d = (d.array().colwise() * g.col(0).array()) / tau;
      t.accumulate(is, d);
    }
  });
}

Var pairwise_distance(const Var& x) {
  constexpr double kMinSq = 1e-12;
  const Matrix& xv = x.value();
  const Eigen::Index n = xv.rows();
  auto dist = std::make_shared<Matrix>(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      const double sq = (xv.row(i) - xv.row(j)).squaredNorm();
      (*dist)(i, j) = std::sqrt(std::max(sq, kMinSq));
    }
  }
  Matrix out = *dist;
  const int ix = x.id();
  return tape_of(x).push(std::move(out), {x}, [ix, dist](Tape& t, const Matrix& g) {
    const Matrix& xv = t.value(ix);
    const Eigen::Index n = xv.rows();
    Matrix dx = Matrix::Zero(n, xv.cols());
    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index j = 0; j < n; ++j) {
        if (i == j || g(i, j) == 0.0) continue;
        const double d = (*dist)(i, j);
        if (d * d <= kMinSq) continue;
        const Eigen::RowVectorXd dir = (xv.row(i) - xv.row(j)) * (g(i, j) / d);
        dx.row(i) += dir;
        dx.row(j) -= dir;
      }
    }
    t.accumulate(ix, dx);
  });
}

}  // namespace dcr::ag
