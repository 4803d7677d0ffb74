// SPDX-License-Identifier: Apache-2.0
#include "dcr/nn.hpp"

namespace dcr::nn {

Matrix random_normal(Eigen::Index rows, Eigen::Index cols, double std, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, std);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
  return m;
}

Linear::Linear(const std::string& name, int in, int out, std::mt19937_64& rng, double std)
    : weight(name + ".weight", random_normal(in, out, std, rng)),
      bias(name + ".bias", Matrix::Zero(1, out)) {}

Var Linear::operator()(Tape& tape, const Var& x) {
  return ag::linear(x, tape.param(weight), tape.param(bias));
}

void Linear::visit(const ParameterVisitor& f) {
  f(weight);
  f(bias);
}

void Linear::visit(const ConstParameterVisitor& f) const {
  f(weight);
  f(bias);
}

LayerNorm::LayerNorm(const std::string& name, int dim)
    : gamma(name + ".gamma", Matrix::Ones(1, dim)), beta(name + ".beta", Matrix::Zero(1, dim)) {}

Var LayerNorm::operator()(Tape& tape, const Var& x) {
  return ag::layer_norm(x, tape.param(gamma), tape.param(beta));
}

void LayerNorm::visit(const ParameterVisitor& f) {
  f(gamma);
  f(beta);
}

void LayerNorm::visit(const ConstParameterVisitor& f) const {
  f(gamma);
  f(beta);
}

MultiHeadAttention::MultiHeadAttention(const std::string& name, int dim, int heads,
                                       std::mt19937_64& rng, double init_std)
    : q_proj(name + ".q", dim, dim, rng, init_std),
      k_proj(name + ".k", dim, dim, rng, init_std),
      v_proj(name + ".v", dim, dim, rng, init_std),
      out_proj(name + ".out", dim, dim, rng, init_std),
      n_heads(heads) {}

Var MultiHeadAttention::operator()(Tape& tape, const Var& query, const Var& key_value) {
  const Var q = q_proj(tape, query);
  const Var k = k_proj(tape, key_value);
  const Var v = v_proj(tape, key_value);
  return out_proj(tape, ag::attention(q, k, v, n_heads));
}

void MultiHeadAttention::visit(const ParameterVisitor& f) {
  q_proj.visit(f);
  k_proj.visit(f);
  v_proj.visit(f);
  out_proj.visit(f);
}

void MultiHeadAttention::visit(const ConstParameterVisitor& f) const {
  q_proj.visit(f);
  k_proj.visit(f);
  v_proj.visit(f);
  out_proj.visit(f);
}

FeedForward::FeedForward(const std::string& name, int dim, int hidden, std::mt19937_64& rng,
                         double init_std)
    : fc1(name + ".fc1", dim, hidden, rng, init_std), fc2(name + ".fc2", hidden, dim, rng, init_std) {}

Var FeedForward::operator()(Tape& tape, const Var& x) {
  return fc2(tape, ag::gelu(fc1(tape, x)));
}

void FeedForward::visit(const ParameterVisitor& f) {
  fc1.visit(f);
  fc2.visit(f);
}

void FeedForward::visit(const ConstParameterVisitor& f) const {
  fc1.visit(f);
  fc2.visit(f);
}

EncoderBlock::EncoderBlock(const std::string& name, int dim, int heads, int hidden,
                           std::mt19937_64& rng, double init_std)
    : norm1(name + ".norm1", dim),
      attn(name + ".attn", dim, heads, rng, init_std),
      norm2(name + ".norm2", dim),
      ff(name + ".ff", dim, hidden, rng, init_std) {}

Var EncoderBlock::operator()(Tape& tape, const Var& x) {
  const Var h = norm1(tape, x);
  const Var y = ag::add(x, attn(tape, h, h));
  return ag::add(y, ff(tape, norm2(tape, y)));
}

void EncoderBlock::visit(const ParameterVisitor& f) {
  norm1.visit(f);
  attn.visit(f);
  norm2.visit(f);
  ff.visit(f);
}

void EncoderBlock::visit(const ConstParameterVisitor& f) const {
  norm1.visit(f);
  attn.visit(f);
  norm2.visit(f);
  ff.visit(f);
}

DecoderBlock::DecoderBlock(const std::string& name, int dim, int heads, int hidden,
                           std::mt19937_64& rng)
    : self_attn(name + ".self_attn", dim, heads, rng),
      norm1(name + ".norm1", dim),
      cross_attn(name + ".cross_attn", dim, heads, rng),
      norm2(name + ".norm2", dim),
      ff(name + ".ff", dim, hidden, rng),
      norm3(name + ".norm3", dim) {}

Var DecoderBlock::operator()(Tape& tape, const Var& queries, const Var& memory) {
  Var x = norm1(tape, ag::add(queries, self_attn(tape, queries, queries)));
  x = norm2(tape, ag::add(x, cross_attn(tape, x, memory)));
  return norm3(tape, ag::add(x, ff(tape, x)));
}

void DecoderBlock::visit(const ParameterVisitor& f) {
  self_attn.visit(f);
  norm1.visit(f);
  cross_attn.visit(f);
  norm2.visit(f);
  ff.visit(f);
  norm3.visit(f);
}

void DecoderBlock::visit(const ConstParameterVisitor& f) const {
  self_attn.visit(f);
  norm1.visit(f);
  cross_attn.visit(f);
  norm2.visit(f);
  ff.visit(f);
  norm3.visit(f);
}

}  // namespace dcr::nn
