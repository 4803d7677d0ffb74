// SPDX-License-Identifier: Apache-2.0
//
// Transformer building blocks expressed over the autograd tape.
#pragma once

#include "dcr/autograd.hpp"

#include <functional>
#include <random>
#include <string>
#include <vector>

namespace dcr::nn {

using ag::Parameter;
using ag::Tape;
using ag::Var;

/// Per-forward settings shared by every module of a model.
struct ForwardContext {
  bool training = false;
  std::mt19937_64* rng = nullptr;  // required when training with dropout
};

using ParameterVisitor = std::function<void(Parameter&)>;
using ConstParameterVisitor = std::function<void(const Parameter&)>;

/// Normal(0, std) initialised matrix.
Matrix random_normal(Eigen::Index rows, Eigen::Index cols, double std, std::mt19937_64& rng);

struct Linear {
  Parameter weight;  // in x out
  Parameter bias;    // 1 x out

  Linear() = default;
  Linear(const std::string& name, int in, int out, std::mt19937_64& rng, double std = 0.02);

  Var operator()(Tape& tape, const Var& x);
  void visit(const ParameterVisitor& f);
  void visit(const ConstParameterVisitor& f) const;
};

struct LayerNorm {
  Parameter gamma;
  Parameter beta;

  LayerNorm() = default;
  LayerNorm(const std::string& name, int dim);

  Var operator()(Tape& tape, const Var& x);
  void visit(const ParameterVisitor& f);
  void visit(const ConstParameterVisitor& f) const;
};

/// Multi-head attention with separate query and key/value sources.
struct MultiHeadAttention {
  Linear q_proj, k_proj, v_proj, out_proj;
  int n_heads = 1;

  MultiHeadAttention() = default;
  MultiHeadAttention(const std::string& name, int dim, int heads, std::mt19937_64& rng,
                     double init_std = 0.02);

  Var operator()(Tape& tape, const Var& query, const Var& key_value);
  void visit(const ParameterVisitor& f);
  void visit(const ConstParameterVisitor& f) const;
};

struct FeedForward {
  Linear fc1, fc2;

  FeedForward() = default;
  FeedForward(const std::string& name, int dim, int hidden, std::mt19937_64& rng,
              double init_std = 0.02);

  Var operator()(Tape& tape, const Var& x);
  void visit(const ParameterVisitor& f);
  void visit(const ConstParameterVisitor& f) const;
};

/// Pre-norm self-attention block used by both encoders.
struct EncoderBlock {
  LayerNorm norm1;
  MultiHeadAttention attn;
  LayerNorm norm2;
  FeedForward ff;

  EncoderBlock() = default;
  EncoderBlock(const std::string& name, int dim, int heads, int hidden, std::mt19937_64& rng,
               double init_std = 0.02);

  Var operator()(Tape& tape, const Var& x);
  void visit(const ParameterVisitor& f);
  void visit(const ConstParameterVisitor& f) const;
};

/// Post-norm decoder block: self-attention, cross-attention, feed-forward,
/// each wrapped in residual + layer norm.
struct DecoderBlock {
  MultiHeadAttention self_attn;
  LayerNorm norm1;
  MultiHeadAttention cross_attn;
  LayerNorm norm2;
  FeedForward ff;
  LayerNorm norm3;

  DecoderBlock() = default;
  DecoderBlock(const std::string& name, int dim, int heads, int hidden, std::mt19937_64& rng);

  Var operator()(Tape& tape, const Var& queries, const Var& memory);
  void visit(const ParameterVisitor& f);
  void visit(const ConstParameterVisitor& f) const;
};

}  // namespace dcr::nn
