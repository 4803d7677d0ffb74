// SPDX-License-Identifier: Apache-2.0
//
// Attribute compensation: learnable attribute semantics decode attribute
// features from attribute-modulated global representations; each feature is
// then matched to its most similar global view and fused with it.
#pragma once

#include "dcr/attribute_text.hpp"
#include "dcr/nn.hpp"

#include <vector>

namespace dcr::acn {

struct DecoderConfig {
  int n_blocks = 6;
  int n_heads = 4;
  int mlp_hidden = 128;

  void validate(int embed_dim) const;
};

/// What the attribute projection reads before modulating G.
enum class FatSource {
  AttributeVector,  // 12-dim binary attributes -> D
  Semantics,        // learnable semantics S (N x D) -> N x D
};

struct AttributeWiseReps {
  Matrix ag;                       // N x D
  std::vector<int> match_indices;  // N entries in [0, N)
};

/// Tape outputs of the compensation network for one sample.
struct AcnOutput {
  ag::Var f_at;
  ag::Var attribute_features;  // A
  ag::Var attribute_wise;      // AG
  std::vector<int> match_indices;
};

class AttributeCompensation {
 public:
  AttributeCompensation() = default;
  AttributeCompensation(int n_views, int embed_dim, const DecoderConfig& cfg, FatSource source,
                        std::mt19937_64& rng);

  /// f_AT[i] = proj(av) * G_i (elementwise), or proj(S_i) * G_i.
  ag::Var build_fat(ag::Tape& tape, const attr::AttributeVector& av, const ag::Var& g);
  /// Runs the decoder stack with S as queries and f_AT as memory.
  ag::Var decode(ag::Tape& tape, const ag::Var& f_at);
  AcnOutput forward(ag::Tape& tape, const attr::AttributeVector& av, const ag::Var& g);

  int n_blocks() const { return static_cast<int>(blocks_.size()); }
  void visit(const nn::ParameterVisitor& f);
  void visit(const nn::ConstParameterVisitor& f) const;

 private:
  FatSource source_ = FatSource::AttributeVector;
  nn::Linear attr_proj_;
  ag::Parameter semantics_;
  std::vector<nn::DecoderBlock> blocks_;
};

/// k_i = argmax_j cos(A_i, G_j), ties to the lowest index.
std::vector<int> match_attributes(const Matrix& a, const Matrix& g);

/// AG_i = A_i + G_{k_i}.
AttributeWiseReps fuse_attribute_global(const Matrix& a, const Matrix& g, const std::vector<int>& k);
ag::Var fuse_attribute_global(const ag::Var& a, const ag::Var& g, const std::vector<int>& k);

}  // namespace dcr::acn
