// SPDX-License-Identifier: Apache-2.0
//
// Text-guided aggregation: the parallel fusion module that turns a caption
// embedding plus image tokens into N global representations, and the
// current-task objectives defined on them.
#pragma once

#include "dcr/backbone.hpp"
#include "dcr/nn.hpp"

#include <span>

namespace dcr::tga {

struct PFMConfig {
  int n_heads = 4;
  double dropout_rate = 0.1;
  int mlp_hidden = 128;

  void validate(int embed_dim) const;
};

/// Two cross-attention branches (text->image, image->text) joined by a
/// concatenation MLP with a residual on the image-wise branch.
class ParallelFusion {
 public:
  ParallelFusion() = default;
  ParallelFusion(int embed_dim, const PFMConfig& cfg, std::mt19937_64& rng);

  /// d_star: 1 x D, class_embs: N x D, patch_embs: P x D. Returns G (N x D).
  ag::Var forward(ag::Tape& tape, const nn::ForwardContext& ctx, const ag::Var& d_star,
                  const ag::Var& class_embs, const ag::Var& patch_embs);

  void visit(const nn::ParameterVisitor& f);
  void visit(const nn::ConstParameterVisitor& f) const;

 private:
  int dim_ = 0;
  double dropout_ = 0.0;
  nn::MultiHeadAttention text_attn_;
  nn::LayerNorm text_norm_;
  nn::MultiHeadAttention image_attn_;
  nn::LayerNorm image_norm_;
  nn::Linear mlp_in_;
  nn::Linear mlp_out_;
};

/// Inference-mode fusion on detached values.
Matrix pfm_fuse(ParallelFusion& pfm, const backbone::TextEmbedding& d_star,
                const backbone::ImageEmbeddingValues& embs);

/// Sum over row pairs i<j of |cos(G_i, G_j)|.
ag::Var orthogonal_loss(const ag::Var& g);
double orthogonal_loss(const Matrix& g);

/// Mean negative log-softmax at the label over the rows of `logits`.
ag::Var ce_loss(const ag::Var& logits, std::span<const int> labels);
double ce_loss(const Matrix& logits, std::span<const int> labels);
double ce_loss(std::span<const double> logits, int label);

enum class TripletDistance { Euclidean, Cosine };

/// Batch-hard triplet loss: hardest positive and hardest negative per anchor,
/// hinge with margin, mean over anchors.
ag::Var triplet_loss(const ag::Var& reps, std::span<const int> labels, double margin,
                     TripletDistance distance = TripletDistance::Euclidean);
double triplet_loss(const Matrix& reps, std::span<const int> labels, double margin,
                    TripletDistance distance = TripletDistance::Euclidean);

}  // namespace dcr::tga
