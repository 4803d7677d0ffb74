// SPDX-License-Identifier: Apache-2.0
#include "dcr/tga.hpp"

#include "dcr/errors.hpp"

#include <map>
#include <set>

namespace dcr::tga {

void PFMConfig::validate(int embed_dim) const {
  if (n_heads <= 0 || embed_dim % n_heads != 0) throw InvalidInput("PFM n_heads must divide embed_dim");
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw InvalidInput("PFM dropout_rate must lie in [0, 1)");
  if (mlp_hidden <= 0) throw InvalidInput("PFM mlp_hidden must be positive");
}

ParallelFusion::ParallelFusion(int embed_dim, const PFMConfig& cfg, std::mt19937_64& rng)
    : dim_(embed_dim),
      dropout_(cfg.dropout_rate),
      text_attn_("pfm.text_attn", embed_dim, cfg.n_heads, rng),
      text_norm_("pfm.text_norm", embed_dim),
      image_attn_("pfm.image_attn", embed_dim, cfg.n_heads, rng),
      image_norm_("pfm.image_norm", embed_dim),
      mlp_in_("pfm.mlp_in", 2 * embed_dim, cfg.mlp_hidden, rng),
      mlp_out_("pfm.mlp_out", cfg.mlp_hidden, embed_dim, rng) {
  cfg.validate(embed_dim);
}

ag::Var ParallelFusion::forward(ag::Tape& tape, const nn::ForwardContext& ctx, const ag::Var& d_star,
                                const ag::Var& class_embs, const ag::Var& patch_embs) {
  if (d_star.rows() != 1 || d_star.cols() != dim_ || class_embs.cols() != dim_ ||
      patch_embs.cols() != dim_) {
    throw InvalidInput("pfm_fuse: embedding dimensions do not match");
  }
  const bool drop = ctx.training && dropout_ > 0.0;
  if (drop && ctx.rng == nullptr) throw InvalidInput("pfm_fuse: training dropout needs an rng");
  auto maybe_drop = [&](const ag::Var& x) { return drop ? ag::dropout(x, dropout_, *ctx.rng) : x; };

  // Text-wise branch: the caption queries every image token.
  const ag::Var tokens[] = {class_embs, patch_embs};
  const ag::Var image_tokens = ag::concat_rows(tokens);
  const ag::Var text_wise =
      text_norm_(tape, ag::add(d_star, maybe_drop(text_attn_(tape, d_star, image_tokens))));

  // Image-wise branch: each class token queries the caption.
  const ag::Var image_wise =
      image_norm_(tape, ag::add(class_embs, maybe_drop(image_attn_(tape, class_embs, d_star))));

  const ag::Var joint = ag::concat_cols(image_wise, ag::repeat_rows(text_wise, class_embs.rows()));
  const ag::Var mixed = mlp_out_(tape, ag::gelu(mlp_in_(tape, joint)));
  return ag::add(image_wise, mixed);
}

void ParallelFusion::visit(const nn::ParameterVisitor& f) {
  text_attn_.visit(f);
  text_norm_.visit(f);
  image_attn_.visit(f);
  image_norm_.visit(f);
  mlp_in_.visit(f);
  mlp_out_.visit(f);
}

void ParallelFusion::visit(const nn::ConstParameterVisitor& f) const {
  text_attn_.visit(f);
  text_norm_.visit(f);
  image_attn_.visit(f);
  image_norm_.visit(f);
  mlp_in_.visit(f);
  mlp_out_.visit(f);
}

Matrix pfm_fuse(ParallelFusion& pfm, const backbone::TextEmbedding& d_star,
                const backbone::ImageEmbeddingValues& embs) {
  ag::Tape tape(false);
  const nn::ForwardContext ctx{};
  return pfm
      .forward(tape, ctx, tape.constant(d_star.vec), tape.constant(embs.class_embs),
               tape.constant(embs.patch_embs))
      .value();
}

namespace {

void require_nonzero_rows(const Matrix& m, const char* what) {
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    if (m.row(r).norm() <= 1e-12) {
      throw DegenerateInput(std::string(what) + ": row " + std::to_string(r) + " has zero norm");
    }
  }
}

struct HardPairs {
  std::vector<std::pair<int, int>> pos;  // (anchor, hardest positive)
  std::vector<std::pair<int, int>> neg;  // (anchor, hardest negative)
  std::vector<int> lone_pos_slot;        // anchor order of anchors with no other positive
  std::vector<int> anchor_of_pos;        // anchor order of entries in `pos`
};

void validate_triplet_batch(std::span<const int> labels, Eigen::Index rows) {
  if (static_cast<Eigen::Index>(labels.size()) != rows) {
    throw InvalidInput("triplet_loss: one label per representation required");
  }
  std::map<int, int> counts;
  for (int l : labels) ++counts[l];
  if (counts.size() < 2) throw InvalidBatch("triplet_loss: batch has a single identity, no negatives");
  bool any_pair = false;
  for (const auto& [label, n] : counts) any_pair = any_pair || n >= 2;
  if (!any_pair) throw InvalidBatch("triplet_loss: no identity has two samples");
}

HardPairs mine_hard_pairs(const Matrix& dist, std::span<const int> labels) {
  HardPairs hp;
  const auto n = static_cast<int>(labels.size());
  for (int a = 0; a < n; ++a) {
    int best_pos = -1;
    int best_neg = -1;
    for (int j = 0; j < n; ++j) {
      if (j == a) continue;
      if (labels[j] == labels[a]) {
        if (best_pos < 0 || dist(a, j) > dist(a, best_pos)) best_pos = j;
      } else if (best_neg < 0 || dist(a, j) < dist(a, best_neg)) {
        best_neg = j;
      }
    }
    if (best_pos >= 0) {
      hp.pos.emplace_back(a, best_pos);
      hp.anchor_of_pos.push_back(a);
    } else {
      hp.lone_pos_slot.push_back(a);
    }
    hp.neg.emplace_back(a, best_neg);
  }
  return hp;
}

}  // namespace

ag::Var orthogonal_loss(const ag::Var& g) {
  require_nonzero_rows(g.value(), "orthogonal_loss");
  const ag::Var unit = ag::row_normalize(g);
  return ag::sum_strict_upper(ag::abs(ag::matmul_nt(unit, unit)));
}

double orthogonal_loss(const Matrix& g) {
  ag::Tape tape(false);
  return orthogonal_loss(tape.constant(g)).scalar();
}

ag::Var ce_loss(const ag::Var& logits, std::span<const int> labels) {
  if (static_cast<Eigen::Index>(labels.size()) != logits.rows()) {
    throw InvalidInput("ce_loss: one label per logit row required");
  }
  std::vector<std::pair<int, int>> at;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= logits.cols()) {
      throw InvalidInput("ce_loss: label " + std::to_string(labels[i]) + " out of range");
    }
    at.emplace_back(static_cast<int>(i), labels[i]);
  }
  return ag::scale(ag::mean(ag::pick(ag::log_softmax_rows(logits), at)), -1.0);
}

double ce_loss(const Matrix& logits, std::span<const int> labels) {
  ag::Tape tape(false);
  return ce_loss(tape.constant(logits), labels).scalar();
}

double ce_loss(std::span<const double> logits, int label) {
  Matrix row(1, static_cast<Eigen::Index>(logits.size()));
  for (std::size_t i = 0; i < logits.size(); ++i) row(0, static_cast<Eigen::Index>(i)) = logits[i];
  const int labels[] = {label};
  return ce_loss(row, labels);
}

ag::Var triplet_loss(const ag::Var& reps, std::span<const int> labels, double margin,
                     TripletDistance distance) {
  validate_triplet_batch(labels, reps.rows());
  ag::Var dist;
  if (distance == TripletDistance::Euclidean) {
    dist = ag::pairwise_distance(reps);
  } else {
    const ag::Var unit = ag::row_normalize(reps);
    dist = ag::add_scalar(ag::scale(ag::matmul_nt(unit, unit), -1.0), 1.0);
  }
  const HardPairs hp = mine_hard_pairs(dist.value(), labels);
  ag::Tape& tape = *reps.tape();
  const auto n = static_cast<Eigen::Index>(labels.size());

  // d_p per anchor: picked distances for anchors with positives, 0 otherwise.
  const ag::Var dn = ag::pick(dist, hp.neg);
  ag::Var dp;
  if (hp.lone_pos_slot.empty()) {
    dp = ag::pick(dist, hp.pos);
  } else {
    // Scatter the picked positives into anchor order with zeros for lone anchors.
    Matrix scatter = Matrix::Zero(n, static_cast<Eigen::Index>(hp.pos.size()));
    for (std::size_t k = 0; k < hp.anchor_of_pos.size(); ++k) {
      scatter(hp.anchor_of_pos[k], static_cast<Eigen::Index>(k)) = 1.0;
    }
    dp = ag::matmul(tape.constant(std::move(scatter)), ag::pick(dist, hp.pos));
  }
  return ag::mean(ag::relu(ag::add_scalar(ag::sub(dp, dn), margin)));
}

double triplet_loss(const Matrix& reps, std::span<const int> labels, double margin,
                    TripletDistance distance) {
  ag::Tape tape(false);
  return triplet_loss(tape.constant(reps), labels, margin, distance).scalar();
}

}  // namespace dcr::tga
