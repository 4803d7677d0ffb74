// SPDX-License-Identifier: Apache-2.0
#include "dcr/acn.hpp"

#include "dcr/errors.hpp"

namespace dcr::acn {

void DecoderConfig::validate(int embed_dim) const {
  if (n_blocks < 1) throw InvalidInput("decoder needs at least one block");
  if (n_heads <= 0 || embed_dim % n_heads != 0) throw InvalidInput("decoder n_heads must divide embed_dim");
  if (mlp_hidden <= 0) throw InvalidInput("decoder mlp_hidden must be positive");
}

AttributeCompensation::AttributeCompensation(int n_views, int embed_dim, const DecoderConfig& cfg,
                                             FatSource source, std::mt19937_64& rng)
    : source_(source) {
  cfg.validate(embed_dim);
  const int in = source == FatSource::AttributeVector ? static_cast<int>(attr::kNumAttributes) : embed_dim;
  attr_proj_ = nn::Linear("acn.attr_proj", in, embed_dim, rng, 0.2);
  // Start the modulation near identity so f_AT initially tracks G.
  attr_proj_.bias.value.setOnes();
  semantics_ = ag::Parameter("acn.semantics", nn::random_normal(n_views, embed_dim, 1.0, rng));
  for (int i = 0; i < cfg.n_blocks; ++i) {
    blocks_.emplace_back("acn.block" + std::to_string(i), embed_dim, cfg.n_heads, cfg.mlp_hidden, rng);
  }
}

ag::Var AttributeCompensation::build_fat(ag::Tape& tape, const attr::AttributeVector& av, const ag::Var& g) {
  if (g.rows() != semantics_.value.rows() || g.cols() != semantics_.value.cols()) {
    throw InvalidInput("build_fat: G shape does not match the configured N x D");
  }
  if (source_ == FatSource::Semantics) {
    return ag::mul(attr_proj_(tape, tape.param(semantics_)), g);
  }
  Matrix bits(1, static_cast<Eigen::Index>(attr::kNumAttributes));
  const auto reals = av.as_reals();
  for (std::size_t i = 0; i < reals.size(); ++i) bits(0, static_cast<Eigen::Index>(i)) = reals[i];
  return ag::mul_rowvec(g, attr_proj_(tape, tape.constant(std::move(bits))));
}

ag::Var AttributeCompensation::decode(ag::Tape& tape, const ag::Var& f_at) {
  if (f_at.cols() != semantics_.value.cols()) throw InvalidInput("attribute_decode: dimension mismatch");
  ag::Var x = tape.param(semantics_);
  for (nn::DecoderBlock& b : blocks_) x = b(tape, x, f_at);
  return x;
}

AcnOutput AttributeCompensation::forward(ag::Tape& tape, const attr::AttributeVector& av, const ag::Var& g) {
  AcnOutput out;
  out.f_at = build_fat(tape, av, g);
  out.attribute_features = decode(tape, out.f_at);
  out.match_indices = match_attributes(out.attribute_features.value(), g.value());
  out.attribute_wise = fuse_attribute_global(out.attribute_features, g, out.match_indices);
  return out;
}

void AttributeCompensation::visit(const nn::ParameterVisitor& f) {
  attr_proj_.visit(f);
  f(semantics_);
  for (nn::DecoderBlock& b : blocks_) b.visit(f);
}

void AttributeCompensation::visit(const nn::ConstParameterVisitor& f) const {
  attr_proj_.visit(f);
  f(semantics_);
  for (const nn::DecoderBlock& b : blocks_) b.visit(f);
}

std::vector<int> match_attributes(const Matrix& a, const Matrix& g) {
  if (a.cols() != g.cols()) throw InvalidInput("match_attributes: dimension mismatch");
  const Eigen::VectorXd an = a.rowwise().norm();
  const Eigen::VectorXd gn = g.rowwise().norm();
  for (Eigen::Index r = 0; r < an.size(); ++r) {
    if (an(r) <= 1e-12) throw DegenerateInput("match_attributes: zero-norm attribute row");
  }
  for (Eigen::Index r = 0; r < gn.size(); ++r) {
    if (gn(r) <= 1e-12) throw DegenerateInput("match_attributes: zero-norm global row");
  }
  std::vector<int> k(static_cast<std::size_t>(a.rows()), 0);
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    double best = -2.0;
    for (Eigen::Index j = 0; j < g.rows(); ++j) {
      const double c = a.row(i).dot(g.row(j)) / (an(i) * gn(j));
      if (c > best) {
        best = c;
        k[static_cast<std::size_t>(i)] = static_cast<int>(j);
      }
    }
  }
  return k;
}

AttributeWiseReps fuse_attribute_global(const Matrix& a, const Matrix& g, const std::vector<int>& k) {
  ag::Tape tape(false);
  return {fuse_attribute_global(tape.constant(a), tape.constant(g), k).value(), k};
}

ag::Var fuse_attribute_global(const ag::Var& a, const ag::Var& g, const std::vector<int>& k) {
  if (static_cast<Eigen::Index>(k.size()) != a.rows() || a.cols() != g.cols()) {
    throw InvalidInput("fuse_attribute_global: shape mismatch");
  }
  for (int idx : k) {
    if (idx < 0 || idx >= g.rows()) throw InvalidInput("fuse_attribute_global: match index out of range");
  }
  return ag::add(a, ag::gather_rows(g, k));
}

}  // namespace dcr::acn
