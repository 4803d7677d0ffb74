// SPDX-License-Identifier: Apache-2.0
#include "dcr/model.hpp"

#include "dcr/errors.hpp"

#include <numeric>

namespace dcr {

namespace {

constexpr double kHeadInitStd = 0.02;

// Independent streams per component so that changing one sub-module's size
// does not reshuffle another's initialisation.
std::mt19937_64 component_rng(std::uint64_t seed, std::uint64_t salt) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(salt)};
  return std::mt19937_64(seq);
}

}  // namespace

void ModelConfig::validate() const {
  backbone.validate();
  pfm.validate(backbone.embed_dim);
  decoder.validate(backbone.embed_dim);
  if (!(atg.threshold >= 0.0 && atg.threshold <= 1.0)) throw InvalidInput("threshold must lie in [0, 1]");
  if (atg.template_version != attr::kTemplateVersion) {
    throw InvalidInput("unsupported caption template version " + std::to_string(atg.template_version));
  }
}

TextInput make_text_input(const attr::AttributePrediction& prediction, const AtgConfig& cfg) {
  TextInput in;
  in.attributes = attr::threshold_attributes(prediction, {cfg.threshold, cfg.lower_body_exclusive});
  in.caption = cfg.generic_text ? attr::generic_text().text : attr::render_text(in.attributes).text;
  return in;
}

DcrModel::DcrModel(const ModelConfig& cfg, int n_classes, std::uint64_t seed) : cfg_(cfg) {
  cfg.validate();
  if (n_classes <= 0) throw InvalidInput("classifier needs at least one class");
  auto r_image = component_rng(seed, 1);
  auto r_text = component_rng(seed, 2);
  auto r_pfm = component_rng(seed, 3);
  auto r_acn = component_rng(seed, 4);
  auto r_head = component_rng(seed, 5);
  image_ = backbone::ImageEncoder(cfg.backbone, r_image);
  text_ = backbone::TextEncoder(cfg.backbone, r_text);
  pfm_ = tga::ParallelFusion(cfg.backbone.embed_dim, cfg.pfm, r_pfm);
  acn_ = acn::AttributeCompensation(cfg.backbone.n_views, cfg.backbone.embed_dim, cfg.decoder,
                                    cfg.fat_source, r_acn);
  head_ = ag::Parameter("head.weight", nn::random_normal(n_classes, cfg.backbone.embed_dim, kHeadInitStd, r_head));
}

ForwardOutput DcrModel::forward(ag::Tape& tape, const nn::ForwardContext& ctx, const Matrix& patches,
                                const attr::AttributeVector& av, const Matrix& text_embedding) {
  const backbone::ImageEmbeddings embs = image_.forward(tape, patches);
  ForwardOutput out;
  out.g = cfg_.use_pfm ? pfm_.forward(tape, ctx, tape.constant(text_embedding), embs.class_embs, embs.patch_embs)
                       : embs.class_embs;
  if (cfg_.use_acn) {
    acn::AcnOutput a = acn_.forward(tape, av, out.g);
    out.a = a.attribute_features;
    out.ag = a.attribute_wise;
    out.match_indices = std::move(a.match_indices);
  } else {
    out.a = tape.constant(Matrix::Zero(out.g.value().rows(), out.g.value().cols()));
    out.ag = out.g;
    out.match_indices.resize(static_cast<std::size_t>(out.g.value().rows()));
    std::iota(out.match_indices.begin(), out.match_indices.end(), 0);
  }
  const ag::Var w = tape.param(head_);
  out.logits = cfg_.per_row_logits ? ag::mean_rows(ag::matmul_nt(out.g, w))
                                   : ag::matmul_nt(ag::mean_rows(out.g), w);
  return out;
}

ForwardValues DcrModel::evaluate(const ImageTensor& img, const TextInput& text) {
  ag::Tape tape(false);
  const nn::ForwardContext ctx{};
  const Matrix d_star = text_embedding(text.caption).vec;
  const ForwardOutput out = forward(tape, ctx, img.patches(cfg_.backbone.patch_size), text.attributes, d_star);
  return {out.g.value(), out.ag.value(), out.logits.value()};
}

backbone::TextEmbedding DcrModel::text_embedding(const std::string& caption) {
  return text_.encode_cached(caption, cfg_.backbone);
}

void DcrModel::grow_head(int k_new, std::mt19937_64& rng) {
  if (k_new < 0) throw InvalidInput("cannot grow the classifier by a negative count");
  const Matrix extra = nn::random_normal(k_new, head_.value.cols(), kHeadInitStd, rng);
  Matrix grown(head_.value.rows() + k_new, head_.value.cols());
  grown.topRows(head_.value.rows()) = head_.value;
  grown.bottomRows(k_new) = extra;
  head_.value = std::move(grown);
  head_.zero_grad();
}

void DcrModel::visit(const nn::ParameterVisitor& f) {
  image_.visit(f);
  text_.visit(f);
  pfm_.visit(f);
  acn_.visit(f);
  f(head_);
}

void DcrModel::visit(const nn::ConstParameterVisitor& f) const {
  image_.visit(f);
  text_.visit(f);
  pfm_.visit(f);
  acn_.visit(f);
  f(head_);
}

void DcrModel::visit_trainable(const nn::ParameterVisitor& f) {
  visit([&](ag::Parameter& p) {
    if (p.trainable) f(p);
  });
}

void DcrModel::set_frozen(bool frozen) {
  image_.visit([&](ag::Parameter& p) { p.trainable = !frozen; });
  pfm_.visit([&](ag::Parameter& p) { p.trainable = !frozen; });
  acn_.visit([&](ag::Parameter& p) { p.trainable = !frozen; });
  head_.trainable = !frozen;
}

void DcrModel::zero_grad() {
  visit([](ag::Parameter& p) { p.zero_grad(); });
}

}  // namespace dcr
