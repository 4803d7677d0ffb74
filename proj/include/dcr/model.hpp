// SPDX-License-Identifier: Apache-2.0
//
// The full re-identification network: image/text encoders, parallel fusion,
// attribute compensation and a bias-free linear identity classifier.
#pragma once

#include "dcr/acn.hpp"
#include "dcr/attribute_text.hpp"
#include "dcr/backbone.hpp"
#include "dcr/tga.hpp"

#include <cstdint>
#include <string>

namespace dcr {

struct AtgConfig {
  double threshold = attr::kDefaultThreshold;
  bool lower_body_exclusive = true;
  /// Replace every caption with the attribute-free generic caption.
  bool generic_text = false;
  int template_version = attr::kTemplateVersion;
};

struct ModelConfig {
  backbone::BackboneConfig backbone;
  tga::PFMConfig pfm;
  acn::DecoderConfig decoder;
  acn::FatSource fat_source = acn::FatSource::AttributeVector;
  AtgConfig atg;
  /// Classifier on each global row with logits averaged, instead of on the row mean.
  bool per_row_logits = false;
  /// Without fusion G is the image encoder's class embeddings.
  bool use_pfm = true;
  /// Without compensation AG = G and A is zero.
  bool use_acn = true;

  void validate() const;
};

/// Per-sample forward outputs on a tape.
struct ForwardOutput {
  ag::Var g;       // N x D global representations
  ag::Var a;       // N x D attribute features
  ag::Var ag;      // N x D attribute-wise representations
  ag::Var logits;  // 1 x K
  std::vector<int> match_indices;
};

/// Detached per-sample outputs.
struct ForwardValues {
  Matrix g;
  Matrix ag;
  Matrix logits;
};

/// Caption and attribute vector derived from a sample's attribute scores.
struct TextInput {
  attr::AttributeVector attributes;
  std::string caption;
};

TextInput make_text_input(const attr::AttributePrediction& prediction, const AtgConfig& cfg);

class DcrModel {
 public:
  DcrModel() = default;
  DcrModel(const ModelConfig& cfg, int n_classes, std::uint64_t seed);

  ForwardOutput forward(ag::Tape& tape, const nn::ForwardContext& ctx, const Matrix& patches,
                        const attr::AttributeVector& av, const Matrix& text_embedding);
  ForwardValues evaluate(const ImageTensor& img, const TextInput& text);

  backbone::TextEmbedding text_embedding(const std::string& caption);

  /// Appends `k_new` randomly initialised classifier rows.
  void grow_head(int k_new, std::mt19937_64& rng);
  int num_classes() const { return static_cast<int>(head_.value.rows()); }
  const ModelConfig& config() const { return cfg_; }

  backbone::ImageEncoder& image_encoder() { return image_; }
  backbone::TextEncoder& text_encoder() { return text_; }
  tga::ParallelFusion& fusion() { return pfm_; }
  acn::AttributeCompensation& compensation() { return acn_; }
  ag::Parameter& head() { return head_; }
  const ag::Parameter& head() const { return head_; }

  void visit(const nn::ParameterVisitor& f);
  void visit(const nn::ConstParameterVisitor& f) const;
  /// Visits only parameters that receive gradient updates.
  void visit_trainable(const nn::ParameterVisitor& f);
  void set_frozen(bool frozen);
  void zero_grad();

 private:
  ModelConfig cfg_;
  backbone::ImageEncoder image_;
  backbone::TextEncoder text_;
  tga::ParallelFusion pfm_;
  acn::AttributeCompensation acn_;
  ag::Parameter head_;  // K x D
};

}  // namespace dcr
