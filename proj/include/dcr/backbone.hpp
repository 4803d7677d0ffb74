// SPDX-License-Identifier: Apache-2.0
//
// Miniature dual encoder: a ViT-style image encoder carrying N class tokens
// and a frozen text transformer that summarises a caption into one vector.
#pragma once

#include "dcr/attribute_text.hpp"
#include "dcr/image.hpp"
#include "dcr/nn.hpp"

#include <map>
#include <mutex>
#include <string>
#include <vector>

namespace dcr::backbone {

struct BackboneConfig {
  int n_views = 3;
  int embed_dim = 64;
  int patch_size = 16;
  int image_depth = 2;
  int text_depth = 2;
  int n_heads = 4;
  int mlp_hidden = 128;
  int vocab_size = 64;
  int max_text_len = 32;
  /// One positional vector shared by every class token (false: one per token).
  bool shared_class_position = true;

  int num_patches() const { return (kImageHeight / patch_size) * (kImageWidth / patch_size); }
  int patch_dim() const { return kImageChannels * patch_size * patch_size; }
  /// Throws InvalidInput when a constraint is violated.
  void validate() const;
};

/// Class and patch token outputs of the image encoder, as tape nodes.
struct ImageEmbeddings {
  ag::Var class_embs;  // N x D
  ag::Var patch_embs;  // P x D
};

/// Detached copy of ImageEmbeddings.
struct ImageEmbeddingValues {
  Matrix class_embs;
  Matrix patch_embs;
};

class ImageEncoder {
 public:
  ImageEncoder() = default;
  ImageEncoder(const BackboneConfig& cfg, std::mt19937_64& rng);

  ImageEmbeddings forward(ag::Tape& tape, const Matrix& patches);
  void visit(const nn::ParameterVisitor& f);
  void visit(const nn::ConstParameterVisitor& f) const;

 private:
  int n_views_ = 0;
  nn::Linear patch_proj_;
  ag::Parameter class_tokens_;
  ag::Parameter class_pos_;
  ag::Parameter patch_pos_;
  std::vector<nn::EncoderBlock> blocks_;
  nn::LayerNorm norm_;
};

ImageEmbeddingValues encode_image(ImageEncoder& encoder, const ImageTensor& img,
                                  const BackboneConfig& cfg);

inline constexpr int kPadToken = 0;
inline constexpr int kBosToken = 1;
inline constexpr int kEosToken = 2;
inline constexpr int kUnkToken = 3;

/// Whitespace/punctuation tokenizer over the closed caption vocabulary.
class Tokenizer {
 public:
  Tokenizer();
  static const Tokenizer& standard();

  /// BOS, word ids, EOS, then PAD up to max_len; truncation keeps the EOS.
  std::vector<int> encode(const std::string& text, int max_len) const;
  int vocabulary_size() const { return static_cast<int>(words_.size()); }
  const std::vector<std::string>& words() const { return words_; }

 private:
  std::vector<std::string> words_;
  std::map<std::string, int> ids_;
};

std::vector<int> tokenize(const attr::TextDescription& text, const BackboneConfig& cfg);

struct TextEmbedding {
  Matrix vec;  // 1 x D
};

/// Text transformer whose parameters never receive gradient updates.
class TextEncoder {
 public:
  TextEncoder() = default;
  TextEncoder(const BackboneConfig& cfg, std::mt19937_64& rng);
  TextEncoder(const TextEncoder& other);
  TextEncoder& operator=(const TextEncoder& other);

  /// Hidden state at the end marker, projected to D.
  ag::Var forward(ag::Tape& tape, const std::vector<int>& tokens);
  TextEmbedding encode(const std::vector<int>& tokens);
  /// Memoised encode of a caption (captions come from a closed template).
  TextEmbedding encode_cached(const std::string& caption, const BackboneConfig& cfg);

  void visit(const nn::ParameterVisitor& f);
  void visit(const nn::ConstParameterVisitor& f) const;

 private:
  ag::Parameter token_embedding_;
  ag::Parameter position_;
  std::vector<nn::EncoderBlock> blocks_;
  nn::LayerNorm norm_;
  ag::Parameter projection_;
  std::map<std::string, Matrix> cache_;
  std::mutex cache_mutex_;
};

TextEmbedding encode_text(TextEncoder& encoder, const std::vector<int>& tokens);

}  // namespace dcr::backbone
