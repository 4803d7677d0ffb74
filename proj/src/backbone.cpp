// SPDX-License-Identifier: Apache-2.0
#include "dcr/backbone.hpp"

#include "dcr/errors.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <set>
#include <sstream>

namespace dcr::backbone {

void BackboneConfig::validate() const {
  if (n_views < 2) throw InvalidInput("n_views must be at least 2");
  if (embed_dim <= 0) throw InvalidInput("embed_dim must be positive");
  if (patch_size <= 0 || kImageHeight % patch_size != 0 || kImageWidth % patch_size != 0) {
    throw InvalidInput("patch_size must divide both 256 and 128");
  }
  if (image_depth < 1 || text_depth < 1) throw InvalidInput("encoder depths must be positive");
  if (n_heads <= 0 || embed_dim % n_heads != 0) throw InvalidInput("n_heads must divide embed_dim");
  if (mlp_hidden <= 0) throw InvalidInput("mlp_hidden must be positive");
  if (max_text_len < 3) throw InvalidInput("max_text_len must leave room for BOS/EOS");
  if (vocab_size < Tokenizer::standard().vocabulary_size()) {
    throw InvalidInput("vocab_size is smaller than the caption vocabulary (" +
                       std::to_string(Tokenizer::standard().vocabulary_size()) + ")");
  }
}

ImageEncoder::ImageEncoder(const BackboneConfig& cfg, std::mt19937_64& rng) : n_views_(cfg.n_views) {
  cfg.validate();
  const int d = cfg.embed_dim;
  patch_proj_ = nn::Linear("image.patch_proj", cfg.patch_dim(), d, rng);
  class_tokens_ = ag::Parameter("image.class_tokens", nn::random_normal(cfg.n_views, d, 0.02, rng));
  class_pos_ = ag::Parameter("image.class_pos",
                             nn::random_normal(cfg.shared_class_position ? 1 : cfg.n_views, d, 0.02, rng));
  patch_pos_ = ag::Parameter("image.patch_pos", nn::random_normal(cfg.num_patches(), d, 0.02, rng));
  for (int i = 0; i < cfg.image_depth; ++i) {
    blocks_.emplace_back("image.block" + std::to_string(i), d, cfg.n_heads, cfg.mlp_hidden, rng);
  }
  norm_ = nn::LayerNorm("image.norm", d);
}

ImageEmbeddings ImageEncoder::forward(ag::Tape& tape, const Matrix& patches) {
  if (patches.rows() != patch_pos_.value.rows() || patches.cols() != patch_proj_.weight.value.rows()) {
    throw InvalidInput("patch matrix does not match the encoder configuration");
  }
  const ag::Var x_patch =
      ag::add(patch_proj_(tape, tape.constant(patches)), tape.param(patch_pos_));
  const ag::Var pos = tape.param(class_pos_);
  const ag::Var x_cls = pos.rows() == 1 ? ag::add_rowvec(tape.param(class_tokens_), pos)
                                        : ag::add(tape.param(class_tokens_), pos);
  const ag::Var parts[] = {x_cls, x_patch};
  ag::Var x = ag::concat_rows(parts);
  for (nn::EncoderBlock& b : blocks_) x = b(tape, x);
  x = norm_(tape, x);
  return {ag::slice_rows(x, 0, n_views_), ag::slice_rows(x, n_views_, x.rows() - n_views_)};
}

void ImageEncoder::visit(const nn::ParameterVisitor& f) {
  patch_proj_.visit(f);
  f(class_tokens_);
  f(class_pos_);
  f(patch_pos_);
  for (nn::EncoderBlock& b : blocks_) b.visit(f);
  norm_.visit(f);
}

void ImageEncoder::visit(const nn::ConstParameterVisitor& f) const {
  patch_proj_.visit(f);
  f(class_tokens_);
  f(class_pos_);
  f(patch_pos_);
  for (const nn::EncoderBlock& b : blocks_) b.visit(f);
  norm_.visit(f);
}

ImageEmbeddingValues encode_image(ImageEncoder& encoder, const ImageTensor& img,
                                  const BackboneConfig& cfg) {
  ag::Tape tape(false);
  const ImageEmbeddings e = encoder.forward(tape, img.patches(cfg.patch_size));
  return {e.class_embs.value(), e.patch_embs.value()};
}

Tokenizer::Tokenizer() {
  words_ = {"<pad>", "<bos>", "<eos>", "<unk>"};
  std::set<std::string> vocab = {",", ".", "photo", "of", "a", "person", "wearing", "clothes",
                                 "with", "no", "accessories", "carrying", "and"};
  const attr::AttributeSchema& schema = attr::AttributeSchema::standard();
  for (const attr::CategoryDescriptor& c : schema.categories) {
    for (const std::string& text : {c.phrase, c.label_no, c.label_yes}) {
      std::istringstream words(text);
      for (std::string w; words >> w;) {
        std::transform(w.begin(), w.end(), w.begin(), [](unsigned char ch) { return std::tolower(ch); });
        vocab.insert(w);
      }
    }
  }
  for (const std::string& w : vocab) words_.push_back(w);
  for (std::size_t i = 0; i < words_.size(); ++i) ids_.emplace(words_[i], static_cast<int>(i));
}

const Tokenizer& Tokenizer::standard() {
  static const Tokenizer tokenizer;
  return tokenizer;
}

std::vector<int> Tokenizer::encode(const std::string& text, int max_len) const {
  std::vector<std::string> pieces;
  std::string cur;
  for (unsigned char ch : text) {
    if (std::isalnum(ch)) {
      cur += static_cast<char>(std::tolower(ch));
      continue;
    }
    if (!cur.empty()) pieces.push_back(std::move(cur));
    cur.clear();
    if (std::ispunct(ch)) pieces.emplace_back(1, static_cast<char>(ch));
  }
  if (!cur.empty()) pieces.push_back(std::move(cur));
  if (pieces.empty()) throw InvalidInput("cannot tokenize empty text");

  std::vector<int> ids;
  ids.reserve(static_cast<std::size_t>(max_len));
  ids.push_back(kBosToken);
  for (const std::string& p : pieces) {
    if (static_cast<int>(ids.size()) == max_len - 1) break;
    const auto it = ids_.find(p);
    ids.push_back(it == ids_.end() ? kUnkToken : it->second);
  }
  ids.push_back(kEosToken);
  ids.resize(static_cast<std::size_t>(max_len), kPadToken);
  return ids;
}

std::vector<int> tokenize(const attr::TextDescription& text, const BackboneConfig& cfg) {
  return Tokenizer::standard().encode(text.text, cfg.max_text_len);
}

TextEncoder::TextEncoder(const BackboneConfig& cfg, std::mt19937_64& rng) {
  cfg.validate();
  const int d = cfg.embed_dim;
  // The encoder is never trained, so it is initialised at unit scale to mix
  // token content into the end-marker state.
  const double w_std = 1.0 / std::sqrt(static_cast<double>(d));
  token_embedding_ = ag::Parameter("text.token_embedding", nn::random_normal(cfg.vocab_size, d, 1.0, rng), false);
  position_ = ag::Parameter("text.position", nn::random_normal(cfg.max_text_len, d, 0.1, rng), false);
  for (int i = 0; i < cfg.text_depth; ++i) {
    blocks_.emplace_back("text.block" + std::to_string(i), d, cfg.n_heads, cfg.mlp_hidden, rng, w_std);
  }
  norm_ = nn::LayerNorm("text.norm", d);
  projection_ = ag::Parameter("text.projection", nn::random_normal(d, d, w_std, rng), false);
  visit([](ag::Parameter& p) { p.trainable = false; });
}

TextEncoder::TextEncoder(const TextEncoder& other)
    : token_embedding_(other.token_embedding_),
      position_(other.position_),
      blocks_(other.blocks_),
      norm_(other.norm_),
      projection_(other.projection_) {}

TextEncoder& TextEncoder::operator=(const TextEncoder& other) {
  if (this != &other) {
    token_embedding_ = other.token_embedding_;
    position_ = other.position_;
    blocks_ = other.blocks_;
    norm_ = other.norm_;
    projection_ = other.projection_;
    std::lock_guard lock(cache_mutex_);
    cache_.clear();
  }
  return *this;
}

ag::Var TextEncoder::forward(ag::Tape& tape, const std::vector<int>& tokens) {
  const auto eos = std::find(tokens.begin(), tokens.end(), kEosToken);
  if (tokens.empty() || tokens.front() != kBosToken || eos == tokens.end()) {
    throw InvalidInput("token sequence must start with BOS and contain EOS");
  }
  if (static_cast<Eigen::Index>(tokens.size()) > position_.value.rows()) {
    throw InvalidInput("token sequence longer than max_text_len");
  }
  const std::vector<int> active(tokens.begin(), eos + 1);
  for (int id : active) {
    if (id < 0 || id >= token_embedding_.value.rows()) throw InvalidInput("token id out of vocabulary");
  }
  const auto len = static_cast<Eigen::Index>(active.size());
  ag::Var x = ag::add(ag::gather_rows(tape.param(token_embedding_), active),
                      ag::slice_rows(tape.param(position_), 0, len));
  for (nn::EncoderBlock& b : blocks_) x = b(tape, x);
  x = norm_(tape, x);
  return ag::matmul(ag::slice_rows(x, len - 1, 1), tape.param(projection_));
}

TextEmbedding TextEncoder::encode(const std::vector<int>& tokens) {
  ag::Tape tape(false);
  return {forward(tape, tokens).value()};
}

TextEmbedding TextEncoder::encode_cached(const std::string& caption, const BackboneConfig& cfg) {
  {
    std::lock_guard lock(cache_mutex_);
    if (auto it = cache_.find(caption); it != cache_.end()) return {it->second};
  }
  TextEmbedding e = encode(Tokenizer::standard().encode(caption, cfg.max_text_len));
  std::lock_guard lock(cache_mutex_);
  cache_.emplace(caption, e.vec);
  return e;
}

void TextEncoder::visit(const nn::ParameterVisitor& f) {
  f(token_embedding_);
  f(position_);
  for (nn::EncoderBlock& b : blocks_) b.visit(f);
  norm_.visit(f);
  f(projection_);
}

void TextEncoder::visit(const nn::ConstParameterVisitor& f) const {
  f(token_embedding_);
  f(position_);
  for (const nn::EncoderBlock& b : blocks_) b.visit(f);
  norm_.visit(f);
  f(projection_);
}

TextEmbedding encode_text(TextEncoder& encoder, const std::vector<int>& tokens) {
  return encoder.encode(tokens);
}

}  // namespace dcr::backbone
