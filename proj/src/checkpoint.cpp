// SPDX-License-Identifier: Apache-2.0
#include "dcr/checkpoint.hpp"

#include "dcr/errors.hpp"

#include <json.hpp>
#include <openssl/evp.h>

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <memory>
#include <set>
#include <sstream>

namespace dcr::ckpt {

namespace {

constexpr char kMagic[8] = {'D', 'C', 'R', 'C', 'K', 'P', 'T', '1'};
constexpr int kFormatVersion = 1;

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

class Sha256 {
 public:
  Sha256() : ctx_(EVP_MD_CTX_new(), EVP_MD_CTX_free) {
    if (!ctx_ || EVP_DigestInit_ex(ctx_.get(), EVP_sha256(), nullptr) != 1) throw IoError("SHA-256 init failed");
  }
  void update(const void* data, std::size_t n) {
    if (n > 0 && EVP_DigestUpdate(ctx_.get(), data, n) != 1) throw IoError("SHA-256 update failed");
  }
  void update(const std::string& s) { update(s.data(), s.size()); }
  std::string hex() {
    std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
    unsigned int len = 0;
    if (EVP_DigestFinal_ex(ctx_.get(), md.data(), &len) != 1) throw IoError("SHA-256 final failed");
    std::ostringstream out;
    for (unsigned int i = 0; i < len; ++i) out << std::hex << std::setw(2) << std::setfill('0') << int(md[i]);
    return out.str();
  }

 private:
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx_;
};

nlohmann::ordered_json to_json(const ModelConfig& c) {
  nlohmann::ordered_json j;
  const auto& b = c.backbone;
  j["backbone"] = {{"n_views", b.n_views},         {"embed_dim", b.embed_dim},
                   {"patch_size", b.patch_size},   {"image_depth", b.image_depth},
                   {"text_depth", b.text_depth},   {"n_heads", b.n_heads},
                   {"mlp_hidden", b.mlp_hidden},   {"vocab_size", b.vocab_size},
                   {"max_text_len", b.max_text_len}, {"shared_class_position", b.shared_class_position}};
  j["pfm"] = {{"n_heads", c.pfm.n_heads}, {"dropout_rate", c.pfm.dropout_rate}, {"mlp_hidden", c.pfm.mlp_hidden}};
  j["decoder"] = {{"n_blocks", c.decoder.n_blocks},
                  {"n_heads", c.decoder.n_heads},
                  {"mlp_hidden", c.decoder.mlp_hidden}};
  j["fat_source"] = c.fat_source == acn::FatSource::AttributeVector ? "attribute_vector" : "semantics";
  j["atg"] = {{"threshold", c.atg.threshold},
              {"lower_body_exclusive", c.atg.lower_body_exclusive},
              {"generic_text", c.atg.generic_text},
              {"template_version", c.atg.template_version}};
  j["per_row_logits"] = c.per_row_logits;
  j["use_pfm"] = c.use_pfm;
  j["use_acn"] = c.use_acn;
  return j;
}

ModelConfig from_json(const nlohmann::json& j) {
  ModelConfig c;
  const auto& b = j.at("backbone");
  c.backbone.n_views = b.at("n_views").get<int>();
  c.backbone.embed_dim = b.at("embed_dim").get<int>();
  c.backbone.patch_size = b.at("patch_size").get<int>();
  c.backbone.image_depth = b.at("image_depth").get<int>();
  c.backbone.text_depth = b.at("text_depth").get<int>();
  c.backbone.n_heads = b.at("n_heads").get<int>();
  c.backbone.mlp_hidden = b.at("mlp_hidden").get<int>();
  c.backbone.vocab_size = b.at("vocab_size").get<int>();
  c.backbone.max_text_len = b.at("max_text_len").get<int>();
  c.backbone.shared_class_position = b.at("shared_class_position").get<bool>();
  c.pfm.n_heads = j.at("pfm").at("n_heads").get<int>();
  c.pfm.dropout_rate = j.at("pfm").at("dropout_rate").get<double>();
  c.pfm.mlp_hidden = j.at("pfm").at("mlp_hidden").get<int>();
  c.decoder.n_blocks = j.at("decoder").at("n_blocks").get<int>();
  c.decoder.n_heads = j.at("decoder").at("n_heads").get<int>();
  c.decoder.mlp_hidden = j.at("decoder").at("mlp_hidden").get<int>();
  const std::string fat = j.at("fat_source").get<std::string>();
  if (fat == "attribute_vector") {
    c.fat_source = acn::FatSource::AttributeVector;
  } else if (fat == "semantics") {
    c.fat_source = acn::FatSource::Semantics;
  } else {
    throw ValidationError("unknown fat_source '" + fat + "'");
  }
  c.atg.threshold = j.at("atg").at("threshold").get<double>();
  c.atg.lower_body_exclusive = j.at("atg").at("lower_body_exclusive").get<bool>();
  c.atg.generic_text = j.at("atg").at("generic_text").get<bool>();
  c.atg.template_version = j.at("atg").at("template_version").get<int>();
  c.per_row_logits = j.at("per_row_logits").get<bool>();
  c.use_pfm = j.at("use_pfm").get<bool>();
  c.use_acn = j.at("use_acn").get<bool>();
  return c;
}

}  // namespace

std::string sha256_hex(const std::string& bytes) {
  Sha256 h;
  h.update(bytes);
  return h.hex();
}

std::string parameter_hash(const DcrModel& model) {
  Sha256 h;
  model.visit([&](const ag::Parameter& p) {
    h.update(p.name);
    h.update("\0", 1);
    const std::int64_t shape[2] = {static_cast<std::int64_t>(p.value.rows()), static_cast<std::int64_t>(p.value.cols())};
    h.update(shape, sizeof(shape));
    h.update(p.value.data(), static_cast<std::size_t>(p.value.size()) * sizeof(double));
  });
  return h.hex();
}

std::string file_hash(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  Sha256 h;
  std::array<char, 1 << 16> buf{};
  while (in) {
    in.read(buf.data(), buf.size());
    h.update(buf.data(), static_cast<std::size_t>(in.gcount()));
  }
  return h.hex();
}

std::string checkpoint_name(int task, const std::string& config_hash) {
  return "task" + std::to_string(task) + "_" + config_hash.substr(0, 12) + ".ckpt";
}

std::string model_config_json(const ModelConfig& cfg) { return to_json(cfg).dump(); }

ModelConfig model_config_from_json(const std::string& json) {
  try {
    return from_json(nlohmann::json::parse(json));
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed model configuration: ") + e.what());
  }
}

void save_checkpoint(const std::filesystem::path& path, const DcrModel& model, int task,
                     const std::string& config_hash) {
  nlohmann::ordered_json header;
  header["format"] = kFormatVersion;
  header["task"] = task;
  header["config_hash"] = config_hash;
  header["n_classes"] = model.num_classes();
  header["model"] = to_json(model.config());
  nlohmann::ordered_json params = nlohmann::ordered_json::array();
  std::set<std::string> names;
  model.visit([&](const ag::Parameter& p) {
    if (!names.insert(p.name).second) throw ValidationError("duplicate parameter name " + p.name);
    params.push_back({{"name", p.name}, {"rows", p.value.rows()}, {"cols", p.value.cols()}, {"trainable", p.trainable}});
  });
  header["params"] = params;
  const std::string head = header.dump();

  std::error_code ec;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path(), ec);
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write checkpoint " + path.string());
    out.write(kMagic, sizeof(kMagic));
    const std::uint64_t len = head.size();
    out.write(reinterpret_cast<const char*>(&len), sizeof(len));
    out.write(head.data(), static_cast<std::streamsize>(head.size()));
    model.visit([&](const ag::Parameter& p) {
      out.write(reinterpret_cast<const char*>(p.value.data()),
                static_cast<std::streamsize>(p.value.size() * static_cast<Eigen::Index>(sizeof(double))));
    });
    if (!out) throw IoError("write failed for checkpoint " + path.string());
  }
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move checkpoint into place at " + path.string() + ": " + ec.message());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  char magic[sizeof(kMagic)] = {};
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) throw ValidationError(path.string() + ": not a checkpoint");
  std::uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&len), sizeof(len));
  if (!in || len > (1u << 26)) throw ValidationError(path.string() + ": bad header length");
  std::string head(len, '\0');
  in.read(head.data(), static_cast<std::streamsize>(len));
  if (!in) throw ValidationError(path.string() + ": truncated header");

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(head);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(path.string() + ": malformed header: " + e.what());
  }
  Checkpoint ck;
  try {
    if (header.at("format").get<int>() != kFormatVersion) throw ValidationError(path.string() + ": unsupported format");
    ck.task = header.at("task").get<int>();
    ck.config_hash = header.at("config_hash").get<std::string>();
    ck.model = DcrModel(from_json(header.at("model")), header.at("n_classes").get<int>(), 0);
    std::map<std::string, ag::Parameter*> by_name;
    ck.model.visit([&](ag::Parameter& p) { by_name[p.name] = &p; });
    const auto& params = header.at("params");
    if (params.size() != by_name.size()) throw ValidationError(path.string() + ": parameter count mismatch");
    for (const auto& pj : params) {
      const std::string name = pj.at("name").get<std::string>();
      const auto it = by_name.find(name);
      if (it == by_name.end()) throw ValidationError(path.string() + ": unknown parameter " + name);
      ag::Parameter& p = *it->second;
      const Eigen::Index rows = pj.at("rows").get<Eigen::Index>(), cols = pj.at("cols").get<Eigen::Index>();
      if (rows != p.value.rows() || cols != p.value.cols()) {
        throw ValidationError(path.string() + ": shape mismatch for " + name);
      }
      in.read(reinterpret_cast<char*>(p.value.data()),
              static_cast<std::streamsize>(p.value.size() * static_cast<Eigen::Index>(sizeof(double))));
      if (!in) throw ValidationError(path.string() + ": truncated parameter data");
      p.trainable = pj.at("trainable").get<bool>();
      p.zero_grad();
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(path.string() + ": malformed header: " + e.what());
  }
  if (in.peek() != std::char_traits<char>::eof()) throw ValidationError(path.string() + ": trailing bytes");
  return ck;
}

}  // namespace dcr::ckpt
