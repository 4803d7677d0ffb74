// SPDX-License-Identifier: Apache-2.0
//
// Shared fixtures for the test binaries.
#pragma once

#include "oracles.hpp"

#include "dcr/lifelong.hpp"

#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

namespace dcr::test {

inline Matrix random_matrix(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

inline oracle::Vec row(const Matrix& m, Eigen::Index r) {
  oracle::Vec v(static_cast<std::size_t>(m.cols()));
  for (Eigen::Index c = 0; c < m.cols(); ++c) v[static_cast<std::size_t>(c)] = m(r, c);
  return v;
}

inline oracle::Mat rows(const Matrix& m) {
  oracle::Mat out;
  for (Eigen::Index r = 0; r < m.rows(); ++r) out.push_back(row(m, r));
  return out;
}

inline oracle::Vec vec(const Eigen::RowVectorXd& v) { return oracle::Vec(v.data(), v.data() + v.size()); }

/// Scratch directory removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag = "dcr") {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() / (tag + "_" + std::to_string(rd()) + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& p) const { return path_ / p; }

 private:
  std::filesystem::path path_;
};

/// A small network for gradient and property tests.
inline ModelConfig tiny_config() {
  ModelConfig c;
  c.backbone.n_views = 3;
  c.backbone.embed_dim = 16;
  c.backbone.patch_size = 32;
  c.backbone.image_depth = 1;
  c.backbone.text_depth = 1;
  c.backbone.n_heads = 2;
  c.backbone.mlp_hidden = 32;
  c.pfm.n_heads = 2;
  c.pfm.mlp_hidden = 32;
  c.pfm.dropout_rate = 0.0;
  c.decoder.n_blocks = 2;
  c.decoder.n_heads = 2;
  c.decoder.mlp_hidden = 32;
  return c;
}

inline attr::AttributeBits random_bits(std::mt19937_64& rng) {
  std::bernoulli_distribution coin(0.5);
  attr::AttributeBits b{};
  for (std::size_t i = 0; i < b.size(); ++i) b[i] = coin(rng);
  return b;
}

inline ImageTensor random_image(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> px(static_cast<std::size_t>(kImageChannels) * kImageHeight * kImageWidth);
  for (double& v : px) v = u(rng);
  return ImageTensor(std::move(px));
}

inline lifelong::BatchSample random_sample(const ModelConfig& cfg, int label, bool from_buffer, std::mt19937_64& rng) {
  lifelong::BatchSample s;
  s.patches = random_image(rng).patches(cfg.backbone.patch_size);
  s.text = make_text_input(attr::prediction_from_bits(random_bits(rng)), cfg.atg);
  s.label = label;
  s.from_buffer = from_buffer;
  s.key = "sample" + std::to_string(rng());
  return s;
}

/// Adds N(0, scale) noise to every trainable parameter.
inline void perturb(DcrModel& model, double scale, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, scale);
  model.visit_trainable([&](ag::Parameter& p) {
    for (Eigen::Index i = 0; i < p.value.size(); ++i) p.value.data()[i] += n(rng);
  });
}

struct GradCheck {
  double max_rel_error = 0.0;
  int checked = 0;
};

/// Compares analytic gradients (already accumulated in `params`) against
/// central differences of `loss` at `n` randomly chosen scalar entries.
/// Relative error is |a - f| / max(|a|, |f|, floor).
inline GradCheck check_gradients(std::vector<ag::Parameter*> params, const std::function<double()>& loss, int n,
                                 std::mt19937_64& rng, double h = 1e-5, double floor = 1e-6) {
  std::vector<std::pair<ag::Parameter*, Eigen::Index>> entries;
  for (ag::Parameter* p : params) {
    for (Eigen::Index i = 0; i < p->value.size(); ++i) entries.emplace_back(p, i);
  }
  std::shuffle(entries.begin(), entries.end(), rng);
  GradCheck out;
  for (int k = 0; k < n && k < static_cast<int>(entries.size()); ++k) {
    auto [p, i] = entries[static_cast<std::size_t>(k)];
    const double analytic = p->grad.size() ? p->grad.data()[i] : 0.0;
    const double saved = p->value.data()[i];
    p->value.data()[i] = saved + h;
    const double up = loss();
    p->value.data()[i] = saved - h;
    const double down = loss();
    p->value.data()[i] = saved;
    const double numeric = (up - down) / (2.0 * h);
    const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
    out.max_rel_error = std::max(out.max_rel_error, std::abs(analytic - numeric) / denom);
    ++out.checked;
  }
  return out;
}

inline std::vector<ag::Parameter*> trainable(DcrModel& model) {
  std::vector<ag::Parameter*> out;
  model.visit_trainable([&](ag::Parameter& p) { out.push_back(&p); });
  return out;
}

}  // namespace dcr::test
