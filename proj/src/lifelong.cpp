// SPDX-License-Identifier: Apache-2.0
#include "dcr/lifelong.hpp"

#include "dcr/errors.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <unordered_map>

namespace dcr::lifelong {

namespace {

std::mt19937_64 seeded(std::uint64_t seed, std::uint64_t stream, std::uint64_t extra = 0) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(extra),
                    static_cast<std::uint32_t>(extra >> 32)};
  return std::mt19937_64(seq);
}

// FNV-1a, stable across platforms, for mixing dataset ids into seeds.
std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

Matrix selector(Eigen::Index total, Eigen::Index keep) {
  Matrix s = Matrix::Zero(total, keep);
  for (Eigen::Index i = 0; i < keep; ++i) s(i, i) = 1.0;
  return s;
}

void add_scaled(LossBreakdown& acc, const LossBreakdown& x, double s) {
  acc.ce += s * x.ce;
  acc.tri_global += s * x.tri_global;
  acc.tri_local += s * x.tri_local;
  acc.ort += s * x.ort;
  acc.af += s * x.af;
  acc.al += s * x.al;
  acc.ld += s * x.ld;
  acc.total += s * x.total;
}

nlohmann::ordered_json breakdown_json(const LossBreakdown& b) {
  nlohmann::ordered_json j;
  j["total"] = b.total;
  j["ce"] = b.ce;
  j["tri_global"] = b.tri_global;
  j["tri_local"] = b.tri_local;
  j["ort"] = b.ort;
  j["af"] = b.af;
  j["al"] = b.al;
  j["ld"] = b.ld;
  return j;
}

}  // namespace

TrainConfig TrainConfig::full() {
  TrainConfig c;
  c.batch_identities = 32;
  c.instances_per_identity = 4;
  c.epochs = 60;
  c.lr = 5e-6;
  c.lr_decay = 0.1;
  c.lr_decay_every = 20;
  return c;
}

TrainConfig TrainConfig::desk() { return TrainConfig{}; }

double TrainConfig::lr_at(int epoch) const {
  if (lr_decay_every <= 0) return lr;
  return lr * std::pow(lr_decay, epoch / lr_decay_every);
}

void TrainConfig::validate() const {
  if (batch_identities < 2) throw InvalidInput("batch_identities must be at least 2");
  if (instances_per_identity < 2) throw InvalidInput("instances_per_identity must be at least 2");
  if (batch_size() % 2 != 0) throw InvalidInput("batch size must be even");
  if (epochs < 1) throw InvalidInput("epochs must be positive");
  if (!(lr > 0.0)) throw InvalidInput("lr must be positive");
  if (!(lr_decay > 0.0)) throw InvalidInput("lr_decay must be positive");
  if (lr_decay_every < 0) throw InvalidInput("lr_decay_every must be non-negative");
  if (!(tau > 0.0)) throw InvalidInput("tau must be positive");
  if (!(margin >= 0.0)) throw InvalidInput("margin must be non-negative");
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0) || !(adam_beta2 >= 0.0 && adam_beta2 < 1.0)) {
    throw InvalidInput("adam betas must lie in [0, 1)");
  }
  if (!(adam_eps > 0.0)) throw InvalidInput("adam_eps must be positive");
  if (!(weight_decay >= 0.0)) throw InvalidInput("weight_decay must be non-negative");
  if (buffer_capacity < 0) throw InvalidInput("buffer_capacity must be non-negative");
  if (exemplars_per_identity < 1) throw InvalidInput("exemplars_per_identity must be positive");
  for (double w : {weights.ce, weights.tri_global, weights.tri_local, weights.ort, weights.af, weights.al,
                   weights.ld}) {
    if (!(w >= 0.0)) throw InvalidInput("loss weights must be non-negative");
  }
}

std::map<int, int> remap_labels(const data::DatasetManifest& manifest, int offset) {
  std::map<int, int> out;
  int next = offset;
  for (int id : manifest.identities()) out[id] = next++;
  return out;
}

std::vector<DataSample> load_samples(const data::DatasetManifest& manifest, const attr::AttributePredictor& predictor,
                                     const std::map<int, int>* labels) {
  std::vector<DataSample> out;
  out.reserve(manifest.records.size());
  for (const data::ManifestRecord& r : manifest.records) {
    const auto path = manifest.resolve(r);
    auto img = std::make_shared<Image8>(read_ppm(path));
    DataSample s;
    s.key = path.lexically_normal().generic_string();
    s.prediction = predictor.predict(img->rgb, img->height, img->width, r.attributes);
    s.image = std::move(img);
    s.identity = r.identity;
    s.camera = r.camera;
    s.dataset_id = manifest.dataset_id;
    if (labels) {
      const auto it = labels->find(r.identity);
      if (it == labels->end()) throw InvalidInput("no label for identity " + std::to_string(r.identity));
      s.label = it->second;
    } else {
      s.label = r.identity;
    }
    out.push_back(std::move(s));
  }
  return out;
}

MemoryBuffer::MemoryBuffer(int capacity_per_dataset, int exemplars_per_identity)
    : capacity_(capacity_per_dataset), per_identity_(exemplars_per_identity) {
  if (capacity_per_dataset < 0) throw InvalidInput("buffer capacity must be non-negative");
  if (exemplars_per_identity < 1) throw InvalidInput("exemplars per identity must be positive");
}

std::size_t MemoryBuffer::count_for(const std::string& dataset_id) const {
  return static_cast<std::size_t>(std::count_if(entries_.begin(), entries_.end(), [&](const BufferEntry& e) {
    return e.sample.dataset_id == dataset_id;
  }));
}

void MemoryBuffer::check_invariants(std::span<const std::string> completed) const {
  std::map<std::string, std::size_t> per_dataset;
  std::map<std::pair<std::string, int>, int> per_identity;
  for (const BufferEntry& e : entries_) {
    if (std::find(completed.begin(), completed.end(), e.sample.dataset_id) == completed.end()) {
      throw ValidationError("buffer holds a sample of unfinished dataset " + e.sample.dataset_id);
    }
    if (++per_dataset[e.sample.dataset_id] > static_cast<std::size_t>(capacity_)) {
      throw ValidationError("buffer exceeds its capacity for dataset " + e.sample.dataset_id);
    }
    if (++per_identity[{e.sample.dataset_id, e.sample.label}] > per_identity_) {
      throw ValidationError("buffer exceeds its per-identity cap in dataset " + e.sample.dataset_id);
    }
  }
}

MemoryBuffer update_buffer(const MemoryBuffer& buffer, const std::string& dataset_id,
                           std::span<const DataSample> samples, const AtgConfig& atg, std::uint64_t seed,
                           std::vector<std::string>* warnings) {
  if (std::find(buffer.datasets_.begin(), buffer.datasets_.end(), dataset_id) != buffer.datasets_.end()) {
    throw InvalidInput("dataset " + dataset_id + " is already in the buffer");
  }
  std::map<int, std::vector<std::size_t>> by_label;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (samples[i].dataset_id != dataset_id) throw InvalidInput("sample from another dataset passed to update_buffer");
    by_label[samples[i].label].push_back(i);
  }
  std::mt19937_64 rng = seeded(seed, 0xB0FFE5ULL, fnv1a(dataset_id));
  std::vector<int> labels;
  for (const auto& [label, idx] : by_label) labels.push_back(label);

  const std::size_t max_ids = static_cast<std::size_t>(buffer.capacity_ / buffer.per_identity_);
  if (labels.size() > max_ids) {
    std::shuffle(labels.begin(), labels.end(), rng);
    if (warnings) {
      warnings->push_back("buffer capacity " + std::to_string(buffer.capacity_) + " holds " + std::to_string(max_ids) +
                          " of " + std::to_string(labels.size()) + " identities of " + dataset_id);
    }
    labels.resize(max_ids);
    std::sort(labels.begin(), labels.end());
  }

  MemoryBuffer out = buffer;
  out.datasets_.push_back(dataset_id);
  for (int label : labels) {
    std::vector<std::size_t> idx = by_label[label];
    std::shuffle(idx.begin(), idx.end(), rng);
    const std::size_t take = std::min(idx.size(), static_cast<std::size_t>(buffer.per_identity_));
    for (std::size_t j = 0; j < take; ++j) {
      const DataSample& s = samples[idx[j]];
      out.entries_.push_back({s, make_text_input(s.prediction, atg).attributes});
    }
  }
  return out;
}

ModelPair::ModelPair(const ModelConfig& cfg, int n_classes, std::uint64_t seed) : model(cfg, n_classes, seed) {}

ModelPair::ModelPair(const ModelPair& other)
    : old_model(other.old_model ? std::make_unique<DcrModel>(*other.old_model) : nullptr),
      model(other.model),
      task(other.task) {}

ModelPair& ModelPair::operator=(const ModelPair& other) {
  if (this != &other) {
    old_model = other.old_model ? std::make_unique<DcrModel>(*other.old_model) : nullptr;
    model = other.model;
    task = other.task;
  }
  return *this;
}

void advance_task(ModelPair& pair, int k_new, std::mt19937_64& rng) {
  pair.old_model = std::make_unique<DcrModel>(pair.model);
  pair.old_model->set_frozen(true);
  pair.old_model->zero_grad();
  pair.model.grow_head(k_new, rng);
  ++pair.task;
}

double distill_kl(std::span<const double> src, std::span<const double> tgt, double tau) {
  if (src.size() != tgt.size()) throw InvalidInput("distill_kl: shape mismatch");
  if (src.empty()) throw InvalidInput("distill_kl: empty input");
  if (!(tau > 0.0)) throw InvalidInput("distill_kl: temperature must be positive");
  for (std::size_t i = 0; i < src.size(); ++i) {
    if (!std::isfinite(src[i]) || !std::isfinite(tgt[i])) throw InvalidInput("distill_kl: non-finite input");
  }
  ag::Tape tape(false);
  Matrix a(1, static_cast<Eigen::Index>(src.size())), b(1, static_cast<Eigen::Index>(tgt.size()));
  for (std::size_t i = 0; i < src.size(); ++i) {
    a(0, static_cast<Eigen::Index>(i)) = src[i];
    b(0, static_cast<Eigen::Index>(i)) = tgt[i];
  }
  return std::max(0.0, ag::kl_div_rows(tape.constant(a), tape.constant(b), tau).scalar());
}

namespace {

double mean_row_kl(std::span<const Matrix> olds, std::span<const Matrix> news, double tau, bool last_only) {
  if (olds.size() != news.size()) throw InvalidInput("distillation: batch size mismatch");
  if (olds.empty()) return 0.0;
  double acc = 0.0;
  for (std::size_t s = 0; s < olds.size(); ++s) {
    if (olds[s].rows() != news[s].rows() || olds[s].cols() != news[s].cols()) {
      throw InvalidInput("distillation: representation shape mismatch");
    }
    ag::Tape tape(false);
    const Eigen::Index r0 = last_only ? olds[s].rows() - 1 : 0;
    const Eigen::Index n = olds[s].rows() - r0;
    const Matrix kl = ag::kl_div_rows(tape.constant(olds[s].bottomRows(n)), tape.constant(news[s].bottomRows(n)), tau)
                          .value();
    acc += kl.mean();
  }
  return std::max(0.0, acc / static_cast<double>(olds.size()));
}

}  // namespace

double af_loss(std::span<const Matrix> ag_old, std::span<const Matrix> ag_new, double tau, AfRows rows) {
  return mean_row_kl(ag_old, ag_new, tau, rows == AfRows::Last);
}

double alignment_loss(std::span<const Matrix> g_old, std::span<const Matrix> g_new, double tau) {
  return mean_row_kl(g_old, g_new, tau, false);
}

double logit_distill_loss(std::span<const Matrix> logits_old, std::span<const Matrix> logits_new, double tau) {
  if (logits_old.size() != logits_new.size()) throw InvalidInput("logit distillation: batch size mismatch");
  if (logits_old.empty()) return 0.0;
  std::vector<Matrix> truncated;
  truncated.reserve(logits_new.size());
  for (std::size_t s = 0; s < logits_new.size(); ++s) {
    if (logits_old[s].rows() != 1 || logits_new[s].rows() != 1) throw InvalidInput("logits must be row vectors");
    if (logits_new[s].cols() < logits_old[s].cols()) throw InvalidInput("new head is smaller than the old head");
    truncated.push_back(logits_new[s].leftCols(logits_old[s].cols()));
  }
  return mean_row_kl(logits_old, truncated, tau, false);
}

OldOutputs old_outputs(DcrModel& old_model, const BatchSample& sample) {
  ag::Tape tape(false);
  const nn::ForwardContext ctx{};
  const Matrix d = old_model.text_embedding(sample.text.caption).vec;
  const ForwardOutput out = old_model.forward(tape, ctx, sample.patches, sample.text.attributes, d);
  return {out.g.value(), out.ag.value(), out.logits.value()};
}

LossResult total_loss(ag::Tape& tape, DcrModel& model, DcrModel* old_model, std::span<const BatchSample> batch,
                      const TrainConfig& cfg, const nn::ForwardContext& ctx, const std::vector<OldOutputs>* old_cache) {
  if (batch.empty()) throw InvalidBatch("empty batch");
  if (old_cache && old_cache->size() != batch.size()) throw InvalidInput("old output cache does not match the batch");
  const bool distil = old_model != nullptr;

  std::vector<ag::Var> logits, g_mean, ag_mean, ort, af_terms, al_terms, ld_terms;
  std::vector<int> labels;
  std::vector<OldOutputs> computed_old;
  if (distil && !old_cache) {
    computed_old.reserve(batch.size());
    for (const BatchSample& s : batch) computed_old.push_back(old_outputs(*old_model, s));
    old_cache = &computed_old;
  }
  const Eigen::Index k_old = distil ? old_model->num_classes() : 0;

  for (std::size_t i = 0; i < batch.size(); ++i) {
    const BatchSample& s = batch[i];
    const Matrix d = model.text_embedding(s.text.caption).vec;
    const ForwardOutput out = model.forward(tape, ctx, s.patches, s.text.attributes, d);
    logits.push_back(out.logits);
    g_mean.push_back(ag::mean_rows(out.g));
    ag_mean.push_back(ag::mean_rows(out.ag));
    ort.push_back(tga::orthogonal_loss(out.g));
    labels.push_back(s.label);
    if (!distil) continue;
    const OldOutputs& old = (*old_cache)[i];
    if (cfg.use_af && s.from_buffer) {
      ag::Var new_ag = out.ag;
      Matrix old_ag = old.ag;
      if (cfg.af_rows == AfRows::Last) {
        new_ag = ag::slice_rows(out.ag, out.ag.rows() - 1, 1);
        old_ag = old.ag.bottomRows(1);
      }
      af_terms.push_back(ag::mean(ag::kl_div_rows(tape.constant(old_ag), new_ag, cfg.tau)));
    }
    if (cfg.use_kc) {
      if (!s.from_buffer) al_terms.push_back(ag::mean(ag::kl_div_rows(tape.constant(old.g), out.g, cfg.tau)));
      const ag::Var head_part = ag::matmul(out.logits, tape.constant(selector(out.logits.cols(), k_old)));
      ld_terms.push_back(ag::mean(ag::kl_div_rows(tape.constant(old.logits), head_part, cfg.tau)));
    }
  }

  auto batch_mean = [&](const std::vector<ag::Var>& terms) -> std::optional<ag::Var> {
    if (terms.empty()) return std::nullopt;
    return ag::mean(ag::concat_rows(terms));
  };

  LossResult res;
  const ag::Var ce = tga::ce_loss(ag::concat_rows(logits), labels);
  const ag::Var tri_g = tga::triplet_loss(ag::concat_rows(g_mean), labels, cfg.margin, cfg.triplet_distance);
  const ag::Var tri_l = tga::triplet_loss(ag::concat_rows(ag_mean), labels, cfg.margin, cfg.triplet_distance);
  const ag::Var ort_mean = *batch_mean(ort);
  res.parts.ce = ce.scalar();
  res.parts.tri_global = tri_g.scalar();
  res.parts.tri_local = tri_l.scalar();
  res.parts.ort = ort_mean.scalar();

  const LossWeights& w = cfg.weights;
  ag::Var total = ag::add(ag::add(ag::scale(ce, w.ce), ag::scale(tri_g, w.tri_global)),
                          ag::add(ag::scale(tri_l, w.tri_local), ag::scale(ort_mean, w.ort)));
  if (auto af = batch_mean(af_terms)) {
    res.parts.af = af->scalar();
    total = ag::add(total, ag::scale(*af, w.af));
  }
  if (auto al = batch_mean(al_terms)) {
    res.parts.al = al->scalar();
    total = ag::add(total, ag::scale(*al, w.al));
  }
  if (auto ld = batch_mean(ld_terms)) {
    res.parts.ld = ld->scalar();
    total = ag::add(total, ag::scale(*ld, w.ld));
  }
  res.parts.total = total.scalar();
  res.total = total;
  return res;
}

Adam::Adam(double lr, double beta1, double beta2, double eps, double weight_decay)
    : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps), weight_decay_(weight_decay) {}

Adam::Adam(const TrainConfig& cfg) : Adam(cfg.lr, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps, cfg.weight_decay) {}

void Adam::step(DcrModel& model) {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  model.visit_trainable([&](ag::Parameter& p) {
    if (p.grad.size() == 0) return;
    State& s = state_[p.name];
    if (s.m.rows() != p.value.rows() || s.m.cols() != p.value.cols()) {
      s.m = Matrix::Zero(p.value.rows(), p.value.cols());
      s.v = Matrix::Zero(p.value.rows(), p.value.cols());
    }
    Matrix g = p.grad;
    if (weight_decay_ > 0.0) g += weight_decay_ * p.value;
    s.m = beta1_ * s.m + (1.0 - beta1_) * g;
    s.v = beta2_ * s.v + (1.0 - beta2_) * g.cwiseProduct(g);
    p.value.array() -= lr_ * (s.m.array() / c1) / ((s.v.array() / c2).sqrt() + eps_);
  });
}

std::vector<std::vector<std::size_t>> identity_batches(std::span<const int> labels, int p, int k,
                                                       std::mt19937_64& rng) {
  if (p < 1 || k < 1) throw InvalidInput("identity sampler needs positive P and K");
  std::map<int, std::vector<std::size_t>> by_label;
  for (std::size_t i = 0; i < labels.size(); ++i) by_label[labels[i]].push_back(i);

  std::map<int, std::vector<std::vector<std::size_t>>> chunks;
  for (auto& [label, idx] : by_label) {
    std::vector<std::size_t> pool = idx;
    if (pool.size() < static_cast<std::size_t>(k)) {
      std::uniform_int_distribution<std::size_t> pick(0, idx.size() - 1);
      while (pool.size() < static_cast<std::size_t>(k)) pool.push_back(idx[pick(rng)]);
    }
    std::shuffle(pool.begin(), pool.end(), rng);
    auto& list = chunks[label];
    for (std::size_t start = 0; start + static_cast<std::size_t>(k) <= pool.size(); start += static_cast<std::size_t>(k)) {
      list.emplace_back(pool.begin() + static_cast<std::ptrdiff_t>(start),
                        pool.begin() + static_cast<std::ptrdiff_t>(start + static_cast<std::size_t>(k)));
    }
  }

  std::vector<std::vector<std::size_t>> batches;
  std::vector<int> available;
  for (const auto& [label, list] : chunks) {
    if (!list.empty()) available.push_back(label);
  }
  std::map<int, std::size_t> cursor;
  while (available.size() >= static_cast<std::size_t>(p)) {
    std::vector<int> chosen = available;
    std::shuffle(chosen.begin(), chosen.end(), rng);
    chosen.resize(static_cast<std::size_t>(p));
    std::sort(chosen.begin(), chosen.end());
    std::vector<std::size_t> batch;
    for (int label : chosen) {
      const auto& chunk = chunks[label][cursor[label]++];
      batch.insert(batch.end(), chunk.begin(), chunk.end());
      if (cursor[label] == chunks[label].size()) available.erase(std::find(available.begin(), available.end(), label));
    }
    batches.push_back(std::move(batch));
  }
  return batches;
}

std::string to_json_line(const EpochRecord& rec) {
  nlohmann::ordered_json j;
  j["kind"] = "epoch";
  j["task"] = rec.task;
  j["epoch"] = rec.epoch;
  j["steps"] = rec.steps;
  j["lr"] = rec.lr;
  j["loss"] = breakdown_json(rec.mean);
  return j.dump();
}

std::string to_json_line(const StepRecord& rec) {
  nlohmann::ordered_json j;
  j["kind"] = "step";
  j["task"] = rec.task;
  j["epoch"] = rec.epoch;
  j["step"] = rec.step;
  j["lr"] = rec.lr;
  j["loss"] = breakdown_json(rec.loss);
  return j.dump();
}

std::vector<EpochRecord> train_task(ModelPair& pair, std::span<const DataSample> current, const MemoryBuffer& buffer,
                                    const TrainConfig& cfg, const TrainHooks& hooks, int* global_step) {
  cfg.validate();
  if (current.empty()) throw InvalidInput("train_task: the current dataset is empty");

  struct PoolItem {
    const DataSample* sample;
    bool from_buffer;
  };
  const AtgConfig& atg = pair.model.config().atg;
  std::vector<PoolItem> pool;
  for (const DataSample& s : current) pool.push_back({&s, false});
  if (pair.old_model) {
    for (const BufferEntry& e : buffer.entries()) pool.push_back({&e.sample, true});
  }
  std::vector<int> labels;
  std::set<int> distinct;
  for (const PoolItem& it : pool) {
    labels.push_back(it.sample->label);
    distinct.insert(it.sample->label);
    if (it.sample->label < 0 || it.sample->label >= pair.model.num_classes()) {
      throw InvalidInput("sample label " + std::to_string(it.sample->label) + " is outside the classifier");
    }
  }
  if (distinct.size() < static_cast<std::size_t>(cfg.batch_identities)) {
    throw InvalidInput("train_task: " + std::to_string(distinct.size()) + " identities cannot fill P = " +
                       std::to_string(cfg.batch_identities));
  }

  const int patch = pair.model.config().backbone.patch_size;
  auto make_batch_sample = [&](const PoolItem& it) {
    BatchSample b;
    b.patches = preprocess(*it.sample->image).patches(patch);
    b.text = make_text_input(it.sample->prediction, atg);
    b.label = it.sample->label;
    b.from_buffer = it.from_buffer;
    b.key = it.sample->key;
    return b;
  };

  std::mt19937_64 sampler_rng = seeded(cfg.seed, 0x5A4D ^ static_cast<std::uint64_t>(pair.task));
  std::mt19937_64 dropout_rng = seeded(cfg.seed, 0xD209 ^ static_cast<std::uint64_t>(pair.task));
  const nn::ForwardContext ctx{true, &dropout_rng};
  Adam opt(cfg);
  // The old model is frozen and evaluated without dropout, so its outputs
  // depend only on the sample.
  std::unordered_map<std::string, OldOutputs> old_cache;

  std::vector<EpochRecord> records;
  int local_step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = cfg.lr_at(epoch);
    opt.set_lr(lr);
    const auto batches = identity_batches(labels, cfg.batch_identities, cfg.instances_per_identity, sampler_rng);
    EpochRecord er;
    er.task = pair.task;
    er.epoch = epoch;
    er.lr = lr;
    for (const auto& idx : batches) {
      std::vector<BatchSample> batch;
      batch.reserve(idx.size());
      for (std::size_t i : idx) batch.push_back(make_batch_sample(pool[i]));
      std::vector<OldOutputs> olds;
      if (pair.old_model) {
        for (const BatchSample& b : batch) {
          auto it = old_cache.find(b.key);
          if (it == old_cache.end()) it = old_cache.emplace(b.key, old_outputs(*pair.old_model, b)).first;
          olds.push_back(it->second);
        }
      }
      pair.model.zero_grad();
      ag::Tape tape(true);
      const LossResult loss =
          total_loss(tape, pair.model, pair.old_model.get(), batch, cfg, ctx, pair.old_model ? &olds : nullptr);
      tape.backward(loss.total);
      opt.step(pair.model);

      StepRecord sr;
      sr.task = pair.task;
      sr.epoch = epoch;
      sr.step = global_step ? (*global_step)++ : local_step;
      sr.lr = lr;
      sr.loss = loss.parts;
      ++local_step;
      if (hooks.on_step) hooks.on_step(sr);
      add_scaled(er.mean, loss.parts, 1.0);
      ++er.steps;
    }
    if (er.steps > 0) {
      LossBreakdown m;
      add_scaled(m, er.mean, 1.0 / er.steps);
      er.mean = m;
    }
    if (hooks.on_epoch) hooks.on_epoch(er);
    records.push_back(er);
  }
  pair.model.zero_grad();
  return records;
}

std::vector<TaskData> make_tasks(std::span<const data::DatasetManifest> train_manifests,
                                 const attr::AttributePredictor& predictor) {
  std::vector<TaskData> tasks;
  int offset = 0;
  for (const data::DatasetManifest& m : train_manifests) {
    const auto labels = remap_labels(m, offset);
    TaskData t;
    t.dataset_id = m.dataset_id;
    t.train = load_samples(m, predictor, &labels);
    t.n_classes = static_cast<int>(labels.size());
    offset += t.n_classes;
    tasks.push_back(std::move(t));
  }
  return tasks;
}

LifelongResult run_lifelong(const ModelConfig& model_cfg, const TrainConfig& cfg, std::span<const TaskData> tasks,
                            const RunHooks& hooks) {
  cfg.validate();
  if (tasks.empty()) throw InvalidInput("run_lifelong: no tasks");
  LifelongResult res{ModelPair(model_cfg, tasks[0].n_classes, cfg.seed),
                     MemoryBuffer(cfg.buffer_capacity, cfg.exemplars_per_identity),
                     {},
                     {}};
  std::mt19937_64 head_rng = seeded(cfg.seed, 0x4EAD);
  int global_step = 0;
  for (std::size_t t = 0; t < tasks.size(); ++t) {
    const TaskData& task = tasks[t];
    TaskSummary summary;
    summary.task = static_cast<int>(t) + 1;
    summary.dataset_id = task.dataset_id;
    if (t > 0) {
      summary.head_rows_before = res.pair.model.num_classes();
      advance_task(res.pair, task.n_classes, head_rng);
    } else {
      summary.head_rows_before = 0;
    }
    summary.head_rows_after = res.pair.model.num_classes();
    auto epochs = train_task(res.pair, task.train, res.buffer, cfg, hooks.train, &global_step);
    res.epochs.insert(res.epochs.end(), epochs.begin(), epochs.end());
    res.buffer = update_buffer(res.buffer, task.dataset_id, task.train, model_cfg.atg, cfg.seed, &summary.warnings);
    summary.buffer_size = res.buffer.entries().size();
    if (hooks.on_task_end) hooks.on_task_end(summary, res.pair, res.buffer);
    res.tasks.push_back(std::move(summary));
  }
  return res;
}

}  // namespace dcr::lifelong
