// SPDX-License-Identifier: Apache-2.0
//
// Lifelong training: an old/new model pair, an exemplar memory buffer,
// distillation losses between the two models and the per-task training loop.
#pragma once

#include "dcr/datakit.hpp"
#include "dcr/model.hpp"

#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace dcr::lifelong {

/// Which attribute-wise rows the anti-forgetting term distils.
enum class AfRows { Mean, Last };

struct LossWeights {
  double ce = 1.0;
  double tri_global = 1.0;
  double tri_local = 1.0;
  double ort = 1.0;
  double af = 1.0;
  double al = 1.0;
  double ld = 1.0;
};

struct TrainConfig {
  int batch_identities = 8;        // P
  int instances_per_identity = 4;  // K
  int epochs = 10;
  double lr = 1e-3;
  double lr_decay = 0.1;
  int lr_decay_every = 20;  // epochs; 0 disables
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  double weight_decay = 0.0;
  double tau = 2.0;
  double margin = 0.3;
  tga::TripletDistance triplet_distance = tga::TripletDistance::Euclidean;
  LossWeights weights;
  AfRows af_rows = AfRows::Mean;
  bool use_af = true;
  bool use_kc = true;
  int buffer_capacity = 500;
  int exemplars_per_identity = 2;
  std::uint64_t seed = 1;

  /// Large-scale schedule: B = 128, 60 epochs, lr 5e-6 decayed x0.1 every 20.
  static TrainConfig full();
  /// Laptop-scale schedule: B = 32 (8 x 4), 10 epochs, lr 1e-3.
  static TrainConfig desk();

  int batch_size() const { return batch_identities * instances_per_identity; }
  double lr_at(int epoch) const;
  void validate() const;
};

/// One training or evaluation image with its labels and attribute scores.
struct DataSample {
  std::string key;  // unique per image (its resolved path)
  std::shared_ptr<const Image8> image;
  int label = 0;     // global class index, disjoint ranges per dataset
  int identity = 0;  // identity id inside its dataset
  int camera = 0;
  std::string dataset_id;
  attr::AttributePrediction prediction;
};

/// Maps dataset-local identities onto consecutive global labels starting at `offset`.
std::map<int, int> remap_labels(const data::DatasetManifest& manifest, int offset);

/// Loads every image of `manifest`. With `labels` null the global label is the
/// dataset-local identity.
std::vector<DataSample> load_samples(const data::DatasetManifest& manifest, const attr::AttributePredictor& predictor,
                                     const std::map<int, int>* labels = nullptr);

struct BufferEntry {
  DataSample sample;
  attr::AttributeVector attributes;
};

class MemoryBuffer {
 public:
  explicit MemoryBuffer(int capacity_per_dataset = 500, int exemplars_per_identity = 2);

  const std::vector<BufferEntry>& entries() const { return entries_; }
  const std::vector<std::string>& datasets() const { return datasets_; }
  std::size_t count_for(const std::string& dataset_id) const;
  int capacity_per_dataset() const { return capacity_; }
  int exemplars_per_identity() const { return per_identity_; }
  bool empty() const { return entries_.empty(); }

  /// Throws ValidationError when a cap is exceeded or an entry comes from a
  /// dataset that is not in `completed`.
  void check_invariants(std::span<const std::string> completed) const;

 private:
  friend MemoryBuffer update_buffer(const MemoryBuffer&, const std::string&, std::span<const DataSample>,
                                    const AtgConfig&, std::uint64_t, std::vector<std::string>*);
  int capacity_;
  int per_identity_;
  std::vector<std::string> datasets_;
  std::vector<BufferEntry> entries_;
};

/// Adds exemplars of a completed dataset: `exemplars_per_identity` random
/// images per identity; when identities x exemplars exceeds the capacity,
/// floor(capacity / exemplars) identities are kept at random and a warning is
/// appended to `warnings`.
MemoryBuffer update_buffer(const MemoryBuffer& buffer, const std::string& dataset_id,
                           std::span<const DataSample> samples, const AtgConfig& atg, std::uint64_t seed,
                           std::vector<std::string>* warnings = nullptr);

/// The frozen model of the previous task (absent on the first task) and the
/// model being trained.
struct ModelPair {
  std::unique_ptr<DcrModel> old_model;
  DcrModel model;
  int task = 1;

  ModelPair() = default;
  ModelPair(const ModelConfig& cfg, int n_classes, std::uint64_t seed);
  ModelPair(const ModelPair& other);
  ModelPair& operator=(const ModelPair& other);
  ModelPair(ModelPair&&) = default;
  ModelPair& operator=(ModelPair&&) = default;

  int old_classes() const { return old_model ? old_model->num_classes() : 0; }
};

/// old <- frozen copy of new; the classifier gains `k_new` rows.
void advance_task(ModelPair& pair, int k_new, std::mt19937_64& rng);

/// KL(softmax(src / tau) || softmax(tgt / tau)).
double distill_kl(std::span<const double> src, std::span<const double> tgt, double tau);

/// Mean over samples and the selected rows of distill_kl(old_row, new_row).
/// Empty input gives 0.
double af_loss(std::span<const Matrix> ag_old, std::span<const Matrix> ag_new, double tau,
               AfRows rows = AfRows::Mean);
double alignment_loss(std::span<const Matrix> g_old, std::span<const Matrix> g_new, double tau);
/// distill_kl between old logits and the first K_old entries of new logits,
/// averaged over samples.
double logit_distill_loss(std::span<const Matrix> logits_old, std::span<const Matrix> logits_new, double tau);

struct LossBreakdown {
  double ce = 0.0;
  double tri_global = 0.0;
  double tri_local = 0.0;
  double ort = 0.0;
  double af = 0.0;
  double al = 0.0;
  double ld = 0.0;
  double total = 0.0;
};

/// One batch element ready for the network.
struct BatchSample {
  Matrix patches;
  TextInput text;
  int label = 0;
  bool from_buffer = false;
  std::string key;
};

/// Detached outputs of the old model for one sample.
struct OldOutputs {
  Matrix g;
  Matrix ag;
  Matrix logits;
};

struct LossResult {
  ag::Var total;
  LossBreakdown parts;
};

OldOutputs old_outputs(DcrModel& old_model, const BatchSample& sample);

/// The weighted objective on one batch. The distillation terms need
/// `old_model`; at the first task pass null and they are 0. `old_cache`, when
/// given, supplies precomputed old outputs aligned with `batch`.
LossResult total_loss(ag::Tape& tape, DcrModel& model, DcrModel* old_model, std::span<const BatchSample> batch,
                      const TrainConfig& cfg, const nn::ForwardContext& ctx,
                      const std::vector<OldOutputs>* old_cache = nullptr);

class Adam {
 public:
  Adam(double lr, double beta1, double beta2, double eps, double weight_decay = 0.0);
  explicit Adam(const TrainConfig& cfg);

  /// Updates every trainable parameter of `model` from its accumulated grad.
  void step(DcrModel& model);
  void set_lr(double lr) { lr_ = lr; }
  double lr() const { return lr_; }

 private:
  struct State {
    Matrix m;
    Matrix v;
  };
  double lr_, beta1_, beta2_, eps_, weight_decay_;
  long t_ = 0;
  std::map<std::string, State> state_;
};

/// P x K identity-balanced batches: each identity's shuffled indices are cut
/// into chunks of K (topped up by resampling when it has fewer than K), then
/// batches draw P distinct identities until fewer than P have chunks left.
std::vector<std::vector<std::size_t>> identity_batches(std::span<const int> labels, int p, int k,
                                                       std::mt19937_64& rng);

struct StepRecord {
  int task = 0;
  int epoch = 0;
  int step = 0;  // global step counter within the run
  double lr = 0.0;
  LossBreakdown loss;
};

struct EpochRecord {
  int task = 0;
  int epoch = 0;
  int steps = 0;
  double lr = 0.0;
  LossBreakdown mean;  // averaged over the epoch's steps
};

/// One JSON object per line.
std::string to_json_line(const EpochRecord& rec);
std::string to_json_line(const StepRecord& rec);

struct TrainHooks {
  std::function<void(const StepRecord&)> on_step;
  std::function<void(const EpochRecord&)> on_epoch;
};

/// Trains `pair.model` on the current dataset plus buffer replay. Throws
/// InvalidInput on an empty dataset.
std::vector<EpochRecord> train_task(ModelPair& pair, std::span<const DataSample> current, const MemoryBuffer& buffer,
                                    const TrainConfig& cfg, const TrainHooks& hooks = {}, int* global_step = nullptr);

struct TaskData {
  std::string dataset_id;
  std::vector<DataSample> train;  // labels already global
  int n_classes = 0;
};

struct TaskSummary {
  int task = 0;
  std::string dataset_id;
  int head_rows_before = 0;
  int head_rows_after = 0;
  std::size_t buffer_size = 0;
  std::vector<std::string> warnings;
};

struct RunHooks {
  TrainHooks train;
  /// Called after each task's training and buffer update.
  std::function<void(const TaskSummary&, const ModelPair&, const MemoryBuffer&)> on_task_end;
};

struct LifelongResult {
  ModelPair pair;
  MemoryBuffer buffer;
  std::vector<EpochRecord> epochs;
  std::vector<TaskSummary> tasks;
};

/// Labels each dataset's identities into consecutive global ranges, in order.
std::vector<TaskData> make_tasks(std::span<const data::DatasetManifest> train_manifests,
                                 const attr::AttributePredictor& predictor);

LifelongResult run_lifelong(const ModelConfig& model_cfg, const TrainConfig& cfg, std::span<const TaskData> tasks,
                            const RunHooks& hooks = {});

}  // namespace dcr::lifelong
