// SPDX-License-Identifier: Apache-2.0
//
// Retrieval evaluation: features, cross-camera ranking, AP / mAP / CMC,
// seen/unseen aggregation, per-checkpoint curves and feature dumps.
#pragma once

#include "dcr/lifelong.hpp"

#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace dcr::eval {

enum class FeatureMode {
  GlobalMean,         // mean of the N global rows
  GlobalAndAttribute  // [mean G | mean AG]
};

/// L2-normalized retrieval descriptor.
struct RetrievalFeature {
  Eigen::RowVectorXd vec;
};

RetrievalFeature extract_feature(const ForwardValues& values, FeatureMode mode = FeatureMode::GlobalMean);
RetrievalFeature extract_feature(DcrModel& model, const ImageTensor& img, const TextInput& text,
                                 FeatureMode mode = FeatureMode::GlobalMean);
/// Feature of a dataset sample with the model's own caption settings.
RetrievalFeature extract_feature(DcrModel& model, const lifelong::DataSample& sample,
                                 FeatureMode mode = FeatureMode::GlobalMean);

struct EvalItem {
  RetrievalFeature feature;
  int identity = 0;
  int camera = 0;
};

/// Gallery indices by descending cosine similarity, ties by ascending index.
std::vector<int> rank_gallery(const RetrievalFeature& query, std::span<const RetrievalFeature> gallery);
/// As above after dropping gallery entries that share the query's identity
/// and camera. Throws NoValidGallery when nothing remains.
std::vector<int> rank_gallery(const EvalItem& query, std::span<const EvalItem> gallery);

/// Mean of precision at each relevant rank; nullopt when nothing is relevant.
std::optional<double> average_precision(const std::vector<bool>& ranked_relevance);

struct DatasetResult {
  std::string dataset_id;
  double map = 0.0;
  double rank1 = 0.0;
  std::vector<double> cmc;  // cmc[k]: first match within rank k + 1
  int n_queries = 0;        // queries that contributed
  int skipped = 0;          // queries without a valid match
};

inline constexpr int kDefaultCmcDepth = 20;

DatasetResult evaluate_features(const std::string& dataset_id, std::span<const EvalItem> query,
                                std::span<const EvalItem> gallery, int cmc_depth = kDefaultCmcDepth);

std::vector<EvalItem> featurize(DcrModel& model, std::span<const lifelong::DataSample> samples,
                                FeatureMode mode = FeatureMode::GlobalMean);

DatasetResult evaluate_dataset(DcrModel& model, const std::string& dataset_id,
                               std::span<const lifelong::DataSample> query,
                               std::span<const lifelong::DataSample> gallery,
                               FeatureMode mode = FeatureMode::GlobalMean, int cmc_depth = kDefaultCmcDepth);

/// Query and gallery samples of one dataset directory.
struct EvalSet {
  std::string dataset_id;
  std::vector<lifelong::DataSample> query;
  std::vector<lifelong::DataSample> gallery;
};

EvalSet load_eval_set(const data::Dataset& ds, const attr::AttributePredictor& predictor);

struct Average {
  double map = 0.0;
  double rank1 = 0.0;
};

struct EvalReport {
  std::vector<DatasetResult> rows;  // seen datasets first, then unseen
  std::vector<std::string> seen;
  std::vector<std::string> unseen;
  std::optional<Average> seen_avg;
  std::optional<Average> unseen_avg;
};

/// Throws InvalidInput when a listed dataset has no result.
EvalReport aggregate_report(const std::map<std::string, DatasetResult>& results, std::span<const std::string> seen,
                            std::span<const std::string> unseen);

/// Key-value summary followed by a tab-separated per-dataset table.
std::string format_report(const EvalReport& report);

struct CurveRow {
  int step = 0;
  double map = 0.0;
  double rank1 = 0.0;
};

/// Evaluates `probe` under every checkpoint in order; step i + 1 is the i-th
/// path. A missing file raises IoError naming its step.
std::vector<CurveRow> forgetting_curve(std::span<const std::filesystem::path> checkpoints, const EvalSet& probe,
                                       FeatureMode mode = FeatureMode::GlobalMean);

/// Per-checkpoint mean over several probes (unseen-domain generalization).
std::vector<CurveRow> generalization_curve(std::span<const std::filesystem::path> checkpoints,
                                           std::span<const EvalSet> probes,
                                           FeatureMode mode = FeatureMode::GlobalMean);

std::string format_curve(std::span<const CurveRow> rows);

struct FeatureRecord {
  std::string dataset_id;
  int identity = 0;
  int camera = 0;
  std::vector<double> values;
};

/// One line per sample: dataset_id, identity, camera, comma-joined floats
/// with 6 decimals, tab-separated.
void dump_features(DcrModel& model, std::span<const lifelong::DataSample> samples, const std::filesystem::path& path,
                   FeatureMode mode = FeatureMode::GlobalMean);
std::vector<FeatureRecord> read_feature_dump(const std::filesystem::path& path);

}  // namespace dcr::eval
