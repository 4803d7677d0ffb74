// SPDX-License-Identifier: Apache-2.0
//
// Dataset manifests, synthetic identity domains and task streams.
//
// Manifest files are UTF-8 text: one header line
//   # dcr-manifest v1 dataset=<id> split=<train|query|gallery|all>
// followed by one record per line
//   path<TAB>identity<TAB>camera<TAB>b1,...,b12
// where paths are relative to the manifest's directory and b_i are 0/1 in
// attribute-schema order.
#pragma once

#include "dcr/attribute_text.hpp"
#include "dcr/image.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace dcr::data {

namespace fs = std::filesystem;

enum class Split { All, Train, Query, Gallery };

std::string to_string(Split split);
Split split_from_string(const std::string& s);

struct ManifestRecord {
  std::string path;  // relative to the manifest directory
  int identity = 0;
  int camera = 0;
  attr::AttributeBits attributes{};

  bool operator==(const ManifestRecord&) const = default;
};

struct DatasetManifest {
  std::string dataset_id;
  Split split = Split::All;
  std::vector<ManifestRecord> records;
  fs::path base_dir;  // directory image paths are resolved against

  fs::path resolve(const ManifestRecord& r) const { return base_dir / r.path; }
  std::vector<int> identities() const;  // sorted, unique
  /// Single-file invariants: >= 2 cameras, non-negative ids.
  void validate() const;

  bool same_content(const DatasetManifest& other) const {
    return dataset_id == other.dataset_id && split == other.split && records == other.records;
  }
};

void write_manifest(const fs::path& path, const DatasetManifest& manifest);
/// Parses and validates a manifest. Malformed lines raise ParseError with the
/// line number; invariant violations raise ValidationError.
DatasetManifest load_manifest(const fs::path& path);

/// Train / query / gallery manifests of one dataset directory.
struct Dataset {
  std::string id;
  fs::path dir;
  DatasetManifest train;
  DatasetManifest query;
  DatasetManifest gallery;
};

/// Cross-split invariants: query identities are a subset of gallery
/// identities and train identities are disjoint from test identities.
void validate_dataset(const Dataset& ds);
Dataset load_dataset(const fs::path& dir);

inline constexpr const char* kTrainManifest = "train.tsv";
inline constexpr const char* kQueryManifest = "query.tsv";
inline constexpr const char* kGalleryManifest = "gallery.tsv";
inline constexpr const char* kFullManifest = "manifest.tsv";

struct SynthConfig {
  std::string dataset_id = "synth0";
  int n_identities = 20;
  int images_per_identity = 8;
  int n_cameras = 4;
  std::array<double, 3> background{0.55, 0.55, 0.55};
  std::array<double, 3> color_bias{0.0, 0.0, 0.0};
  double noise_level = 0.05;
  /// Body colours are drawn from a shared palette of this many colours so
  /// identities collide on colour; 0 draws every colour independently.
  int palette_size = 4;
  /// Per-camera, per-channel colour cast amplitude.
  double camera_cast = 0.15;
  /// Identities draw their attribute vector from this many shared
  /// prototypes; 0 draws every identity independently.
  int attribute_prototypes = 0;
  /// Redraw body colours for every image, leaving only the attribute blocks
  /// identity-specific.
  bool resample_colours = false;
  std::uint64_t seed = 1;

  /// Preset with a domain-specific background and colour bias. Even domains
  /// identify people mainly by body colour (two attribute prototypes); odd
  /// domains redraw colours per image so only the attribute blocks identify.
  static SynthConfig for_domain(int index, std::uint64_t seed);
  void validate() const;
};

struct GeneratedDomain {
  DatasetManifest manifest;  // split = All
  fs::path dir;
};

/// Renders every image into `<out_dir>/images` and writes `manifest.tsv`.
GeneratedDomain generate_domain(const SynthConfig& cfg, const fs::path& out_dir);

/// Pixel-box of the synthetic layout, in image coordinates.
struct Box {
  int y = 0;
  int x = 0;
  int h = 0;
  int w = 0;
};

/// Rendering layout: attribute i is a coloured square at attribute_blocks()[i]
/// whose colour departs from its region's base colour (the colour sampled at
/// attribute_reference_boxes()[i]) by 0.4 per channel when the bit is set.
struct SynthLayout {
  Box head, torso, legs;
  std::array<Box, attr::kNumAttributes> attribute_blocks;
  std::array<Box, attr::kNumAttributes> reference_boxes;
  double block_contrast = 0.4;
};
const SynthLayout& synth_layout();

struct SplitResult {
  DatasetManifest train;
  DatasetManifest query;
  DatasetManifest gallery;
  std::vector<std::string> warnings;
};

/// Identity-disjoint train/test split; test images go one per camera to the
/// query set and the rest to the gallery.
SplitResult split_domain(const DatasetManifest& manifest, double train_fraction, std::uint64_t seed);

/// Writes train/query/gallery manifests next to each other in `dir`.
void write_split(const fs::path& dir, const SplitResult& split);

struct TaskStreamEntry {
  fs::path dir;
  bool seen = true;
};

/// Ordered datasets; seen entries are trained in order, unseen ones are only
/// evaluated.
struct TaskStream {
  int version = 1;
  std::vector<TaskStreamEntry> entries;

  std::vector<fs::path> seen() const;
  std::vector<fs::path> unseen() const;
};

void write_task_stream(const fs::path& path, const TaskStream& stream);
TaskStream load_task_stream(const fs::path& path);

}  // namespace dcr::data
