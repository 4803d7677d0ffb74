// SPDX-License-Identifier: Apache-2.0
//
// Binary model checkpoints. Layout: the 8-byte magic "DCRCKPT1", a
// little-endian uint64 header length, a JSON header (task index, config hash,
// model configuration, parameter names and shapes) and then every parameter's
// values as little-endian float64 in header order.
#pragma once

#include "dcr/model.hpp"

#include <filesystem>
#include <string>

namespace dcr::ckpt {

struct Checkpoint {
  DcrModel model;
  int task = 0;
  std::string config_hash;
};

/// Written to a temporary file and renamed into place.
void save_checkpoint(const std::filesystem::path& path, const DcrModel& model, int task,
                     const std::string& config_hash);
/// Throws IoError when the file is missing and ValidationError when malformed.
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// `task<t>_<first 12 hex digits of config_hash>.ckpt`
std::string checkpoint_name(int task, const std::string& config_hash);

/// SHA-256 (hex) over parameter names, shapes and values in visit order.
std::string parameter_hash(const DcrModel& model);
std::string file_hash(const std::filesystem::path& path);
std::string sha256_hex(const std::string& bytes);

std::string model_config_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const std::string& json);

}  // namespace dcr::ckpt
