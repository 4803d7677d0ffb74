// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "dcr/autograd.hpp"

#include <cstdint>
#include <filesystem>
#include <vector>

namespace dcr {

inline constexpr int kImageHeight = 256;
inline constexpr int kImageWidth = 128;
inline constexpr int kImageChannels = 3;

/// 8-bit interleaved RGB raster as stored on disk.
struct Image8 {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> rgb;  // height * width * 3, row-major

  std::uint8_t& at(int y, int x, int c) { return rgb[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
  std::uint8_t at(int y, int x, int c) const {
    return rgb[(static_cast<std::size_t>(y) * width + x) * 3 + c];
  }
  bool operator==(const Image8&) const = default;
};

/// Channel-major pixels in [0,1], exactly 3 x 256 x 128 after preprocessing.
class ImageTensor {
 public:
  ImageTensor();
  /// Throws InvalidInput unless `pixels` holds 3*256*128 finite values in [0,1].
  explicit ImageTensor(std::vector<double> pixels);

  double at(int c, int y, int x) const {
    return pixels_[(static_cast<std::size_t>(c) * kImageHeight + y) * kImageWidth + x];
  }
  const std::vector<double>& pixels() const { return pixels_; }

  /// P x (3 * patch * patch) matrix of flattened non-overlapping patches in
  /// raster order; each row is channel-major within the patch.
  Matrix patches(int patch_size) const;

 private:
  std::vector<double> pixels_;
};

/// Resizes (bilinear) to 256 x 128 when needed and scales to [0,1].
ImageTensor preprocess(const Image8& image);

Image8 read_ppm(const std::filesystem::path& path);
void write_ppm(const std::filesystem::path& path, const Image8& image);

}  // namespace dcr
