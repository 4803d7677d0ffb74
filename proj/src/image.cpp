// SPDX-License-Identifier: Apache-2.0
#include "dcr/image.hpp"

#include "dcr/errors.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <string>

namespace dcr {

namespace {

constexpr std::size_t kTensorSize =
    static_cast<std::size_t>(kImageChannels) * kImageHeight * kImageWidth;

Image8 resize_bilinear(const Image8& src, int height, int width) {
  Image8 out{height, width, std::vector<std::uint8_t>(static_cast<std::size_t>(height) * width * 3)};
  const double sy = static_cast<double>(src.height) / height;
  const double sx = static_cast<double>(src.width) / width;
  for (int y = 0; y < height; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, src.height - 1.0);
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, src.height - 1);
    const double wy = fy - y0;
    for (int x = 0; x < width; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, src.width - 1.0);
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, src.width - 1);
      const double wx = fx - x0;
      for (int c = 0; c < 3; ++c) {
        const double v = (1 - wy) * ((1 - wx) * src.at(y0, x0, c) + wx * src.at(y0, x1, c)) +
                         wy * ((1 - wx) * src.at(y1, x0, c) + wx * src.at(y1, x1, c));
        out.at(y, x, c) = static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 255.0)));
      }
    }
  }
  return out;
}

// Next whitespace-delimited header token, skipping '#' comments.
std::string next_token(std::istream& in) {
  std::string tok;
  char ch = 0;
  while (in.get(ch)) {
    if (ch == '#') {
      std::string ignore;
      std::getline(in, ignore);
      continue;
    }
    if (std::isspace(static_cast<unsigned char>(ch))) {
      if (!tok.empty()) break;
      continue;
    }
    tok += ch;
  }
  return tok;
}

}  // namespace

ImageTensor::ImageTensor() : pixels_(kTensorSize, 0.0) {}

ImageTensor::ImageTensor(std::vector<double> pixels) : pixels_(std::move(pixels)) {
  if (pixels_.size() != kTensorSize) {
    throw InvalidInput("image tensor must have shape 3x256x128, got " +
                       std::to_string(pixels_.size()) + " values");
  }
  for (double v : pixels_) {
    if (!std::isfinite(v) || v < 0.0 || v > 1.0) throw InvalidInput("image values must be finite in [0,1]");
  }
}

Matrix ImageTensor::patches(int patch_size) const {
  if (patch_size <= 0 || kImageHeight % patch_size != 0 || kImageWidth % patch_size != 0) {
    throw InvalidInput("patch size must divide 256 and 128");
  }
  const int gh = kImageHeight / patch_size;
  const int gw = kImageWidth / patch_size;
  const int dim = kImageChannels * patch_size * patch_size;
  Matrix out(gh * gw, dim);
  for (int py = 0; py < gh; ++py) {
    for (int px = 0; px < gw; ++px) {
      const int row = py * gw + px;
      int col = 0;
      for (int c = 0; c < kImageChannels; ++c) {
        for (int y = 0; y < patch_size; ++y) {
          const double* src = &pixels_[(static_cast<std::size_t>(c) * kImageHeight + py * patch_size + y) *
                                           kImageWidth +
                                       px * patch_size];
          for (int x = 0; x < patch_size; ++x) out(row, col++) = src[x];
        }
      }
    }
  }
  return out;
}

ImageTensor preprocess(const Image8& image) {
  if (image.height <= 0 || image.width <= 0 ||
      image.rgb.size() != static_cast<std::size_t>(image.height) * image.width * 3) {
    throw InvalidInput("malformed image raster");
  }
  const Image8& src = (image.height == kImageHeight && image.width == kImageWidth)
                          ? image
                          : resize_bilinear(image, kImageHeight, kImageWidth);
  std::vector<double> px(kTensorSize);
  for (int c = 0; c < kImageChannels; ++c) {
    for (int y = 0; y < kImageHeight; ++y) {
      for (int x = 0; x < kImageWidth; ++x) {
        px[(static_cast<std::size_t>(c) * kImageHeight + y) * kImageWidth + x] = src.at(y, x, c) / 255.0;
      }
    }
  }
  return ImageTensor(std::move(px));
}

Image8 read_ppm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open image " + path.string());
  if (next_token(in) != "P6") throw IoError("not a binary PPM: " + path.string());
  Image8 img;
  try {
    img.width = std::stoi(next_token(in));
    img.height = std::stoi(next_token(in));
    if (std::stoi(next_token(in)) != 255) throw IoError("unsupported PPM depth: " + path.string());
  } catch (const std::logic_error&) {
    throw IoError("malformed PPM header: " + path.string());
  }
  img.rgb.resize(static_cast<std::size_t>(img.width) * img.height * 3);
  in.read(reinterpret_cast<char*>(img.rgb.data()), static_cast<std::streamsize>(img.rgb.size()));
  if (in.gcount() != static_cast<std::streamsize>(img.rgb.size())) {
    throw IoError("truncated PPM: " + path.string());
  }
  return img;
}

void write_ppm(const std::filesystem::path& path, const Image8& image) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write image " + path.string());
  out << "P6\n" << image.width << ' ' << image.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(image.rgb.data()), static_cast<std::streamsize>(image.rgb.size()));
  if (!out) throw IoError("failed writing image " + path.string());
}

}  // namespace dcr
