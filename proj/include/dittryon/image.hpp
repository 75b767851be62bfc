#pragma once

#include <cstddef>
#include <filesystem>
#include <vector>

#include "dittryon/errors.hpp"

namespace dittryon {

/// Pixel grid with interleaved channels (row-major, HWC), intensities in [0, 1].
struct ImageGrid {
  std::size_t channels = 3;
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> values;

  ImageGrid() = default;
  ImageGrid(std::size_t c, std::size_t h, std::size_t w, double fill = 0.0)
      : channels(c), height(h), width(w), values(c * h * w, fill) {}

  double& at(std::size_t y, std::size_t x, std::size_t c) { return values[(y * width + x) * channels + c]; }
  double at(std::size_t y, std::size_t x, std::size_t c) const { return values[(y * width + x) * channels + c]; }

  std::size_t pixel_count() const { return height * width; }
  bool same_shape(const ImageGrid& o) const {
    return channels == o.channels && height == o.height && width == o.width;
  }

  /// Clamps every value into [0, 1].
  ImageGrid clamped() const;
};

bool operator==(const ImageGrid& a, const ImageGrid& b);

/// Binary PPM (P6) for 3 channels, PGM (P5) for 1 channel, 8-bit maxval 255.
void write_pnm(const std::filesystem::path& path, const ImageGrid& img);
ImageGrid read_pnm(const std::filesystem::path& path);
std::vector<unsigned char> encode_pnm(const ImageGrid& img);
ImageGrid decode_pnm(const std::vector<unsigned char>& bytes);

/// Rounds to the 8-bit grid the PNM files store.
ImageGrid quantize8(const ImageGrid& img);

}  // namespace dittryon
