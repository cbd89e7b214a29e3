#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

namespace mve {

/// Row-major, channel-interleaved image of doubles.
struct Image {
  int width = 0;
  int height = 0;
  int channels = 0;
  std::vector<double> data;

  Image() = default;
  Image(int w, int h, int c, double fill = 0.0)
      : width(w), height(h), channels(c), data(static_cast<std::size_t>(w) * h * c, fill) {}

  double& at(int row, int col, int ch) {
    return data[(static_cast<std::size_t>(row) * width + col) * channels + ch];
  }
  double at(int row, int col, int ch) const {
    return data[(static_cast<std::size_t>(row) * width + col) * channels + ch];
  }
  std::size_t pixel_count() const { return static_cast<std::size_t>(width) * height; }
  bool same_dims(const Image& o) const {
    return width == o.width && height == o.height && channels == o.channels;
  }
  bool operator==(const Image& o) const = default;
};

/// Three-channel RGB image with values in [0,1].
using RenderedImage = Image;

/// Per-pixel accumulated world coordinates plus accumulated opacity.
struct CMap {
  Image coords;    // 3 channels
  Image validity;  // 1 channel, in [0,1]

  int width() const { return coords.width; }
  int height() const { return coords.height; }
  bool operator==(const CMap& o) const = default;
};

// ---- float image container ---------------------------------------------------
//
// Text header followed by float32 little-endian samples:
//
//   MVEIMG
//   version 1
//   width <W>
//   height <H>
//   channels <C>
//   layout <comma separated channel names>
//   encoding float32-le
//   end
//
// Samples are row-major with channels interleaved per pixel.

void write_float_image(const Image& img, const std::vector<std::string>& layout,
                       const std::filesystem::path& path);
Image read_float_image(const std::filesystem::path& path, std::vector<std::string>* layout = nullptr);

/// RGB in layout r,g,b.
void write_rgb(const RenderedImage& img, const std::filesystem::path& path);
/// CMap in layout x,y,z,validity.
void write_cmap(const CMap& cmap, const std::filesystem::path& path);
CMap read_cmap(const std::filesystem::path& path);
/// 8-bit binary PPM for viewing; values are clamped to [0,1].
void write_ppm(const RenderedImage& img, const std::filesystem::path& path);

}  // namespace mve
