#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace fermask {

// Interleaved 8-bit raster. channels is 3 (RGB) or 4 (RGBA).
//
// Continuous coordinates put the center of pixel (x, y) at (x + 0.5, y + 0.5);
// the raster covers [0, width] x [0, height].
struct Image {
  int width = 0;
  int height = 0;
  int channels = 3;
  std::vector<std::uint8_t> data;

  Image() = default;
  Image(int w, int h, int c, std::uint8_t fill = 0);

  bool empty() const { return width <= 0 || height <= 0; }
  std::size_t pixel_count() const { return static_cast<std::size_t>(width) * height; }

  std::uint8_t* at(int x, int y) { return data.data() + (static_cast<std::size_t>(y) * width + x) * channels; }
  const std::uint8_t* at(int x, int y) const {
    return data.data() + (static_cast<std::size_t>(y) * width + x) * channels;
  }

  bool operator==(const Image&) const = default;
};

struct Rgb {
  double r = 0, g = 0, b = 0;
};

Image read_png(const std::filesystem::path& path);
void write_png(const Image& img, const std::filesystem::path& path);

// In-memory PNG codec, used for the predictor wire format.
std::vector<std::uint8_t> encode_png(const Image& img);
Image decode_png(std::span<const std::uint8_t> bytes);

Image to_rgb(const Image& img);

// Bilinear sample of an RGB(A) raster at continuous (x, y). Points outside
// [0,width]x[0,height] return false; inside, neighbour indices are clamped to
// the border.
bool sample_bilinear(const Image& img, double x, double y, double* out);

}  // namespace fermask
