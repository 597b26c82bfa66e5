#include "fermask/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstring>

#include "fermask/error.hpp"

namespace fermask {

Image::Image(int w, int h, int c, std::uint8_t fill)
    : width(w), height(h), channels(c), data(static_cast<std::size_t>(w) * h * c, fill) {}

namespace {

png_uint_32 format_for(int channels) {
  if (channels == 3) return PNG_FORMAT_RGB;
  if (channels == 4) return PNG_FORMAT_RGBA;
  throw Error("unsupported channel count " + std::to_string(channels));
}

Image finish_read(png_image& pi, const std::string& what) {
  const bool alpha = (pi.format & PNG_FORMAT_FLAG_ALPHA) != 0;
  pi.format = alpha ? PNG_FORMAT_RGBA : PNG_FORMAT_RGB;
  Image img(static_cast<int>(pi.width), static_cast<int>(pi.height), alpha ? 4 : 3);
  if (!png_image_finish_read(&pi, nullptr, img.data.data(), 0, nullptr)) {
    std::string msg = pi.message;
    png_image_free(&pi);
    throw Error("cannot decode PNG " + what + ": " + msg);
  }
  return img;
}

}  // namespace

Image read_png(const std::filesystem::path& path) {
  png_image pi;
  std::memset(&pi, 0, sizeof(pi));
  pi.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&pi, path.c_str())) {
    throw Error("cannot read PNG " + path.string() + ": " + pi.message);
  }
  return finish_read(pi, path.string());
}

Image decode_png(std::span<const std::uint8_t> bytes) {
  png_image pi;
  std::memset(&pi, 0, sizeof(pi));
  pi.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&pi, bytes.data(), bytes.size())) {
    throw Error(std::string("cannot decode PNG buffer: ") + pi.message);
  }
  return finish_read(pi, "buffer");
}

std::vector<std::uint8_t> encode_png(const Image& img) {
  if (img.empty()) throw Error("cannot encode an empty image");
  png_image pi;
  std::memset(&pi, 0, sizeof(pi));
  pi.version = PNG_IMAGE_VERSION;
  pi.width = static_cast<png_uint_32>(img.width);
  pi.height = static_cast<png_uint_32>(img.height);
  pi.format = format_for(img.channels);
  // Wire encoding favours speed; a single pass into a worst-case buffer.
  pi.flags = PNG_IMAGE_FLAG_FAST;
  png_alloc_size_t size = PNG_IMAGE_PNG_SIZE_MAX(pi);
  std::vector<std::uint8_t> out(size);
  if (!png_image_write_to_memory(&pi, out.data(), &size, 0, img.data.data(), 0, nullptr)) {
    throw Error(std::string("PNG encode failed: ") + pi.message);
  }
  out.resize(size);
  return out;
}

void write_png(const Image& img, const std::filesystem::path& path) {
  if (img.empty()) throw Error("cannot write an empty image to " + path.string());
  png_image pi;
  std::memset(&pi, 0, sizeof(pi));
  pi.version = PNG_IMAGE_VERSION;
  pi.width = static_cast<png_uint_32>(img.width);
  pi.height = static_cast<png_uint_32>(img.height);
  pi.format = format_for(img.channels);
  if (!png_image_write_to_file(&pi, path.c_str(), 0, img.data.data(), 0, nullptr)) {
    throw Error("cannot write PNG " + path.string() + ": " + pi.message);
  }
}

Image to_rgb(const Image& img) {
  if (img.channels == 3) return img;
  Image out(img.width, img.height, 3);
  for (std::size_t i = 0; i < img.pixel_count(); ++i) {
    for (int c = 0; c < 3; ++c) out.data[i * 3 + c] = img.data[i * img.channels + c];
  }
  return out;
}

bool sample_bilinear(const Image& img, double x, double y, double* out) {
  if (!(x >= 0.0 && y >= 0.0 && x <= img.width && y <= img.height)) return false;
  const double fx = x - 0.5;
  const double fy = y - 0.5;
  const double x0f = std::floor(fx);
  const double y0f = std::floor(fy);
  const double ax = fx - x0f;
  const double ay = fy - y0f;
  const int x0 = std::clamp(static_cast<int>(x0f), 0, img.width - 1);
  const int x1 = std::clamp(static_cast<int>(x0f) + 1, 0, img.width - 1);
  const int y0 = std::clamp(static_cast<int>(y0f), 0, img.height - 1);
  const int y1 = std::clamp(static_cast<int>(y0f) + 1, 0, img.height - 1);
  const std::uint8_t* p00 = img.at(x0, y0);
  const std::uint8_t* p10 = img.at(x1, y0);
  const std::uint8_t* p01 = img.at(x0, y1);
  const std::uint8_t* p11 = img.at(x1, y1);
  const double w00 = (1 - ax) * (1 - ay), w10 = ax * (1 - ay), w01 = (1 - ax) * ay, w11 = ax * ay;
  for (int c = 0; c < img.channels; ++c) {
    out[c] = w00 * p00[c] + w10 * p10[c] + w01 * p01[c] + w11 * p11[c];
  }
  return true;
}

}  // namespace fermask
