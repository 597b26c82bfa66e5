#include "fermask/face_pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "fermask/error.hpp"
#include "fermask/rng.hpp"

namespace fermask {

namespace {

std::uint8_t to_byte(double v) { return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L)); }

}  // namespace

void validate(const CropConfig& cfg) {
  if (!(cfg.margin_top >= 0) || !(cfg.margin_sides >= 0) || !(cfg.margin_bottom >= 0)) {
    throw ValidationError("crop margins must be >= 0");
  }
  if (cfg.output_size < 16) throw ValidationError("crop output_size must be >= 16");
}

Box crop_box(const LandmarkSet& lm, const CropConfig& cfg) {
  validate(cfg);
  validate_landmarks(lm);
  const Box ext = lm.bounds();
  const double w = ext.width(), h = ext.height();
  Box b{ext.x0 - cfg.margin_sides * w, ext.y0 - cfg.margin_top * h, ext.x1 + cfg.margin_sides * w,
        ext.y1 + cfg.margin_bottom * h};
  const double side = std::max(b.width(), b.height());
  const double pad_x = (side - b.width()) / 2, pad_y = (side - b.height()) / 2;
  b.x0 -= pad_x;
  b.x1 += pad_x;
  b.y0 -= pad_y;
  b.y1 += pad_y;
  return b;
}

Image crop_face(const Image& image, const LandmarkSet& lm, const CropConfig& cfg) {
  if (image.empty()) throw ValidationError("crop_face: empty image");
  const Box b = crop_box(lm, cfg);
  const Image src = to_rgb(image);
  const int n = cfg.output_size;
  const double sx = b.width() / n, sy = b.height() / n;
  Image out(n, n, 3, 0);
  double px[4];
  for (int y = 0; y < n; ++y) {
    for (int x = 0; x < n; ++x) {
      if (!sample_bilinear(src, b.x0 + (x + 0.5) * sx, b.y0 + (y + 0.5) * sy, px)) continue;
      std::uint8_t* o = out.at(x, y);
      for (int c = 0; c < 3; ++c) o[c] = to_byte(px[c]);
    }
  }
  return out;
}

Image resize_bilinear(const Image& image, int width, int height) {
  if (image.empty()) throw ValidationError("resize: empty image");
  if (width < 1 || height < 1) throw ValidationError("resize: target size must be positive");
  const Image src = to_rgb(image);
  if (src.width == width && src.height == height) return src;
  const double sx = static_cast<double>(src.width) / width, sy = static_cast<double>(src.height) / height;
  Image out(width, height, 3, 0);
  double px[4];
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      sample_bilinear(src, (x + 0.5) * sx, (y + 0.5) * sy, px);
      std::uint8_t* o = out.at(x, y);
      for (int c = 0; c < 3; ++c) o[c] = to_byte(px[c]);
    }
  }
  return out;
}

LandmarkSet crop_landmarks(const LandmarkSet& lm, const CropConfig& cfg) {
  const Box b = crop_box(lm, cfg);
  LandmarkSet out = lm;
  const double s = cfg.output_size / b.width();
  for (auto& p : out.points) p = {(p.x - b.x0) * s, (p.y - b.y0) * s};
  return out;
}

void validate(const AugmentConfig& cfg) {
  if (!std::isfinite(cfg.rotation_lo) || !std::isfinite(cfg.rotation_hi) || cfg.rotation_lo > cfg.rotation_hi) {
    throw ValidationError("rotation range must satisfy lo <= hi");
  }
  if (cfg.translation_lo > cfg.translation_hi) throw ValidationError("translation range must satisfy lo <= hi");
}

GeoParams draw_geo_params(const AugmentConfig& cfg, std::string_view draw_key) {
  validate(cfg);
  CounterRng rng(cfg.seed, draw_key);
  GeoParams p;
  p.theta_deg = rng.uniform(cfg.rotation_lo, cfg.rotation_hi);
  p.tx = static_cast<int>(rng.uniform_int(cfg.translation_lo, cfg.translation_hi));
  p.ty = static_cast<int>(rng.uniform_int(cfg.translation_lo, cfg.translation_hi));
  return p;
}

Image apply_geo(const Image& image, const GeoParams& params) {
  const Image src = to_rgb(image);
  Image rotated;
  if (params.theta_deg == 0.0) {
    rotated = src;
  } else {
    rotated = Image(src.width, src.height, 3, 0);
    const double th = params.theta_deg * std::numbers::pi / 180.0;
    const double c = std::cos(th), s = std::sin(th);
    const double cx = src.width / 2.0, cy = src.height / 2.0;
    double px[4];
    for (int y = 0; y < src.height; ++y) {
      for (int x = 0; x < src.width; ++x) {
        const double dx = x + 0.5 - cx, dy = y + 0.5 - cy;
        if (!sample_bilinear(src, cx + c * dx + s * dy, cy - s * dx + c * dy, px)) continue;
        std::uint8_t* o = rotated.at(x, y);
        for (int k = 0; k < 3; ++k) o[k] = to_byte(px[k]);
      }
    }
  }
  if (params.tx == 0 && params.ty == 0) return rotated;
  Image out(src.width, src.height, 3, 0);
  for (int y = 0; y < src.height; ++y) {
    const int sy = y - params.ty;
    if (sy < 0 || sy >= src.height) continue;
    for (int x = 0; x < src.width; ++x) {
      const int sx = x - params.tx;
      if (sx < 0 || sx >= src.width) continue;
      std::copy_n(rotated.at(sx, sy), 3, out.at(x, y));
    }
  }
  return out;
}

AugmentResult geo_augment(const Image& image, const AugmentConfig& cfg, std::string_view draw_key) {
  if (image.empty()) throw ValidationError("geo_augment: empty image");
  const GeoParams p = draw_geo_params(cfg, draw_key);
  return {apply_geo(image, p), p};
}

}  // namespace fermask
