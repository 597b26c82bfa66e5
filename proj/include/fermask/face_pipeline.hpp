#pragma once

#include <cstdint>
#include <string_view>

#include "fermask/dataset.hpp"
#include "fermask/image.hpp"

namespace fermask {

struct CropConfig {
  double margin_top = 0.35;     // fraction of landmark-extent height
  double margin_sides = 0.10;   // fraction of landmark-extent width
  double margin_bottom = 0.05;  // fraction of landmark-extent height
  int output_size = 224;
};

void validate(const CropConfig& cfg);

// Landmark box grown by the margins, then squared by padding the short axis
// symmetrically. Continuous coordinates; may extend past the frame.
Box crop_box(const LandmarkSet& lm, const CropConfig& cfg);

// Samples crop_box(lm) onto an output_size square with bilinear
// interpolation; regions outside the source frame are black.
Image crop_face(const Image& image, const LandmarkSet& lm, const CropConfig& cfg);

// Bilinear resample of the whole frame (RGB output).
Image resize_bilinear(const Image& image, int width, int height);

// Maps landmarks into the coordinate frame of crop_face's output.
LandmarkSet crop_landmarks(const LandmarkSet& lm, const CropConfig& cfg);

struct AugmentConfig {
  double rotation_lo = -20.0, rotation_hi = 20.0;  // degrees
  int translation_lo = -5, translation_hi = 5;     // pixels, per axis
  std::uint64_t seed = 0;
};

void validate(const AugmentConfig& cfg);

struct GeoParams {
  double theta_deg = 0;
  int tx = 0;
  int ty = 0;
  bool operator==(const GeoParams&) const = default;
};

// Parameters for one image, drawn from the (seed, draw_key) stream.
GeoParams draw_geo_params(const AugmentConfig& cfg, std::string_view draw_key);

// Rotation about the image center (bilinear, black fill) followed by an
// integer translation (black fill). Output pixel p samples the input at
// R(-theta) (p - c) + c.
Image apply_geo(const Image& image, const GeoParams& params);

struct AugmentResult {
  Image image;
  GeoParams applied;
};

AugmentResult geo_augment(const Image& image, const AugmentConfig& cfg, std::string_view draw_key);

}  // namespace fermask
