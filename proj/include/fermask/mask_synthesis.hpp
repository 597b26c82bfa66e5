#pragma once

#include <algorithm>
#include <array>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "fermask/dataset.hpp"
#include "fermask/image.hpp"

namespace fermask {

struct MaskAnchor {
  std::string name;
  Point2 position;    // template pixel coordinates
  int landmark = 0;   // 1-based iBUG index
};

struct MaskTemplate {
  MaskType mask_type = MaskType::kSurgical;
  Image texture;  // RGBA
  std::vector<MaskAnchor> anchors;
};

// Throws ValidationError when the template breaks its invariants: RGBA
// non-empty texture, >= 4 anchors inside the texture, non-collinear anchors,
// landmark bindings in 1..68.
void validate_template(const MaskTemplate& t);

// <dir>/<type>.png + <dir>/<type>.anchors.json
MaskTemplate load_template(const std::filesystem::path& dir, MaskType type);
void save_template(const MaskTemplate& t, const std::filesystem::path& dir);

// Procedurally drawn template for each of the four mask types.
MaskTemplate builtin_template(MaskType type);

// Projective map from template to image coordinates, h[2][2] == 1.
struct Homography {
  std::array<std::array<double, 3>, 3> h{{{1, 0, 0}, {0, 1, 0}, {0, 0, 1}}};

  static Homography identity() { return {}; }
  Point2 apply(Point2 p) const;
  double determinant() const;
  // Throws Error when singular.
  Homography inverse() const;
};

struct WarpFit {
  Homography homography;
  std::vector<double> residuals;  // per anchor, pixels
  double max_residual() const;
};

// Least-squares DLT over the anchor/landmark correspondences with Hartley
// normalization of both point sets.
WarpFit fit_homography(const std::vector<Point2>& from, const std::vector<Point2>& to);
WarpFit fit_mask_warp(const MaskTemplate& t, const LandmarkSet& landmarks);

struct MaskedImage {
  Image pixels;  // RGB
  std::string source_image_id;
  MaskType mask_type = MaskType::kNone;
  double coverage_fraction = 0;
};

// Integer pixel rectangle [x0, x1) x [y0, y1) whose centers fall inside box.
struct PixelRect {
  int x0 = 0, y0 = 0, x1 = 0, y1 = 0;
  long long area() const { return static_cast<long long>(std::max(0, x1 - x0)) * std::max(0, y1 - y0); }
};
PixelRect pixel_rect(const Box& box);

// Inverse-maps every output pixel center into the template, samples it
// bilinearly and composites src-over. coverage_fraction counts composited
// pixels (alpha > 0) that sit inside face_box, divided by face_box's area.
MaskedImage apply_mask(const Image& image, const MaskTemplate& t, const Homography& h, const Box& face_box);
MaskedImage apply_mask(const Image& image, const MaskTemplate& t, const Homography& h, const LandmarkSet& lm);

struct ExpandOptions {
  std::map<MaskType, MaskTemplate> templates;
  std::filesystem::path out_dir;
};

struct SkippedRecord {
  std::string image_id;
  std::string reason;
};

struct ExpandResult {
  DatasetManifest manifest;  // base_dir = out_dir
  std::vector<SkippedRecord> skipped;
};

// One output record per (input record, mask type). Masked images and copied
// landmark sidecars are written to out_dir; output paths are relative to it.
// Throws ValidationError if any input record is already masked.
ExpandResult expand_with_masks(const DatasetManifest& m, const std::vector<MaskType>& mask_types,
                               const ExpandOptions& opts);

std::string masked_image_id(const std::string& image_id, MaskType t);

}  // namespace fermask
