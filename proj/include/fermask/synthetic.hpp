#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>

#include "fermask/dataset.hpp"
#include "fermask/image.hpp"

namespace fermask {

// Mean-face 68-point layout in a face frame: x in [-1, 1] ear to ear,
// eyebrows near y = -0.6, chin at y = 1.
const std::array<Point2, kLandmarkCount>& canonical_face_landmarks();

// Canonical landmarks scaled by `scale` px per face unit, rotated by `roll_deg`
// and centered at (cx, cy).
LandmarkSet place_face(double cx, double cy, double scale, double roll_deg, std::string source_image_id);

// Draws a cartoon face consistent with `lm` on a textured background. The
// variant index changes skin tone, mouth shape and background so images are
// distinguishable; output is a pure function of the arguments.
Image render_synthetic_face(int width, int height, const LandmarkSet& lm, std::uint64_t variant);

struct SyntheticDatasetSpec {
  Profile profile = Profile::kJaffe;
  int image_size = 96;
  std::uint64_t seed = 1;
  // JAFFE-shaped: 10 subjects x 7 emotions x 3 sessions, plus 3 fourth takes = 213.
  // UIBVFED-shaped: 20 subjects x 5 emotions x 4 images = 400.
};

// Writes PNGs, landmark sidecars and manifest.csv into dir; returns the manifest.
DatasetManifest write_synthetic_dataset(const std::filesystem::path& dir, const SyntheticDatasetSpec& spec);

// Records only, no files (paths still populated).
DatasetManifest synthetic_manifest(const SyntheticDatasetSpec& spec);

const std::vector<std::string>& jaffe_subjects();
const std::vector<std::string>& uibvfed_subjects();

}  // namespace fermask
