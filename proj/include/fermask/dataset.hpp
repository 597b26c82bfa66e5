#pragma once

#include <array>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace fermask {

enum class MaskType { kNone, kSurgical, kCloth, kN95, kKn95 };

std::string_view to_string(MaskType t);
MaskType parse_mask_type(std::string_view s);
// The four overlay types, in canonical order.
const std::vector<MaskType>& all_mask_types();

enum class Profile { kJaffe, kUibvfed, kCustom };

std::string_view to_string(Profile p);
Profile parse_profile(std::string_view s);
// Ordered class list of a named profile; empty for kCustom.
std::vector<std::string> default_class_list(Profile p);

struct ImageRecord {
  std::string image_id;
  std::string source_image_id;
  std::string subject_id;
  std::string emotion;
  int session = 1;
  MaskType mask_type = MaskType::kNone;
  std::string path;

  bool operator==(const ImageRecord&) const = default;
};

inline constexpr int kLandmarkCount = 68;

struct Point2 {
  double x = 0;
  double y = 0;
  bool operator==(const Point2&) const = default;
};

struct Box {
  double x0 = 0, y0 = 0, x1 = 0, y1 = 0;
  double width() const { return x1 - x0; }
  double height() const { return y1 - y0; }
};

// 68 points, iBUG ordering, pixel coordinates with origin top-left.
struct LandmarkSet {
  std::string source_image_id;
  std::array<Point2, kLandmarkCount> points{};

  // 1-based iBUG index.
  const Point2& landmark(int ibug_index) const { return points.at(ibug_index - 1); }
  Box bounds() const;
};

// Throws ValidationError on non-finite points or a degenerate extent.
void validate_landmarks(const LandmarkSet& lm);

LandmarkSet read_landmarks(const std::filesystem::path& path);
void write_landmarks(const LandmarkSet& lm, const std::filesystem::path& path);
// <dir>/<stem>.landmarks.json next to an image.
std::filesystem::path sidecar_path(const std::filesystem::path& image_path);

struct DatasetManifest {
  Profile profile = Profile::kCustom;
  std::vector<std::string> class_list;
  std::vector<ImageRecord> records;
  // Directory relative record paths resolve against. Not serialized.
  std::filesystem::path base_dir;

  std::filesystem::path resolve(const ImageRecord& r) const;
  int class_index(std::string_view emotion) const;  // -1 when absent
};

inline constexpr std::string_view kManifestHeader =
    "image_id,source_image_id,subject_id,emotion,session,mask_type,path";

// class_list overrides the profile's default; required ordering for custom
// profiles, otherwise the sorted distinct emotions are used.
DatasetManifest parse_manifest(std::istream& in, Profile profile,
                               std::optional<std::vector<std::string>> class_list = std::nullopt);
DatasetManifest parse_manifest(const std::filesystem::path& path, Profile profile,
                               std::optional<std::vector<std::string>> class_list = std::nullopt);

void write_manifest(std::ostream& out, const DatasetManifest& m);
void write_manifest(const std::filesystem::path& path, const DatasetManifest& m);

struct Violation {
  std::string image_id;
  std::string kind;
  std::string detail;
};

struct ValidationReport {
  std::vector<Violation> violations;
  bool ok() const { return violations.empty(); }
};

ValidationReport validate_manifest(const DatasetManifest& m, bool check_sidecars = false);

// Minimal RFC 4180 field splitting (quoted fields, doubled quotes).
std::vector<std::string> split_csv_line(std::string_view line);
std::string csv_escape(std::string_view field);

}  // namespace fermask
