#include "fermask/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "fermask/error.hpp"
#include "fermask/rng.hpp"

namespace fermask {

namespace {

std::array<Point2, kLandmarkCount> build_canonical() {
  std::array<Point2, kLandmarkCount> p{};
  const double pi = std::numbers::pi;
  // Jaw 1-17: lower arc of an ellipse from ear to ear.
  for (int k = 0; k < 17; ++k) {
    const double phi = pi - pi * k / 16.0;
    p[k] = {std::cos(phi), -0.3 + 1.3 * std::sin(phi)};
  }
  // Brows 18-22 and 23-27.
  for (int k = 0; k < 5; ++k) {
    const double t = k / 4.0;
    const double lift = 0.08 * std::sin(pi * t);
    p[17 + k] = {-0.8 + 0.65 * t, -0.58 - lift};
    p[22 + k] = {0.15 + 0.65 * t, -0.58 - lift};
  }
  // Nose bridge 28-31 and base 32-36.
  for (int k = 0; k < 4; ++k) p[27 + k] = {0.0, -0.3 + 0.4 * k / 3.0};
  for (int k = 0; k < 5; ++k) p[31 + k] = {-0.2 + 0.1 * k, 0.22 + 0.04 * (k == 2 ? 1 : 0)};
  // Eyes 37-42 and 43-48, six points clockwise from the outer corner.
  const double eye_dx[6] = {-1, -0.5, 0.5, 1, 0.5, -0.5};
  const double eye_dy[6] = {0, -1, -1, 0, 1, 1};
  for (int k = 0; k < 6; ++k) {
    p[36 + k] = {-0.4 + 0.15 * eye_dx[k], -0.35 + 0.06 * eye_dy[k]};
    p[42 + k] = {0.4 + 0.15 * eye_dx[k], -0.35 + 0.06 * eye_dy[k]};
  }
  // Outer lip 49-60 and inner lip 61-68.
  for (int k = 0; k < 12; ++k) {
    const double phi = pi + 2 * pi * k / 12.0;
    p[48 + k] = {0.35 * std::cos(phi), 0.55 + 0.15 * std::sin(phi)};
  }
  for (int k = 0; k < 8; ++k) {
    const double phi = pi + 2 * pi * k / 8.0;
    p[60 + k] = {0.22 * std::cos(phi), 0.55 + 0.07 * std::sin(phi)};
  }
  return p;
}

bool inside(const std::vector<Point2>& poly, double x, double y) {
  bool in = false;
  for (std::size_t i = 0, j = poly.size() - 1; i < poly.size(); j = i++) {
    const Point2& a = poly[i];
    const Point2& b = poly[j];
    if ((a.y > y) != (b.y > y) && x < (b.x - a.x) * (y - a.y) / (b.y - a.y) + a.x) in = !in;
  }
  return in;
}

void fill_polygon(Image& img, const std::vector<Point2>& poly, std::array<int, 3> color) {
  double x0 = 1e300, y0 = 1e300, x1 = -1e300, y1 = -1e300;
  for (const auto& p : poly) {
    x0 = std::min(x0, p.x);
    y0 = std::min(y0, p.y);
    x1 = std::max(x1, p.x);
    y1 = std::max(y1, p.y);
  }
  const int ix0 = std::max(0, static_cast<int>(std::floor(x0)));
  const int iy0 = std::max(0, static_cast<int>(std::floor(y0)));
  const int ix1 = std::min(img.width, static_cast<int>(std::ceil(x1)) + 1);
  const int iy1 = std::min(img.height, static_cast<int>(std::ceil(y1)) + 1);
  for (int y = iy0; y < iy1; ++y) {
    for (int x = ix0; x < ix1; ++x) {
      if (!inside(poly, x + 0.5, y + 0.5)) continue;
      std::uint8_t* px = img.at(x, y);
      for (int c = 0; c < 3; ++c) px[c] = static_cast<std::uint8_t>(std::clamp(color[c], 0, 255));
    }
  }
}

std::vector<Point2> range(const LandmarkSet& lm, int first, int last) {
  std::vector<Point2> out;
  for (int i = first; i <= last; ++i) out.push_back(lm.landmark(i));
  return out;
}

const char* emotion_code(const std::string& e) {
  if (e == "anger") return "AN";
  if (e == "disgust") return "DI";
  if (e == "fear") return "FE";
  if (e == "happiness") return "HA";
  if (e == "neutral") return "NE";
  if (e == "sadness") return "SA";
  return "SU";
}

}  // namespace

const std::array<Point2, kLandmarkCount>& canonical_face_landmarks() {
  static const auto kFace = build_canonical();
  return kFace;
}

LandmarkSet place_face(double cx, double cy, double scale, double roll_deg, std::string source_image_id) {
  LandmarkSet lm;
  lm.source_image_id = std::move(source_image_id);
  const double th = roll_deg * std::numbers::pi / 180.0;
  const double c = std::cos(th), s = std::sin(th);
  const auto& face = canonical_face_landmarks();
  for (int i = 0; i < kLandmarkCount; ++i) {
    const double x = face[i].x * scale, y = face[i].y * scale;
    lm.points[i] = {cx + c * x - s * y, cy + s * x + c * y};
  }
  return lm;
}

Image render_synthetic_face(int width, int height, const LandmarkSet& lm, std::uint64_t variant) {
  Image img(width, height, 3);
  const std::uint64_t h = splitmix64(variant);
  const int bg_r = 40 + static_cast<int>(h % 120), bg_g = 60 + static_cast<int>((h >> 8) % 120),
            bg_b = 80 + static_cast<int>((h >> 16) % 120);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      std::uint8_t* p = img.at(x, y);
      p[0] = static_cast<std::uint8_t>(std::clamp(bg_r + (x * 40) / std::max(1, width), 0, 255));
      p[1] = static_cast<std::uint8_t>(std::clamp(bg_g + (y * 40) / std::max(1, height), 0, 255));
      p[2] = static_cast<std::uint8_t>(bg_b);
    }
  }
  const int tone = static_cast<int>((h >> 24) % 60);
  const std::array<int, 3> skin = {200 - tone, 160 - tone, 130 - tone};

  // Face: jaw line closed over the forehead.
  std::vector<Point2> face = range(lm, 1, 17);
  const Point2 jl = lm.landmark(1), jr = lm.landmark(17), chin = lm.landmark(9);
  const Point2 mid{(jl.x + jr.x) / 2, (jl.y + jr.y) / 2};
  const Point2 up{mid.x - (chin.x - mid.x) * 0.75, mid.y - (chin.y - mid.y) * 0.75};
  for (int k = 1; k < 12; ++k) {
    const double t = std::numbers::pi * k / 12.0;
    const double a = std::cos(t), b = std::sin(t);
    face.push_back({mid.x + (jr.x - mid.x) * a + (up.x - mid.x) * b, mid.y + (jr.y - mid.y) * a + (up.y - mid.y) * b});
  }
  fill_polygon(img, face, skin);

  fill_polygon(img, range(lm, 37, 42), {30, 30, 40});
  fill_polygon(img, range(lm, 43, 48), {30, 30, 40});
  fill_polygon(img, range(lm, 49, 60), {170 + static_cast<int>((h >> 32) % 60), 60, 70});
  fill_polygon(img, range(lm, 61, 68), {90, 20, 30});
  for (int side = 0; side < 2; ++side) {
    auto brow = range(lm, 18 + 5 * side, 22 + 5 * side);
    std::vector<Point2> poly = brow;
    for (auto it = brow.rbegin(); it != brow.rend(); ++it) poly.push_back({it->x, it->y + 2.0});
    fill_polygon(img, poly, {70, 50, 40});
  }
  std::vector<Point2> nose = {lm.landmark(28), lm.landmark(32), lm.landmark(34), lm.landmark(36)};
  fill_polygon(img, nose, {skin[0] - 30, skin[1] - 30, skin[2] - 30});
  return img;
}

const std::vector<std::string>& jaffe_subjects() {
  static const std::vector<std::string> kSubjects = {"KA", "KL", "KM", "KR", "MK", "NA", "NM", "TM", "UY", "YM"};
  return kSubjects;
}

const std::vector<std::string>& uibvfed_subjects() {
  static const std::vector<std::string> kSubjects = {
      "Alicia", "Jose", "Ramon", "Tomeu", "Wanda", "Ana",   "Bruno", "Carla", "Diego", "Elena",
      "Felix",  "Gema", "Hugo",  "Irene", "Joan",  "Laura", "Marc",  "Nuria", "Oscar", "Pilar"};
  return kSubjects;
}

DatasetManifest synthetic_manifest(const SyntheticDatasetSpec& spec) {
  DatasetManifest m;
  m.profile = spec.profile;
  m.class_list = default_class_list(spec.profile);
  if (spec.profile == Profile::kCustom) throw ValidationError("synthetic datasets need a named profile");
  int serial = 1;
  auto add = [&](const std::string& subject, const std::string& emotion, int session) {
    ImageRecord r;
    r.subject_id = subject;
    r.emotion = emotion;
    r.session = session;
    r.image_id = subject + "." + emotion_code(emotion) + std::to_string(session) + "." + std::to_string(serial++);
    r.source_image_id = r.image_id;
    r.path = r.image_id + ".png";
    m.records.push_back(std::move(r));
  };
  if (spec.profile == Profile::kJaffe) {
    for (const auto& s : jaffe_subjects()) {
      for (const auto& e : m.class_list) {
        for (int session = 1; session <= 3; ++session) add(s, e, session);
      }
    }
    // Three groups with a fourth take: 210 + 3 = 213.
    add("KA", "happiness", 4);
    add("NM", "surprise", 4);
    add("UY", "sadness", 4);
  } else {
    for (const auto& s : uibvfed_subjects()) {
      for (const auto& e : m.class_list) {
        for (int k = 1; k <= 4; ++k) add(s, e, k);
      }
    }
  }
  return m;
}

DatasetManifest write_synthetic_dataset(const std::filesystem::path& dir, const SyntheticDatasetSpec& spec) {
  if (spec.image_size < 32) throw ValidationError("synthetic image_size must be at least 32");
  DatasetManifest m = synthetic_manifest(spec);
  m.base_dir = dir;
  std::filesystem::create_directories(dir);
  const double size = spec.image_size;
  for (std::size_t i = 0; i < m.records.size(); ++i) {
    const auto& r = m.records[i];
    CounterRng rng(spec.seed, "synthetic/" + r.image_id);
    const double cx = size / 2 + rng.uniform(-0.03, 0.03) * size;
    const double cy = size * 0.47 + rng.uniform(-0.03, 0.03) * size;
    const double scale = size * rng.uniform(0.33, 0.37);
    const double roll = rng.uniform(-6.0, 6.0);
    const LandmarkSet lm = place_face(cx, cy, scale, roll, r.source_image_id);
    const Image img = render_synthetic_face(spec.image_size, spec.image_size, lm, rng.next_u64());
    write_png(img, m.resolve(r));
    write_landmarks(lm, sidecar_path(m.resolve(r)));
  }
  write_manifest(dir / "manifest.csv", m);
  return m;
}

}  // namespace fermask
