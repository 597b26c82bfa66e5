#include <algorithm>
#include <cmath>
#include <vector>

#include "fermask/error.hpp"
#include "fermask/mask_synthesis.hpp"
#include "fermask/synthetic.hpp"

namespace fermask {

namespace {

constexpr int kTemplateWidth = 210;
constexpr int kTemplateHeight = 150;

// Face frame -> template pixels.
Point2 to_template(Point2 p) { return {(p.x + 1.05) * 100.0, (p.y + 0.40) * 100.0}; }

bool inside(const std::vector<Point2>& poly, double x, double y) {
  bool in = false;
  for (std::size_t i = 0, j = poly.size() - 1; i < poly.size(); j = i++) {
    const Point2& a = poly[i];
    const Point2& b = poly[j];
    if ((a.y > y) != (b.y > y) && x < (b.x - a.x) * (y - a.y) / (b.y - a.y) + a.x) in = !in;
  }
  return in;
}

// Outline sampled from a top curve (left->right) and a bottom curve (right->left).
std::vector<Point2> outline(double top_edge, double top_sag, double side_drop, double bottom, double belly) {
  std::vector<Point2> poly;
  const double l = 6, r = kTemplateWidth - 6, c = kTemplateWidth / 2.0;
  for (int i = 0; i <= 20; ++i) {
    const double t = i / 20.0;
    const double x = l + (r - l) * t;
    const double d = (x - c) / (c - l);
    poly.push_back({x, top_edge + top_sag * d * d});
  }
  for (int i = 0; i <= 20; ++i) {
    const double t = i / 20.0;
    const double x = r - (r - l) * t;
    const double d = (x - c) / (c - l);
    const double y = bottom - belly * d * d;
    poly.push_back({x, std::max(y, top_edge + top_sag * d * d + side_drop)});
  }
  return poly;
}

}  // namespace

MaskTemplate builtin_template(MaskType type) {
  if (type == MaskType::kNone) throw ValidationError("no template for mask type 'none'");
  const auto& face = canonical_face_landmarks();
  MaskTemplate t;
  t.mask_type = type;
  t.texture = Image(kTemplateWidth, kTemplateHeight, 4, 0);

  const bool respirator = type == MaskType::kN95 || type == MaskType::kKn95;
  struct Binding {
    const char* name;
    int landmark;
  };
  static constexpr Binding kBindings[] = {{"jaw_left", 2},    {"cheek_left", 5}, {"chin", 9},
                                          {"cheek_right", 13}, {"jaw_right", 16}, {"nose_bridge", 29}};
  for (const auto& b : kBindings) {
    Point2 p = to_template(face[b.landmark - 1]);
    // Respirators ride higher on the nose: binding the bridge lower in the
    // texture lifts the whole upper edge on the face.
    if (respirator && b.landmark == 29) p.y += 5.0;
    t.anchors.push_back({b.name, p, b.landmark});
  }

  std::vector<Point2> poly;
  std::array<int, 3> base{};
  switch (type) {
    case MaskType::kSurgical:
      poly = outline(18, 10, 30, 146, 40);
      base = {118, 176, 222};
      break;
    case MaskType::kCloth:
      poly = outline(20, 8, 34, 147, 34);
      base = {52, 62, 96};
      break;
    case MaskType::kN95:
      poly = outline(14, 16, 26, 147, 48);
      base = {236, 236, 228};
      break;
    case MaskType::kKn95:
      poly = outline(14, 12, 24, 148, 58);
      base = {242, 242, 242};
      break;
    case MaskType::kNone:
      break;
  }

  for (int y = 0; y < kTemplateHeight; ++y) {
    for (int x = 0; x < kTemplateWidth; ++x) {
      const double px = x + 0.5, py = y + 0.5;
      if (!inside(poly, px, py)) continue;
      int shade = 0;
      switch (type) {
        case MaskType::kSurgical:
          if (y % 24 >= 21) shade = -28;  // pleats
          break;
        case MaskType::kCloth:
          shade = ((x / 3 + y / 3) % 2 == 0) ? 8 : -8;  // weave
          break;
        case MaskType::kN95:
          if (std::abs(px - kTemplateWidth / 2.0) < 1.5) shade = -40;  // seam
          if (y % 30 < 2) shade = -12;
          break;
        case MaskType::kKn95:
          if (std::abs(px - kTemplateWidth / 2.0) < 2.5) shade = -55;  // fold
          break;
        case MaskType::kNone:
          break;
      }
      std::uint8_t* p = t.texture.at(x, y);
      for (int c = 0; c < 3; ++c) p[c] = static_cast<std::uint8_t>(std::clamp(base[c] + shade, 0, 255));
      p[3] = 255;
    }
  }
  validate_template(t);
  return t;
}

}  // namespace fermask
