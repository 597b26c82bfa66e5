#include "fermask/mask_synthesis.hpp"

#include <Eigen/Dense>
#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include <nlohmann/json.hpp>

#include "fermask/error.hpp"

namespace fermask {

using json = nlohmann::json;

namespace {

double hull_area(std::vector<Point2> pts) {
  if (pts.size() < 3) return 0;
  std::sort(pts.begin(), pts.end(), [](const Point2& a, const Point2& b) {
    return a.x < b.x || (a.x == b.x && a.y < b.y);
  });
  auto cross = [](const Point2& o, const Point2& a, const Point2& b) {
    return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x);
  };
  std::vector<Point2> hull(2 * pts.size());
  std::size_t k = 0;
  for (const auto& p : pts) {
    while (k >= 2 && cross(hull[k - 2], hull[k - 1], p) <= 0) --k;
    hull[k++] = p;
  }
  for (std::size_t i = pts.size() - 1, t = k + 1; i-- > 0;) {
    while (k >= t && cross(hull[k - 2], hull[k - 1], pts[i]) <= 0) --k;
    hull[k++] = pts[i];
  }
  hull.resize(k > 0 ? k - 1 : 0);
  double area = 0;
  for (std::size_t i = 0; i < hull.size(); ++i) {
    const auto& a = hull[i];
    const auto& b = hull[(i + 1) % hull.size()];
    area += a.x * b.y - b.x * a.y;
  }
  return std::abs(area) / 2;
}

// Similarity transform taking pts to zero centroid and mean distance sqrt(2).
Eigen::Matrix3d normalizer(const std::vector<Point2>& pts) {
  double cx = 0, cy = 0;
  for (const auto& p : pts) {
    cx += p.x;
    cy += p.y;
  }
  cx /= pts.size();
  cy /= pts.size();
  double mean = 0;
  for (const auto& p : pts) mean += std::hypot(p.x - cx, p.y - cy);
  mean /= pts.size();
  if (!(mean > 0)) throw ValidationError("degenerate anchors: coincident points");
  const double s = std::sqrt(2.0) / mean;
  Eigen::Matrix3d t;
  t << s, 0, -s * cx, 0, s, -s * cy, 0, 0, 1;
  return t;
}

}  // namespace

void validate_template(const MaskTemplate& t) {
  const std::string name(to_string(t.mask_type));
  if (t.mask_type == MaskType::kNone) throw ValidationError("template mask_type cannot be 'none'");
  if (t.texture.empty()) throw ValidationError("template '" + name + "' has an empty texture");
  if (t.texture.channels != 4) throw ValidationError("template '" + name + "' texture must be RGBA");
  if (t.anchors.size() < 4) throw ValidationError("template '" + name + "' needs at least 4 anchors");
  std::vector<Point2> pts;
  for (const auto& a : t.anchors) {
    if (a.landmark < 1 || a.landmark > kLandmarkCount) {
      throw ValidationError("template '" + name + "' anchor '" + a.name + "' binds invalid landmark " +
                            std::to_string(a.landmark));
    }
    if (!(a.position.x >= 0 && a.position.y >= 0 && a.position.x <= t.texture.width &&
          a.position.y <= t.texture.height)) {
      throw ValidationError("template '" + name + "' anchor '" + a.name + "' lies outside the texture");
    }
    pts.push_back(a.position);
  }
  if (!(hull_area(pts) > 0)) throw ValidationError("template '" + name + "' anchors are collinear");
}

MaskTemplate load_template(const std::filesystem::path& dir, MaskType type) {
  const std::string name(to_string(type));
  const auto png = dir / (name + ".png");
  const auto anchors = dir / (name + ".anchors.json");
  if (!std::filesystem::exists(png)) throw ValidationError("missing template asset " + png.string());
  if (!std::filesystem::exists(anchors)) throw ValidationError("missing template asset " + anchors.string());
  MaskTemplate t;
  t.mask_type = type;
  t.texture = read_png(png);
  if (t.texture.channels != 4) throw ValidationError("template asset " + png.string() + " is not RGBA");
  std::ifstream in(anchors);
  try {
    json j = json::parse(in);
    const auto& pos = j.at("anchors");
    const auto& bind = j.at("landmark_bindings");
    for (auto it = pos.begin(); it != pos.end(); ++it) {
      MaskAnchor a;
      a.name = it.key();
      a.position = {it.value().at(0).get<double>(), it.value().at(1).get<double>()};
      if (!bind.contains(a.name)) {
        throw ValidationError("template asset " + anchors.string() + ": anchor '" + a.name + "' has no binding");
      }
      a.landmark = bind.at(a.name).get<int>();
      t.anchors.push_back(std::move(a));
    }
  } catch (const json::exception& e) {
    throw ValidationError("malformed template asset " + anchors.string() + ": " + e.what());
  }
  validate_template(t);
  return t;
}

void save_template(const MaskTemplate& t, const std::filesystem::path& dir) {
  validate_template(t);
  std::filesystem::create_directories(dir);
  const std::string name(to_string(t.mask_type));
  write_png(t.texture, dir / (name + ".png"));
  json anchors = json::object();
  json bindings = json::object();
  for (const auto& a : t.anchors) {
    anchors[a.name] = {a.position.x, a.position.y};
    bindings[a.name] = a.landmark;
  }
  std::ofstream out(dir / (name + ".anchors.json"));
  out << json{{"anchors", anchors}, {"landmark_bindings", bindings}}.dump(2) << '\n';
}

Point2 Homography::apply(Point2 p) const {
  const double w = h[2][0] * p.x + h[2][1] * p.y + h[2][2];
  return {(h[0][0] * p.x + h[0][1] * p.y + h[0][2]) / w, (h[1][0] * p.x + h[1][1] * p.y + h[1][2]) / w};
}

double Homography::determinant() const {
  return h[0][0] * (h[1][1] * h[2][2] - h[1][2] * h[2][1]) - h[0][1] * (h[1][0] * h[2][2] - h[1][2] * h[2][0]) +
         h[0][2] * (h[1][0] * h[2][1] - h[1][1] * h[2][0]);
}

Homography Homography::inverse() const {
  Eigen::Matrix3d m;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) m(r, c) = h[r][c];
  const Eigen::FullPivLU<Eigen::Matrix3d> lu(m);
  if (!lu.isInvertible()) throw Error("homography is not invertible");
  Eigen::Matrix3d inv = lu.inverse();
  if (std::abs(inv(2, 2)) > 1e-300) inv /= inv(2, 2);
  Homography out;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) out.h[r][c] = inv(r, c);
  return out;
}

double WarpFit::max_residual() const {
  return residuals.empty() ? 0.0 : *std::max_element(residuals.begin(), residuals.end());
}

WarpFit fit_homography(const std::vector<Point2>& from, const std::vector<Point2>& to) {
  if (from.size() != to.size()) throw ValidationError("correspondence count mismatch");
  if (from.size() < 4) throw ValidationError("degenerate anchors: need at least 4 correspondences");
  for (std::size_t i = 0; i < from.size(); ++i) {
    if (!std::isfinite(from[i].x) || !std::isfinite(from[i].y) || !std::isfinite(to[i].x) ||
        !std::isfinite(to[i].y)) {
      throw ValidationError("non-finite correspondence " + std::to_string(i));
    }
  }
  if (!(hull_area(from) > 0) || !(hull_area(to) > 0)) throw ValidationError("degenerate anchors: collinear set");

  const Eigen::Matrix3d t_from = normalizer(from);
  const Eigen::Matrix3d t_to = normalizer(to);
  const auto n = static_cast<Eigen::Index>(from.size());
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(2 * n, 9);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Eigen::Vector3d p = t_from * Eigen::Vector3d(from[i].x, from[i].y, 1);
    const Eigen::Vector3d q = t_to * Eigen::Vector3d(to[i].x, to[i].y, 1);
    const double x = p.x() / p.z(), y = p.y() / p.z();
    const double u = q.x() / q.z(), v = q.y() / q.z();
    a.row(2 * i) << -x, -y, -1, 0, 0, 0, u * x, u * y, u;
    a.row(2 * i + 1) << 0, 0, 0, -x, -y, -1, v * x, v * y, v;
  }
  // With 4 correspondences A is 8x9; pad so the SVD always exposes 9 values.
  if (a.rows() < 9) {
    a.conservativeResize(9, Eigen::NoChange);
    a.row(8).setZero();
  }
  const Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeFullV);
  const auto& sv = svd.singularValues();
  if (!(sv(7) > 1e-10 * sv(0))) throw ValidationError("degenerate anchors: rank-deficient design matrix");

  const Eigen::VectorXd hv = svd.matrixV().col(8);
  Eigen::Matrix3d hn;
  hn << hv(0), hv(1), hv(2), hv(3), hv(4), hv(5), hv(6), hv(7), hv(8);
  Eigen::Matrix3d hm = t_to.inverse() * hn * t_from;
  if (!(std::abs(hm(2, 2)) > 1e-12 * hm.norm())) throw ValidationError("degenerate anchors: h33 vanishes");
  hm /= hm(2, 2);

  WarpFit fit;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) fit.homography.h[r][c] = hm(r, c);
  if (!(std::abs(fit.homography.determinant()) > 1e-12)) throw ValidationError("degenerate anchors: singular fit");
  for (std::size_t i = 0; i < from.size(); ++i) {
    const Point2 p = fit.homography.apply(from[i]);
    fit.residuals.push_back(std::hypot(p.x - to[i].x, p.y - to[i].y));
  }
  return fit;
}

WarpFit fit_mask_warp(const MaskTemplate& t, const LandmarkSet& landmarks) {
  validate_template(t);
  validate_landmarks(landmarks);
  std::vector<Point2> from, to;
  for (const auto& a : t.anchors) {
    from.push_back(a.position);
    to.push_back(landmarks.landmark(a.landmark));
  }
  return fit_homography(from, to);
}

PixelRect pixel_rect(const Box& box) {
  // Pixel i is inside when x0 <= i + 0.5 <= x1.
  PixelRect r;
  r.x0 = static_cast<int>(std::ceil(box.x0 - 0.5));
  r.y0 = static_cast<int>(std::ceil(box.y0 - 0.5));
  r.x1 = static_cast<int>(std::floor(box.x1 - 0.5)) + 1;
  r.y1 = static_cast<int>(std::floor(box.y1 - 0.5)) + 1;
  return r;
}

MaskedImage apply_mask(const Image& image, const MaskTemplate& t, const Homography& h, const Box& face_box) {
  if (image.empty()) throw ValidationError("apply_mask: empty image");
  if (t.texture.empty()) throw ValidationError("apply_mask: empty template texture");
  if (t.texture.channels != 4) throw ValidationError("apply_mask: template texture must be RGBA");
  // The unnormalized inverse keeps w positive exactly for points in front of
  // the template plane; rescaling to h33 = 1 could flip that sign.
  Homography inv;
  {
    Eigen::Matrix3d m;
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) m(r, c) = h.h[r][c];
    const Eigen::FullPivLU<Eigen::Matrix3d> lu(m);
    if (!lu.isInvertible()) throw Error("homography is not invertible");
    const Eigen::Matrix3d mi = lu.inverse();
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) inv.h[r][c] = mi(r, c);
  }

  MaskedImage out;
  out.pixels = to_rgb(image);
  out.mask_type = t.mask_type;

  // Premultiplied float texture so bilinear sampling does not bleed the
  // colour of transparent texels into the mask edge.
  const int tw = t.texture.width, th = t.texture.height;
  std::vector<float> premul(static_cast<std::size_t>(tw) * th * 4);
  for (std::size_t i = 0; i < t.texture.pixel_count(); ++i) {
    const double a = t.texture.data[i * 4 + 3] / 255.0;
    for (int c = 0; c < 3; ++c) premul[i * 4 + c] = static_cast<float>(t.texture.data[i * 4 + c] * a);
    premul[i * 4 + 3] = static_cast<float>(t.texture.data[i * 4 + 3]);
  }

  // Candidate region: when the template rectangle stays in front of the
  // projective horizon its image is convex and the corner bounds suffice.
  int rx0 = 0, ry0 = 0, rx1 = image.width, ry1 = image.height;
  {
    const Point2 corners[4] = {{0, 0}, {double(tw), 0}, {0, double(th)}, {double(tw), double(th)}};
    bool in_front = true;
    double bx0 = 1e300, by0 = 1e300, bx1 = -1e300, by1 = -1e300;
    for (const auto& c : corners) {
      const double w = h.h[2][0] * c.x + h.h[2][1] * c.y + h.h[2][2];
      if (!(w > 0)) {
        in_front = false;
        break;
      }
      const Point2 p = h.apply(c);
      bx0 = std::min(bx0, p.x);
      by0 = std::min(by0, p.y);
      bx1 = std::max(bx1, p.x);
      by1 = std::max(by1, p.y);
    }
    if (in_front) {
      rx0 = std::clamp(static_cast<int>(std::floor(bx0)) - 1, 0, image.width);
      ry0 = std::clamp(static_cast<int>(std::floor(by0)) - 1, 0, image.height);
      rx1 = std::clamp(static_cast<int>(std::ceil(bx1)) + 1, 0, image.width);
      ry1 = std::clamp(static_cast<int>(std::ceil(by1)) + 1, 0, image.height);
    }
  }

  const PixelRect face = pixel_rect(face_box);
  long long covered = 0;
  for (int y = ry0; y < ry1; ++y) {
    for (int x = rx0; x < rx1; ++x) {
      const double px = x + 0.5, py = y + 0.5;
      const double w = inv.h[2][0] * px + inv.h[2][1] * py + inv.h[2][2];
      if (!(w > 0)) continue;
      const double u = (inv.h[0][0] * px + inv.h[0][1] * py + inv.h[0][2]) / w;
      const double v = (inv.h[1][0] * px + inv.h[1][1] * py + inv.h[1][2]) / w;
      if (!(u >= 0 && v >= 0 && u <= tw && v <= th)) continue;

      const double fu = u - 0.5, fv = v - 0.5;
      const double u0f = std::floor(fu), v0f = std::floor(fv);
      const double au = fu - u0f, av = fv - v0f;
      const int u0 = std::clamp(static_cast<int>(u0f), 0, tw - 1);
      const int u1 = std::clamp(static_cast<int>(u0f) + 1, 0, tw - 1);
      const int v0 = std::clamp(static_cast<int>(v0f), 0, th - 1);
      const int v1 = std::clamp(static_cast<int>(v0f) + 1, 0, th - 1);
      const float* t00 = &premul[(static_cast<std::size_t>(v0) * tw + u0) * 4];
      const float* t10 = &premul[(static_cast<std::size_t>(v0) * tw + u1) * 4];
      const float* t01 = &premul[(static_cast<std::size_t>(v1) * tw + u0) * 4];
      const float* t11 = &premul[(static_cast<std::size_t>(v1) * tw + u1) * 4];
      const double w00 = (1 - au) * (1 - av), w10 = au * (1 - av), w01 = (1 - au) * av, w11 = au * av;
      const double alpha = w00 * t00[3] + w10 * t10[3] + w01 * t01[3] + w11 * t11[3];
      if (!(alpha > 0)) continue;

      const double a = std::min(alpha / 255.0, 1.0);
      std::uint8_t* dst = out.pixels.at(x, y);
      for (int c = 0; c < 3; ++c) {
        const double src = w00 * t00[c] + w10 * t10[c] + w01 * t01[c] + w11 * t11[c];
        const double v_out = src + (1.0 - a) * dst[c];
        dst[c] = static_cast<std::uint8_t>(std::clamp(std::lround(v_out), 0L, 255L));
      }
      if (x >= face.x0 && x < face.x1 && y >= face.y0 && y < face.y1) ++covered;
    }
  }
  const long long area = face.area();
  out.coverage_fraction = area > 0 ? static_cast<double>(covered) / static_cast<double>(area) : 0.0;
  return out;
}

MaskedImage apply_mask(const Image& image, const MaskTemplate& t, const Homography& h, const LandmarkSet& lm) {
  MaskedImage out = apply_mask(image, t, h, lm.bounds());
  out.source_image_id = lm.source_image_id;
  return out;
}

std::string masked_image_id(const std::string& image_id, MaskType t) {
  return image_id + "_" + std::string(to_string(t));
}

ExpandResult expand_with_masks(const DatasetManifest& m, const std::vector<MaskType>& mask_types,
                               const ExpandOptions& opts) {
  ExpandResult result;
  if (mask_types.empty()) {
    result.manifest = m;
    return result;
  }
  std::set<MaskType> seen;
  for (MaskType t : mask_types) {
    if (t == MaskType::kNone) throw ValidationError("mask type 'none' cannot be applied");
    if (!seen.insert(t).second) throw ValidationError("mask type listed twice: " + std::string(to_string(t)));
    if (!opts.templates.contains(t)) throw ValidationError("no template for mask type " + std::string(to_string(t)));
  }
  for (const auto& r : m.records) {
    if (r.mask_type != MaskType::kNone) {
      throw ValidationError("record '" + r.image_id + "' is already masked (" + std::string(to_string(r.mask_type)) +
                            "); expansion needs unmasked originals");
    }
  }
  std::filesystem::create_directories(opts.out_dir);

  result.manifest.profile = m.profile;
  result.manifest.class_list = m.class_list;
  result.manifest.base_dir = opts.out_dir;
  for (const auto& r : m.records) {
    const auto image_path = m.resolve(r);
    const auto sc = sidecar_path(image_path);
    if (!std::filesystem::exists(sc)) {
      result.skipped.push_back({r.image_id, "missing sidecar " + sc.string()});
      continue;
    }
    LandmarkSet lm;
    Image img;
    try {
      lm = read_landmarks(sc);
      img = read_png(image_path);
    } catch (const Error& e) {
      result.skipped.push_back({r.image_id, e.what()});
      continue;
    }
    for (MaskType t : mask_types) {
      const MaskTemplate& tmpl = opts.templates.at(t);
      WarpFit fit;
      try {
        fit = fit_mask_warp(tmpl, lm);
      } catch (const ValidationError& e) {
        result.skipped.push_back({masked_image_id(r.image_id, t), e.what()});
        continue;
      }
      MaskedImage masked = apply_mask(img, tmpl, fit.homography, lm);
      ImageRecord out = r;
      out.image_id = masked_image_id(r.image_id, t);
      out.mask_type = t;
      out.path = out.image_id + ".png";
      write_png(masked.pixels, opts.out_dir / out.path);
      LandmarkSet copy = lm;
      copy.source_image_id = r.source_image_id;
      write_landmarks(copy, sidecar_path(opts.out_dir / out.path));
      result.manifest.records.push_back(std::move(out));
    }
  }
  return result;
}

}  // namespace fermask
