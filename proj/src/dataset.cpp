#include "fermask/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "fermask/error.hpp"

namespace fermask {

using json = nlohmann::json;

std::string_view to_string(MaskType t) {
  switch (t) {
    case MaskType::kNone: return "none";
    case MaskType::kSurgical: return "surgical";
    case MaskType::kCloth: return "cloth";
    case MaskType::kN95: return "n95";
    case MaskType::kKn95: return "kn95";
  }
  return "none";
}

MaskType parse_mask_type(std::string_view s) {
  for (MaskType t : {MaskType::kNone, MaskType::kSurgical, MaskType::kCloth, MaskType::kN95, MaskType::kKn95}) {
    if (s == to_string(t)) return t;
  }
  throw ValidationError("unknown mask_type '" + std::string(s) + "'");
}

const std::vector<MaskType>& all_mask_types() {
  static const std::vector<MaskType> kTypes = {MaskType::kSurgical, MaskType::kCloth, MaskType::kN95,
                                               MaskType::kKn95};
  return kTypes;
}

std::string_view to_string(Profile p) {
  switch (p) {
    case Profile::kJaffe: return "jaffe-like";
    case Profile::kUibvfed: return "uibvfed-like";
    case Profile::kCustom: return "custom";
  }
  return "custom";
}

Profile parse_profile(std::string_view s) {
  if (s == "jaffe-like" || s == "jaffe") return Profile::kJaffe;
  if (s == "uibvfed-like" || s == "uibvfed") return Profile::kUibvfed;
  if (s == "custom") return Profile::kCustom;
  throw ValidationError("unknown profile '" + std::string(s) + "'");
}

std::vector<std::string> default_class_list(Profile p) {
  switch (p) {
    case Profile::kJaffe:
      return {"anger", "disgust", "fear", "happiness", "neutral", "sadness", "surprise"};
    case Profile::kUibvfed:
      return {"anger", "disgust", "fear", "happiness", "sadness"};
    case Profile::kCustom:
      return {};
  }
  return {};
}

Box LandmarkSet::bounds() const {
  Box b{points[0].x, points[0].y, points[0].x, points[0].y};
  for (const auto& p : points) {
    b.x0 = std::min(b.x0, p.x);
    b.y0 = std::min(b.y0, p.y);
    b.x1 = std::max(b.x1, p.x);
    b.y1 = std::max(b.y1, p.y);
  }
  return b;
}

void validate_landmarks(const LandmarkSet& lm) {
  for (std::size_t i = 0; i < lm.points.size(); ++i) {
    if (!std::isfinite(lm.points[i].x) || !std::isfinite(lm.points[i].y)) {
      throw ValidationError("landmark " + std::to_string(i + 1) + " of '" + lm.source_image_id +
                            "' is not finite");
    }
  }
  const Box b = lm.bounds();
  if (!(b.width() > 0) || !(b.height() > 0)) {
    throw ValidationError("degenerate landmark extent for '" + lm.source_image_id + "'");
  }
}

LandmarkSet read_landmarks(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("missing landmark sidecar " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ValidationError("malformed landmark sidecar " + path.string() + ": " + e.what());
  }
  LandmarkSet lm;
  try {
    lm.source_image_id = j.at("source_image_id").get<std::string>();
    const auto& pts = j.at("points");
    if (!pts.is_array() || pts.size() != kLandmarkCount) {
      throw ValidationError("landmark sidecar " + path.string() + " must hold exactly 68 points");
    }
    for (std::size_t i = 0; i < pts.size(); ++i) {
      lm.points[i] = {pts[i].at(0).get<double>(), pts[i].at(1).get<double>()};
    }
  } catch (const json::exception& e) {
    throw ValidationError("malformed landmark sidecar " + path.string() + ": " + e.what());
  }
  validate_landmarks(lm);
  return lm;
}

void write_landmarks(const LandmarkSet& lm, const std::filesystem::path& path) {
  json pts = json::array();
  for (const auto& p : lm.points) pts.push_back({p.x, p.y});
  json j = {{"source_image_id", lm.source_image_id}, {"points", pts}};
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << j.dump() << '\n';
}

std::filesystem::path sidecar_path(const std::filesystem::path& image_path) {
  return image_path.parent_path() / (image_path.stem().string() + ".landmarks.json");
}

std::filesystem::path DatasetManifest::resolve(const ImageRecord& r) const {
  std::filesystem::path p(r.path);
  if (p.is_absolute() || base_dir.empty()) return p;
  return base_dir / p;
}

int DatasetManifest::class_index(std::string_view emotion) const {
  for (std::size_t i = 0; i < class_list.size(); ++i) {
    if (class_list[i] == emotion) return static_cast<int>(i);
  }
  return -1;
}

std::vector<std::string> split_csv_line(std::string_view line) {
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur.push_back(c);
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  if (quoted) throw ValidationError("unterminated quoted field");
  fields.push_back(std::move(cur));
  return fields;
}

std::string csv_escape(std::string_view field) {
  if (field.find_first_of(",\"\n\r") == std::string_view::npos) return std::string(field);
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out.push_back('"');
    out.push_back(c);
  }
  out.push_back('"');
  return out;
}

namespace {

std::string strip_cr(std::string line) {
  if (!line.empty() && line.back() == '\r') line.pop_back();
  return line;
}

int parse_session(const std::string& s, std::size_t line_no) {
  int v = 0;
  std::size_t used = 0;
  try {
    v = std::stoi(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != s.size() || s.empty() || v < 1) {
    throw ValidationError("malformed row " + std::to_string(line_no) + ": session must be a positive integer, got '" +
                          s + "'");
  }
  return v;
}

}  // namespace

DatasetManifest parse_manifest(std::istream& in, Profile profile,
                               std::optional<std::vector<std::string>> class_list) {
  std::string line;
  if (!std::getline(in, line)) throw ValidationError("empty manifest");
  line = strip_cr(line);
  if (line.size() >= 3 && static_cast<unsigned char>(line[0]) == 0xEF) line.erase(0, 3);  // UTF-8 BOM
  if (line != kManifestHeader) {
    throw ValidationError("manifest header mismatch: expected '" + std::string(kManifestHeader) + "'");
  }

  DatasetManifest m;
  m.profile = profile;
  std::map<std::string, std::size_t> first_row;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    line = strip_cr(line);
    if (line.empty()) continue;
    std::vector<std::string> f;
    try {
      f = split_csv_line(line);
    } catch (const ValidationError& e) {
      throw ValidationError("malformed row " + std::to_string(line_no) + ": " + e.what());
    }
    if (f.size() != 7) {
      throw ValidationError("malformed row " + std::to_string(line_no) + ": expected 7 fields, found " +
                            std::to_string(f.size()));
    }
    for (int i : {0, 1, 2, 3, 6}) {
      if (f[i].empty()) throw ValidationError("malformed row " + std::to_string(line_no) + ": empty field");
    }
    ImageRecord r;
    r.image_id = f[0];
    r.source_image_id = f[1];
    r.subject_id = f[2];
    r.emotion = f[3];
    r.session = parse_session(f[4], line_no);
    try {
      r.mask_type = parse_mask_type(f[5]);
    } catch (const ValidationError& e) {
      throw ValidationError("malformed row " + std::to_string(line_no) + ": " + e.what());
    }
    r.path = f[6];
    auto [it, inserted] = first_row.emplace(r.image_id, line_no);
    if (!inserted) {
      throw ValidationError("duplicate image_id '" + r.image_id + "' at rows " + std::to_string(it->second) +
                            " and " + std::to_string(line_no));
    }
    m.records.push_back(std::move(r));
  }
  if (m.records.empty()) throw ValidationError("empty manifest");

  if (class_list) {
    m.class_list = std::move(*class_list);
  } else if (profile != Profile::kCustom) {
    m.class_list = default_class_list(profile);
  } else {
    std::set<std::string> seen;
    for (const auto& r : m.records) seen.insert(r.emotion);
    m.class_list.assign(seen.begin(), seen.end());
  }
  for (std::size_t i = 0; i < m.records.size(); ++i) {
    if (m.class_index(m.records[i].emotion) < 0) {
      throw ValidationError("unknown emotion '" + m.records[i].emotion + "' for profile " +
                            std::string(to_string(profile)) + " (image_id '" + m.records[i].image_id + "')");
    }
  }
  return m;
}

DatasetManifest parse_manifest(const std::filesystem::path& path, Profile profile,
                               std::optional<std::vector<std::string>> class_list) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open manifest " + path.string());
  DatasetManifest m = parse_manifest(in, profile, std::move(class_list));
  m.base_dir = path.parent_path();
  return m;
}

void write_manifest(std::ostream& out, const DatasetManifest& m) {
  out << kManifestHeader << '\n';
  for (const auto& r : m.records) {
    out << csv_escape(r.image_id) << ',' << csv_escape(r.source_image_id) << ',' << csv_escape(r.subject_id) << ','
        << csv_escape(r.emotion) << ',' << r.session << ',' << to_string(r.mask_type) << ',' << csv_escape(r.path)
        << '\n';
  }
}

void write_manifest(const std::filesystem::path& path, const DatasetManifest& m) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write manifest " + path.string());
  write_manifest(out, m);
}

ValidationReport validate_manifest(const DatasetManifest& m, bool check_sidecars) {
  ValidationReport rep;
  auto add = [&](std::string id, std::string kind, std::string detail) {
    rep.violations.push_back({std::move(id), std::move(kind), std::move(detail)});
  };

  std::set<std::string> distinct(m.class_list.begin(), m.class_list.end());
  if (m.class_list.size() < 2 || distinct.size() != m.class_list.size()) {
    add("", "invalid class list", "need at least 2 distinct classes");
  }
  if (m.records.empty()) add("", "empty manifest", "no records");

  std::set<std::string> ids;
  std::map<std::string, std::vector<const ImageRecord*>> groups;
  std::vector<std::string> group_order;
  for (const auto& r : m.records) {
    if (!ids.insert(r.image_id).second) add(r.image_id, "duplicate image_id", "");
    if (m.class_index(r.emotion) < 0) add(r.image_id, "unknown emotion", r.emotion);
    if (r.session < 1) add(r.image_id, "invalid session", std::to_string(r.session));
    auto& g = groups[r.source_image_id];
    if (g.empty()) group_order.push_back(r.source_image_id);
    g.push_back(&r);
  }

  for (const auto& sid : group_order) {
    const auto& g = groups[sid];
    const ImageRecord& head = *g.front();
    for (const ImageRecord* r : g) {
      if (r->subject_id != head.subject_id || r->emotion != head.emotion || r->session != head.session) {
        add(r->image_id, "inconsistent group",
            "source_image_id '" + sid + "' mixes subject/emotion/session values");
        break;
      }
    }
    std::set<MaskType> masks;
    for (const ImageRecord* r : g) {
      if (!masks.insert(r->mask_type).second) {
        add(r->image_id, "duplicate mask in group", "source_image_id '" + sid + "'");
        break;
      }
    }
  }

  if (check_sidecars) {
    for (const auto& r : m.records) {
      const auto sc = sidecar_path(m.resolve(r));
      if (!std::filesystem::exists(sc)) add(r.image_id, "missing sidecar", sc.string());
    }
  }
  return rep;
}

}  // namespace fermask
