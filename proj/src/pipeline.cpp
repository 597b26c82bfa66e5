#include "fermask/pipeline.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "fermask/error.hpp"
#include "fermask/predictor.hpp"
#include "fermask/rng.hpp"

namespace fermask {

namespace fs = std::filesystem;
using json = nlohmann::json;

std::string toolkit_version() { return FERMASK_VERSION; }

std::map<MaskType, MaskTemplate> load_templates(const fs::path& dir, const std::vector<MaskType>& types) {
  std::map<MaskType, MaskTemplate> out;
  for (MaskType t : types) out.emplace(t, dir.empty() ? builtin_template(t) : load_template(dir, t));
  return out;
}

std::vector<MaskType> parse_mask_list(const std::string& csv) {
  std::vector<MaskType> out;
  if (csv.empty()) return out;
  for (const auto& f : split_csv_line(csv)) {
    if (f.empty()) continue;
    const MaskType t = parse_mask_type(f);
    if (t == MaskType::kNone) throw ValidationError("'none' is not an overlay type");
    out.push_back(t);
  }
  return out;
}

namespace {

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw Error("cannot read " + p.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw Error("cannot write " + p.string());
  out << text;
}

[[noreturn]] void rethrow_for(const std::string& stage, const std::string& image_id, const Error& e) {
  const std::string msg = stage + " failed at image_id '" + image_id + "': " + e.what();
  if (dynamic_cast<const ValidationError*>(&e) != nullptr) throw ValidationError(msg);
  throw Error(msg);
}

std::string relative_to(const fs::path& target, const fs::path& base) {
  return fs::relative(fs::absolute(target), fs::absolute(base)).generic_string();
}

}  // namespace

DatasetManifest run_mask_stage(const DatasetManifest& in, const std::vector<MaskType>& types,
                               const std::map<MaskType, MaskTemplate>& templates, bool keep_originals,
                               const fs::path& out_dir, std::vector<SkippedRecord>* skipped) {
  fs::create_directories(out_dir);
  DatasetManifest out;
  out.profile = in.profile;
  out.class_list = in.class_list;
  out.base_dir = out_dir;
  if (keep_originals) {
    for (const auto& r : in.records) {
      if (r.mask_type != MaskType::kNone) {
        throw ValidationError("record '" + r.image_id + "' is already masked; expansion needs unmasked originals");
      }
      const fs::path src = in.resolve(r);
      ImageRecord copy = r;
      copy.path = r.image_id + ".png";
      try {
        fs::copy_file(src, out_dir / copy.path, fs::copy_options::overwrite_existing);
        fs::copy_file(sidecar_path(src), sidecar_path(out_dir / copy.path), fs::copy_options::overwrite_existing);
      } catch (const fs::filesystem_error& e) {
        throw ValidationError("mask failed at image_id '" + r.image_id + "': " + e.what());
      }
      out.records.push_back(std::move(copy));
    }
  }
  ExpandOptions opts;
  opts.templates = templates;
  opts.out_dir = out_dir;
  ExpandResult res = expand_with_masks(in, types, opts);
  if (types.empty()) {
    // Unchanged input; re-home it so paths stay valid next to the new manifest.
    for (auto& r : res.manifest.records) r.path = relative_to(in.resolve(r), out_dir);
  }
  out.records.insert(out.records.end(), res.manifest.records.begin(), res.manifest.records.end());
  if (skipped) *skipped = res.skipped;
  write_manifest(out_dir / "manifest.csv", out);
  return out;
}

DatasetManifest run_crop_stage(const DatasetManifest& in, const CropConfig& cfg, const fs::path& out_dir) {
  validate(cfg);
  fs::create_directories(out_dir);
  DatasetManifest out;
  out.profile = in.profile;
  out.class_list = in.class_list;
  out.base_dir = out_dir;
  for (const auto& r : in.records) {
    try {
      const fs::path src = in.resolve(r);
      const LandmarkSet lm = read_landmarks(sidecar_path(src));
      const Image img = read_png(src);
      ImageRecord o = r;
      o.path = r.image_id + ".png";
      write_png(crop_face(img, lm, cfg), out_dir / o.path);
      write_landmarks(crop_landmarks(lm, cfg), sidecar_path(out_dir / o.path));
      out.records.push_back(std::move(o));
    } catch (const Error& e) {
      rethrow_for("crop", r.image_id, e);
    }
  }
  write_manifest(out_dir / "manifest.csv", out);
  return out;
}

DatasetManifest run_augment_stage(const DatasetManifest& in, const AugmentConfig& cfg, int copies,
                                  const fs::path& out_dir) {
  validate(cfg);
  if (copies < 0) throw ValidationError("augment copies must be >= 0");
  fs::create_directories(out_dir);
  DatasetManifest out;
  out.profile = in.profile;
  out.class_list = in.class_list;
  out.base_dir = out_dir;
  for (const auto& r : in.records) {
    ImageRecord o = r;
    o.path = relative_to(in.resolve(r), out_dir);
    out.records.push_back(std::move(o));
  }
  std::ostringstream audit;
  audit << "image_id,draw_key,theta_deg,tx,ty\n";
  for (const auto& r : in.records) {
    if (copies == 0) break;
    Image img;
    try {
      img = read_png(in.resolve(r));
    } catch (const Error& e) {
      rethrow_for("augment", r.image_id, e);
    }
    for (int k = 1; k <= copies; ++k) {
      const std::string key = r.image_id + "#" + std::to_string(k);
      const AugmentResult a = geo_augment(img, cfg, key);
      ImageRecord o = r;
      o.image_id = r.image_id + "_aug" + std::to_string(k);
      o.path = o.image_id + ".png";
      write_png(a.image, out_dir / o.path);
      char buf[64];
      std::snprintf(buf, sizeof(buf), "%.9g", a.applied.theta_deg);
      audit << csv_escape(o.image_id) << ',' << csv_escape(key) << ',' << buf << ',' << a.applied.tx << ','
            << a.applied.ty << '\n';
      out.records.push_back(std::move(o));
    }
  }
  write_file(out_dir / "augment_params.csv", audit.str());
  write_manifest(out_dir / "manifest.csv", out);
  return out;
}

ScoreMatrix restrict_to_plan(const ScoreMatrix& scores, const SplitPlan& plan, const EvalOptions& opts) {
  const std::set<std::string> test(plan.test_ids.begin(), plan.test_ids.end());
  const std::set<std::string> train(plan.train_ids.begin(), plan.train_ids.end());
  ScoreMatrix out;
  out.class_list = scores.class_list;
  std::set<std::string> seen;
  for (std::size_t i = 0; i < scores.rows(); ++i) {
    const std::string& id = scores.image_ids.at(i);
    if (!test.contains(id)) {
      if (opts.allow_extra) continue;
      throw ValidationError("scores file contains " + std::string(train.contains(id) ? "train" : "unplanned") +
                            " id '" + id + "'; only plan test ids may be scored (use --allow-extra to ignore)");
    }
    if (!seen.insert(id).second) throw ValidationError("scores file repeats id '" + id + "'");
    out.image_ids.push_back(id);
    out.true_labels.push_back(scores.true_labels[i]);
    out.scores.push_back(scores.scores[i]);
  }
  std::size_t missing = 0;
  std::string first;
  for (const auto& id : plan.test_ids) {
    if (!seen.contains(id)) {
      if (missing++ == 0) first = id;
    }
  }
  if (missing > 0) {
    throw ValidationError("scores missing for " + std::to_string(missing) + " test ids (first: '" + first + "')");
  }
  validate(out);
  return out;
}

std::vector<fs::path> write_eval_outputs(const MetricReport& report, const ScoreMatrix& scores,
                                         const EvalOutputs& where, const std::string& extra_json) {
  std::vector<fs::path> written;
  if (where.report_json.has_parent_path()) fs::create_directories(where.report_json.parent_path());
  write_file(where.report_json, report_to_json(report, extra_json));
  written.push_back(where.report_json);
  if (!where.report_table.empty()) {
    write_file(where.report_table, report_to_table(report));
    written.push_back(where.report_table);
  }
  if (!where.roc_dir.empty()) {
    fs::create_directories(where.roc_dir);
    for (std::size_t j = 0; j < scores.classes(); ++j) {
      if (!report.per_class[j].auc_defined) continue;
      const fs::path p = where.roc_dir / ("roc_" + scores.class_list[j] + ".csv");
      write_roc_csv(roc_auc(scores, static_cast<int>(j)), p);
      written.push_back(p);
    }
    const fs::path p = where.roc_dir / "roc_micro.csv";
    write_roc_csv(roc_auc_micro(scores), p);
    written.push_back(p);
  }
  return written;
}

std::string file_sha256(const fs::path& p) { return sha256_hex(read_file(p)); }

void write_provenance(const fs::path& file, const std::string& command, const std::string& config_hash,
                      const std::vector<fs::path>& outputs, const std::string& extra_json) {
  const fs::path base = file.has_parent_path() ? file.parent_path() : fs::path(".");
  std::vector<ProvenanceEntry> entries;
  for (const auto& o : outputs) {
    entries.push_back({fs::absolute(o).lexically_normal().lexically_relative(fs::absolute(base).lexically_normal())
                           .generic_string(),
                       file_sha256(o)});
  }
  std::sort(entries.begin(), entries.end(), [](const auto& a, const auto& b) { return a.path < b.path; });
  json outs = json::array();
  for (const auto& e : entries) outs.push_back({{"path", e.path}, {"sha256", e.sha256}});
  json j = {{"command", command},
            {"config_hash", config_hash},
            {"toolkit_version", toolkit_version()},
            {"outputs", outs}};
  const json extra = json::parse(extra_json);
  for (auto it = extra.begin(); it != extra.end(); ++it) j[it.key()] = it.value();
  if (base != fs::path(".")) fs::create_directories(base);
  write_file(file, j.dump(2) + "\n");
}

std::vector<fs::path> list_files(const fs::path& dir) {
  std::vector<fs::path> out;
  if (!fs::exists(dir)) return out;
  for (auto it = fs::recursive_directory_iterator(dir); it != fs::recursive_directory_iterator(); ++it) {
    const std::string name = it->path().filename().string();
    if (!name.empty() && name[0] == '.') {
      if (it->is_directory()) it.disable_recursion_pending();
      continue;
    }
    if (it->is_regular_file()) out.push_back(it->path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

// ---- run configuration -------------------------------------------------------

namespace {

fs::path resolve_path(const std::string& p, const fs::path& base) {
  if (p.empty()) return {};
  fs::path path(p);
  if (path.is_relative() && !base.empty()) path = base / path;
  return path.lexically_normal();
}

template <typename T>
T take(const json& obj, const char* key, T fallback) {
  return obj.contains(key) ? obj.at(key).get<T>() : fallback;
}

void reject_unknown(const json& obj, std::initializer_list<const char*> keys, const std::string& where) {
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    if (std::find_if(keys.begin(), keys.end(), [&](const char* k) { return it.key() == k; }) == keys.end()) {
      throw ValidationError("unknown config key '" + where + it.key() + "'");
    }
  }
}

}  // namespace

RunConfig run_config_from_json(const std::string& text, const fs::path& base_dir) {
  RunConfig c;
  try {
    const json j = json::parse(text);
    reject_unknown(j,
                   {"profile", "manifest", "templates", "out", "seed", "mask_types", "keep_originals", "crop",
                    "augment", "protocol", "predictor", "explain", "auc_average"},
                   "");
    c.profile = parse_profile(take<std::string>(j, "profile", "jaffe-like"));
    c.manifest = resolve_path(take<std::string>(j, "manifest", ""), base_dir);
    c.templates = resolve_path(take<std::string>(j, "templates", ""), base_dir);
    c.out = resolve_path(take<std::string>(j, "out", ""), base_dir);
    if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("mask_types")) {
      c.mask_types.clear();
      for (const auto& t : j.at("mask_types")) c.mask_types.push_back(parse_mask_type(t.get<std::string>()));
    }
    c.keep_originals = take<bool>(j, "keep_originals", false);
    if (j.contains("crop")) {
      const auto& k = j.at("crop");
      reject_unknown(k, {"margin_top", "margin_sides", "margin_bottom", "size"}, "crop.");
      c.crop.margin_top = take<double>(k, "margin_top", c.crop.margin_top);
      c.crop.margin_sides = take<double>(k, "margin_sides", c.crop.margin_sides);
      c.crop.margin_bottom = take<double>(k, "margin_bottom", c.crop.margin_bottom);
      c.crop.output_size = take<int>(k, "size", c.crop.output_size);
    }
    if (j.contains("augment")) {
      const auto& k = j.at("augment");
      reject_unknown(k, {"rotation", "translate", "copies"}, "augment.");
      if (k.contains("rotation")) {
        c.augment.rotation_lo = k.at("rotation").at(0).get<double>();
        c.augment.rotation_hi = k.at("rotation").at(1).get<double>();
      }
      if (k.contains("translate")) {
        c.augment.translation_lo = k.at("translate").at(0).get<int>();
        c.augment.translation_hi = k.at("translate").at(1).get<int>();
      }
      c.augment_copies = take<int>(k, "copies", c.augment_copies);
    }
    c.protocol = parse_protocol(take<std::string>(j, "protocol", "jaffe_pi"));
    if (j.contains("predictor")) {
      const auto& k = j.at("predictor");
      reject_unknown(k, {"command", "batch_size", "timeout_ms"}, "predictor.");
      PredictorConfig p;
      p.command = k.at("command").get<std::string>();
      p.batch_size = take<std::size_t>(k, "batch_size", p.batch_size);
      p.timeout_ms = take<int>(k, "timeout_ms", p.timeout_ms);
      c.predictor = p;
    }
    if (j.contains("explain")) {
      const auto& k = j.at("explain");
      reject_unknown(k, {"count", "class", "cell", "samples", "sigma", "lambda", "top_k", "show_negative"},
                     "explain.");
      ExplainStageConfig e;
      e.count = take<int>(k, "count", e.count);
      e.class_name = take<std::string>(k, "class", "");
      e.cell_size = take<int>(k, "cell", e.cell_size);
      e.lime.n_samples = take<int>(k, "samples", e.lime.n_samples);
      e.lime.kernel_width = take<double>(k, "sigma", e.lime.kernel_width);
      e.lime.ridge = take<double>(k, "lambda", e.lime.ridge);
      e.heatmap.top_k = take<int>(k, "top_k", e.heatmap.top_k);
      e.heatmap.show_negative = take<bool>(k, "show_negative", false);
      c.explain = e;
    }
    c.auc_average = take<std::string>(j, "auc_average", c.auc_average);
  } catch (const json::exception& e) {
    throw ValidationError(std::string("malformed run config: ") + e.what());
  }
  return c;
}

RunConfig parse_run_config(const fs::path& path) {
  if (!fs::exists(path)) throw ValidationError("config file not found: " + path.string());
  return run_config_from_json(read_file(path), fs::absolute(path).parent_path());
}

namespace {

json crop_json(const CropConfig& c) {
  return {{"margin_top", c.margin_top}, {"margin_sides", c.margin_sides}, {"margin_bottom", c.margin_bottom},
          {"size", c.output_size}};
}

json mask_json(const RunConfig& c) {
  json types = json::array();
  for (MaskType t : c.mask_types) types.push_back(std::string(to_string(t)));
  json templates = c.templates.empty() ? json("builtin") : json(fs::weakly_canonical(c.templates).generic_string());
  return {{"mask_types", types}, {"keep_originals", c.keep_originals}, {"templates", templates}};
}

json augment_json(const RunConfig& c) {
  return {{"rotation", {c.augment.rotation_lo, c.augment.rotation_hi}},
          {"translate", {c.augment.translation_lo, c.augment.translation_hi}},
          {"copies", c.augment_copies},
          {"seed", c.seed.value_or(0)}};
}

json predictor_json(const RunConfig& c) {
  if (!c.predictor) return nullptr;
  return {{"command", c.predictor->command}, {"batch_size", c.predictor->batch_size},
          {"timeout_ms", c.predictor->timeout_ms}};
}

json explain_json(const RunConfig& c) {
  if (!c.explain) return nullptr;
  const auto& e = *c.explain;
  return {{"count", e.count},          {"class", e.class_name},      {"cell", e.cell_size},
          {"samples", e.lime.n_samples}, {"sigma", e.lime.kernel_width}, {"lambda", e.lime.ridge},
          {"top_k", e.heatmap.top_k},   {"show_negative", e.heatmap.show_negative}, {"seed", c.seed.value_or(0)}};
}

}  // namespace

std::string canonical_config_json(const RunConfig& c) {
  json j = {{"profile", std::string(to_string(c.profile))},
            {"manifest", fs::weakly_canonical(c.manifest).generic_string()},
            {"mask", mask_json(c)},
            {"crop", crop_json(c.crop)},
            {"augment", augment_json(c)},
            {"protocol", std::string(to_string(c.protocol))},
            {"seed", c.seed ? json(*c.seed) : json(nullptr)},
            {"predictor", predictor_json(c)},
            {"explain", explain_json(c)},
            {"auc_average", c.auc_average}};
  return j.dump();
}

std::string config_hash(const RunConfig& cfg) { return sha256_hex(canonical_config_json(cfg)); }

void validate_run_config(const RunConfig& c) {
  if (c.manifest.empty()) throw ValidationError("config: manifest is required");
  if (!fs::exists(c.manifest)) throw ValidationError("config: manifest not found: " + c.manifest.string());
  if (c.out.empty()) throw ValidationError("config: out is required");
  if (!c.templates.empty()) {
    for (MaskType t : c.mask_types) {
      for (const std::string suffix : {".png", ".anchors.json"}) {
        const fs::path asset = c.templates / (std::string(to_string(t)) + suffix);
        if (!fs::exists(asset)) throw ValidationError("missing template asset " + asset.string());
      }
    }
  }
  for (MaskType t : c.mask_types) {
    if (t == MaskType::kNone) throw ValidationError("config: 'none' is not an overlay type");
  }
  validate(c.crop);
  validate(c.augment);
  if (c.augment_copies < 0) throw ValidationError("config: augment.copies must be >= 0");
  if (c.protocol == Protocol::kCustom) throw ValidationError("config: protocol 'custom' cannot be generated");
  const bool jaffe_protocol = c.protocol == Protocol::kJaffePd || c.protocol == Protocol::kJaffePi;
  if ((c.profile == Profile::kJaffe && !jaffe_protocol) || (c.profile == Profile::kUibvfed && jaffe_protocol)) {
    throw ValidationError("config: protocol does not match the dataset profile");
  }
  const bool randomized = c.augment_copies > 0 || c.protocol == Protocol::kUibvfedPd || c.explain.has_value();
  if (randomized && !c.seed) throw ValidationError("config: seed is required (set seed or FERMASK_SEED)");
  if (c.predictor && c.predictor->command.empty()) throw ValidationError("config: predictor.command is empty");
  if (c.explain) {
    if (!c.predictor) throw ValidationError("config: explain needs a predictor");
    if (c.explain->class_name.empty()) throw ValidationError("config: explain.class is required");
    if (c.explain->count < 1) throw ValidationError("config: explain.count must be >= 1");
  }
  if (c.auc_average != "macro" && c.auc_average != "micro") {
    throw ValidationError("config: auc_average must be 'macro' or 'micro'");
  }
}

// ---- pipeline ---------------------------------------------------------------------

namespace {

class StageCache {
 public:
  explicit StageCache(fs::path out) : dir_(std::move(out) / ".stage") { fs::create_directories(dir_); }

  std::string key(const std::string& name, const json& slice, const std::string& upstream) const {
    return sha256_hex(name + "\n" + slice.dump() + "\n" + upstream);
  }

  // Returns the stored payload when the marker holds `key` and every listed output exists.
  std::optional<json> lookup(const std::string& name, const std::string& key, const fs::path& root) const {
    const fs::path marker = dir_ / (name + ".json");
    if (!fs::exists(marker)) return std::nullopt;
    json m;
    try {
      m = json::parse(read_file(marker));
    } catch (const json::exception&) {
      return std::nullopt;
    }
    if (m.value("key", "") != key) return std::nullopt;
    for (const auto& p : m.value("outputs", json::array())) {
      if (!fs::exists(root / p.get<std::string>())) return std::nullopt;
    }
    return m.value("payload", json::object());
  }

  void store(const std::string& name, const std::string& key, const std::vector<std::string>& outputs,
             const json& payload) const {
    write_file(dir_ / (name + ".json"), json{{"key", key}, {"outputs", outputs}, {"payload", payload}}.dump(2));
  }

  void invalidate(const std::string& name) const { fs::remove(dir_ / (name + ".json")); }

 private:
  fs::path dir_;
};

json skipped_json(const std::vector<SkippedRecord>& s) {
  json a = json::array();
  for (const auto& r : s) a.push_back({{"image_id", r.image_id}, {"reason", r.reason}});
  return a;
}

}  // namespace

PipelineResult run_pipeline(const RunConfig& cfg) {
  validate_run_config(cfg);
  const std::string hash = config_hash(cfg);
  const fs::path out = cfg.out;
  fs::create_directories(out);
  StageCache cache(out);
  PipelineResult result;

  const DatasetManifest input = parse_manifest(cfg.manifest, cfg.profile);
  const auto report = validate_manifest(input);
  if (!report.ok()) {
    const auto& v = report.violations.front();
    throw ValidationError("input manifest invalid: " + v.kind + " at image_id '" + v.image_id + "'");
  }
  std::string upstream = sha256_hex(read_file(cfg.manifest));
  const std::string extra =
      json{{"config_hash", hash}, {"toolkit_version", toolkit_version()}, {"protocol", std::string(to_string(cfg.protocol))}}
          .dump();

  auto reload = [&](const fs::path& dir) { return parse_manifest(dir / "manifest.csv", cfg.profile, input.class_list); };

  // mask
  const fs::path masked_dir = out / "masked";
  std::string key = cache.key("mask", mask_json(cfg), upstream);
  if (auto hit = cache.lookup("mask", key, out)) {
    result.stages_cached.push_back("mask");
    for (const auto& s : (*hit)["skipped"]) result.skipped.push_back({s["image_id"], s["reason"]});
  } else {
    cache.invalidate("mask");
    fs::remove_all(masked_dir);
    run_mask_stage(input, cfg.mask_types, load_templates(cfg.templates, cfg.mask_types), cfg.keep_originals,
                   masked_dir, &result.skipped);
    cache.store("mask", key, {"masked/manifest.csv"}, {{"skipped", skipped_json(result.skipped)}});
    result.stages_run.push_back("mask");
  }
  const DatasetManifest masked = reload(masked_dir);
  upstream = key;

  // crop
  const fs::path cropped_dir = out / "cropped";
  key = cache.key("crop", crop_json(cfg.crop), upstream);
  if (cache.lookup("crop", key, out)) {
    result.stages_cached.push_back("crop");
  } else {
    cache.invalidate("crop");
    fs::remove_all(cropped_dir);
    run_crop_stage(masked, cfg.crop, cropped_dir);
    cache.store("crop", key, {"cropped/manifest.csv"}, json::object());
    result.stages_run.push_back("crop");
  }
  const DatasetManifest cropped = reload(cropped_dir);
  upstream = key;

  // augment
  const fs::path aug_dir = out / "augmented";
  key = cache.key("augment", augment_json(cfg), upstream);
  if (cache.lookup("augment", key, out)) {
    result.stages_cached.push_back("augment");
  } else {
    cache.invalidate("augment");
    fs::remove_all(aug_dir);
    AugmentConfig aug = cfg.augment;
    aug.seed = cfg.seed.value_or(0);
    run_augment_stage(cropped, aug, cfg.augment_copies, aug_dir);
    cache.store("augment", key, {"augmented/manifest.csv"}, json::object());
    result.stages_run.push_back("augment");
  }
  const DatasetManifest augmented = reload(aug_dir);
  upstream = key;

  // split
  key = cache.key("split", {{"protocol", std::string(to_string(cfg.protocol))}, {"seed", cfg.seed.value_or(0)}},
                  upstream);
  if (cache.lookup("split", key, out)) {
    result.stages_cached.push_back("split");
  } else {
    cache.invalidate("split");
    const SplitPlan plan = make_split(augmented, cfg.protocol, cfg.seed.value_or(0));
    const auto leaked = check_leakage(augmented, plan);
    if (!leaked.empty()) throw Error("split leaked source_image_id '" + leaked.front() + "'");
    write_plan(plan, out / "plan.json");
    cache.store("split", key, {"plan.json"}, json::object());
    result.stages_run.push_back("split");
  }
  const SplitPlan plan = read_plan(out / "plan.json");
  upstream = key;

  std::unique_ptr<CommandPredictor> predictor;
  auto open_predictor = [&]() -> CommandPredictor& {
    if (!predictor) {
      CommandOptions o;
      o.command = cfg.predictor->command;
      o.class_list = input.class_list;
      o.batch_size = cfg.predictor->batch_size;
      o.timeout = std::chrono::milliseconds(cfg.predictor->timeout_ms);
      predictor = std::make_unique<CommandPredictor>(o);
    }
    return *predictor;
  };

  // score + eval
  if (cfg.predictor) {
    key = cache.key("eval", {{"predictor", predictor_json(cfg)}, {"auc_average", cfg.auc_average}, {"hash", hash}},
                    upstream);
    if (cache.lookup("eval", key, out)) {
      result.stages_cached.push_back("eval");
    } else {
      cache.invalidate("eval");
      const fs::path eval_dir = out / "eval";
      fs::remove_all(eval_dir);
      fs::create_directories(eval_dir);
      std::map<std::string, const ImageRecord*> by_id;
      for (const auto& r : augmented.records) by_id.emplace(r.image_id, &r);
      std::vector<fs::path> paths;
      ScoreMatrix scores;
      scores.class_list = input.class_list;
      for (const auto& id : plan.test_ids) {
        const ImageRecord* r = by_id.at(id);
        paths.push_back(augmented.resolve(*r));
        scores.image_ids.push_back(id);
        scores.true_labels.push_back(input.class_index(r->emotion));
      }
      const auto preds = open_predictor().predict_paths(paths);
      for (std::size_t i = 0; i < preds.size(); ++i) {
        if (!preds[i].ok()) throw Error("predictor failed at image_id '" + plan.test_ids[i] + "': " + preds[i].error);
        scores.scores.push_back(preds[i].scores);
      }
      validate(scores);
      write_scores(scores, eval_dir / "scores.csv");
      // Round-trip through the file so the report matches what `eval` would compute from it.
      const ScoreMatrix reloaded = restrict_to_plan(load_scores(eval_dir / "scores.csv"), plan, {});
      const MetricReport rep = evaluate(reloaded, cfg.auc_average);
      write_eval_outputs(rep, reloaded, {eval_dir / "report.json", eval_dir / "report.txt", eval_dir / "roc"}, extra);
      cache.store("eval", key, {"eval/report.json", "eval/scores.csv"}, json::object());
      result.stages_run.push_back("eval");
    }
    upstream = key;
  }

  // explain
  if (cfg.explain) {
    const auto& ex = *cfg.explain;
    key = cache.key("explain", {{"explain", explain_json(cfg)}, {"predictor", predictor_json(cfg)}, {"hash", hash}},
                    upstream);
    if (cache.lookup("explain", key, out)) {
      result.stages_cached.push_back("explain");
    } else {
      cache.invalidate("explain");
      const fs::path ex_dir = out / "explain";
      fs::remove_all(ex_dir);
      fs::create_directories(ex_dir);
      const int target = input.class_index(ex.class_name);
      if (target < 0) throw ValidationError("explain class '" + ex.class_name + "' is not in the class list");
      std::map<std::string, const ImageRecord*> by_id;
      for (const auto& r : augmented.records) by_id.emplace(r.image_id, &r);
      std::vector<std::string> outputs;
      const int n = std::min<int>(ex.count, static_cast<int>(plan.test_ids.size()));
      for (int i = 0; i < n; ++i) {
        const std::string& id = plan.test_ids[i];
        const Image img = to_rgb(read_png(augmented.resolve(*by_id.at(id))));
        const Segmentation seg = segment_image(img, ex.cell_size);
        LimeConfig lime = ex.lime;
        lime.seed = cfg.seed.value_or(0);
        lime.batch_size = cfg.predictor->batch_size;
        const Explanation e = fit_explanation(img, seg, open_predictor(), target, lime);
        write_png(render_heatmap(img, seg, e, ex.heatmap), ex_dir / (id + ".heatmap.png"));
        json j = json::parse(explanation_to_json(e, ex.class_name));
        j["image_id"] = id;
        j.update(json::parse(extra));
        write_file(ex_dir / (id + ".heatmap.json"), j.dump(2) + "\n");
        outputs.push_back("explain/" + id + ".heatmap.png");
      }
      cache.store("explain", key, outputs, json::object());
      result.stages_run.push_back("explain");
    }
  }

  std::vector<fs::path> files;
  for (const auto& f : list_files(out)) {
    if (f.filename() != "provenance.json") files.push_back(f);
  }
  write_provenance(out / "provenance.json", "pipeline", hash, files,
                   json{{"skipped", skipped_json(result.skipped)}}.dump());
  return result;
}

}  // namespace fermask
