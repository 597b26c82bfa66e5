#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <tuple>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "fermask/error.hpp"
#include "fermask/explain_lime.hpp"
#include "fermask/pipeline.hpp"
#include "fermask/predictor.hpp"
#include "fermask/rng.hpp"
#include "fermask/synthetic.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace fermask;

namespace {

// "LO:HI" with either bound possibly negative.
template <typename T>
std::pair<T, T> parse_range(const std::string& text, const char* flag) {
  const auto colon = text.find(':', 1);
  if (colon == std::string::npos) throw ValidationError(std::string(flag) + " expects LO:HI, got '" + text + "'");
  try {
    std::size_t used = 0;
    const std::string lo_s = text.substr(0, colon), hi_s = text.substr(colon + 1);
    T lo, hi;
    if constexpr (std::is_integral_v<T>) {
      lo = static_cast<T>(std::stoll(lo_s, &used));
      if (used != lo_s.size()) throw std::invalid_argument("lo");
      hi = static_cast<T>(std::stoll(hi_s, &used));
      if (used != hi_s.size()) throw std::invalid_argument("hi");
    } else {
      lo = std::stod(lo_s, &used);
      if (used != lo_s.size()) throw std::invalid_argument("lo");
      hi = std::stod(hi_s, &used);
      if (used != hi_s.size()) throw std::invalid_argument("hi");
    }
    return {lo, hi};
  } catch (const std::logic_error&) {
    throw ValidationError(std::string(flag) + " expects LO:HI, got '" + text + "'");
  }
}

std::uint64_t require_seed(const std::optional<std::uint64_t>& flag, const char* step) {
  if (flag) return *flag;
  std::uint64_t s = 0;
  if (seed_from_env(&s)) return s;
  throw ValidationError(std::string(step) + " is randomized: pass --seed or set FERMASK_SEED");
}

Profile profile_or(const std::string& text, Profile fallback) {
  return text.empty() ? fallback : parse_profile(text);
}

fs::path sibling(const fs::path& file, const std::string& suffix) {
  fs::path p = file;
  p.replace_extension();
  p += suffix;
  return p;
}

void provenance_for_dir(const fs::path& dir, const std::string& command, const json& options) {
  std::vector<fs::path> files;
  for (const auto& f : list_files(dir)) {
    if (f.filename() != "provenance.json") files.push_back(f);
  }
  write_provenance(dir / "provenance.json", command, sha256_hex(options.dump()), files,
                   json{{"options", options}}.dump());
}

void provenance_for_files(const fs::path& anchor, const std::string& command, const json& options,
                          const std::vector<fs::path>& files) {
  write_provenance(sibling(anchor, ".provenance.json"), command, sha256_hex(options.dump()), files,
                   json{{"options", options}}.dump());
}

std::string absolute_string(const fs::path& p) { return fs::weakly_canonical(p).generic_string(); }

void ensure_parent(const fs::path& file) {
  if (file.has_parent_path()) fs::create_directories(file.parent_path());
}

// ---- subcommands --------------------------------------------------------------

struct MaskArgs {
  std::string manifest, profile, types = "surgical,cloth,n95,kn95", templates, out;
  bool keep_originals = false;
};

int cmd_mask(const MaskArgs& a) {
  const DatasetManifest m = parse_manifest(fs::path(a.manifest), profile_or(a.profile, Profile::kCustom));
  const auto types = parse_mask_list(a.types);
  std::vector<SkippedRecord> skipped;
  const DatasetManifest out =
      run_mask_stage(m, types, load_templates(a.templates, types), a.keep_originals, a.out, &skipped);
  for (const auto& s : skipped) std::cerr << "skipped " << s.image_id << ": " << s.reason << '\n';
  std::cout << "wrote " << out.records.size() << " records to " << (fs::path(a.out) / "manifest.csv").string()
            << '\n';
  json opts = {{"manifest", absolute_string(a.manifest)},
               {"types", a.types},
               {"templates", a.templates.empty() ? "builtin" : absolute_string(a.templates)},
               {"keep_originals", a.keep_originals}};
  provenance_for_dir(a.out, "mask", opts);
  return 0;
}

struct CropArgs {
  std::string manifest, profile, margins, out;
  int size = 224;
};

int cmd_crop(const CropArgs& a) {
  CropConfig cfg;
  cfg.output_size = a.size;
  if (!a.margins.empty()) {
    const auto parts = split_csv_line(a.margins);
    if (parts.size() != 3) throw ValidationError("--margins expects TOP,SIDES,BOTTOM");
    try {
      cfg.margin_top = std::stod(parts[0]);
      cfg.margin_sides = std::stod(parts[1]);
      cfg.margin_bottom = std::stod(parts[2]);
    } catch (const std::logic_error&) {
      throw ValidationError("--margins expects three numbers");
    }
  }
  const DatasetManifest m = parse_manifest(fs::path(a.manifest), profile_or(a.profile, Profile::kCustom));
  const DatasetManifest out = run_crop_stage(m, cfg, a.out);
  std::cout << "cropped " << out.records.size() << " images into " << a.out << '\n';
  provenance_for_dir(a.out, "crop",
                     {{"manifest", absolute_string(a.manifest)},
                      {"margins", {cfg.margin_top, cfg.margin_sides, cfg.margin_bottom}},
                      {"size", cfg.output_size}});
  return 0;
}

struct AugmentArgs {
  std::string manifest, profile, image, key, rotation = "-20:20", translate = "-5:5", out;
  std::optional<std::uint64_t> seed;
  int copies = 1;
  int size = 0;
};

int cmd_augment(const AugmentArgs& a) {
  AugmentConfig cfg;
  std::tie(cfg.rotation_lo, cfg.rotation_hi) = parse_range<double>(a.rotation, "--rotation");
  std::tie(cfg.translation_lo, cfg.translation_hi) = parse_range<int>(a.translate, "--translate");
  validate(cfg);
  if (a.size < 0) throw ValidationError("--size must be positive");
  if (a.image.empty() == a.manifest.empty()) throw ValidationError("pass exactly one of --manifest or --image");
  cfg.seed = require_seed(a.seed, "augment");
  json opts = {{"rotation", {cfg.rotation_lo, cfg.rotation_hi}},
               {"translate", {cfg.translation_lo, cfg.translation_hi}},
               {"seed", cfg.seed},
               {"size", a.size}};

  if (!a.image.empty()) {
    Image img = read_png(a.image);
    if (a.size > 0) img = resize_bilinear(img, a.size, a.size);
    const std::string key = a.key.empty() ? fs::path(a.image).stem().string() : a.key;
    const AugmentResult r = geo_augment(img, cfg, key);
    ensure_parent(a.out);
    write_png(r.image, a.out);
    std::cout << "theta_deg=" << r.applied.theta_deg << " tx=" << r.applied.tx << " ty=" << r.applied.ty << '\n';
    opts["image"] = absolute_string(a.image);
    opts["draw_key"] = key;
    opts["applied"] = {{"theta_deg", r.applied.theta_deg}, {"tx", r.applied.tx}, {"ty", r.applied.ty}};
    provenance_for_files(a.out, "augment", opts, {a.out});
    return 0;
  }

  DatasetManifest m = parse_manifest(fs::path(a.manifest), profile_or(a.profile, Profile::kCustom));
  if (a.size > 0) {
    // Resampled inputs are materialized next to the output so copies and originals share a size.
    const fs::path resized = fs::path(a.out) / "resized";
    fs::create_directories(resized);
    for (auto& r : m.records) {
      const fs::path dst = resized / (r.image_id + ".png");
      write_png(resize_bilinear(read_png(m.resolve(r)), a.size, a.size), dst);
      r.path = fs::absolute(dst).string();
    }
  }
  const DatasetManifest out = run_augment_stage(m, cfg, a.copies, a.out);
  std::cout << "wrote " << out.records.size() << " records to " << (fs::path(a.out) / "manifest.csv").string()
            << '\n';
  opts["manifest"] = absolute_string(a.manifest);
  opts["copies"] = a.copies;
  provenance_for_dir(a.out, "augment", opts);
  return 0;
}

struct SplitArgs {
  std::string manifest, profile, protocol, out = "plan.json";
  std::optional<std::uint64_t> seed;
};

int cmd_split(const SplitArgs& a) {
  const Protocol protocol = parse_protocol(a.protocol);
  Profile fallback = Profile::kCustom;
  if (protocol == Protocol::kJaffePd || protocol == Protocol::kJaffePi) fallback = Profile::kJaffe;
  if (protocol == Protocol::kUibvfedPd || protocol == Protocol::kUibvfedPi) fallback = Profile::kUibvfed;
  const DatasetManifest m = parse_manifest(fs::path(a.manifest), profile_or(a.profile, fallback));
  std::uint64_t seed = 0;
  if (protocol == Protocol::kUibvfedPd) {
    seed = require_seed(a.seed, "uibvfed_pd");
  } else if (a.seed) {
    seed = *a.seed;
  }
  const SplitPlan plan = make_split(m, protocol, seed);
  const auto leaked = check_leakage(m, plan);
  if (!leaked.empty()) throw Error("split leaked source_image_id '" + leaked.front() + "'");
  ensure_parent(a.out);
  write_plan(plan, a.out);
  std::cout << "train " << plan.train_ids.size() << ", test " << plan.test_ids.size() << " -> " << a.out << '\n';
  provenance_for_files(a.out, "split", {{"manifest", absolute_string(a.manifest)}, {"protocol", a.protocol},
                                        {"seed", seed}},
                       {a.out});
  return 0;
}

struct EvalArgs {
  std::string scores, plan, report = "report.json", table, roc_dir, auc_average = "macro";
  bool allow_extra = false;
};

int cmd_eval(const EvalArgs& a) {
  if (a.auc_average != "macro" && a.auc_average != "micro") {
    throw ValidationError("--auc-average must be macro or micro");
  }
  const SplitPlan plan = read_plan(a.plan);
  const ScoreMatrix scores = restrict_to_plan(load_scores(a.scores), plan, {a.allow_extra, a.auc_average});
  const MetricReport rep = evaluate(scores, a.auc_average);
  const json opts = {{"scores_sha256", file_sha256(a.scores)},
                     {"plan_sha256", file_sha256(a.plan)},
                     {"allow_extra", a.allow_extra},
                     {"auc_average", a.auc_average}};
  const std::string hash = sha256_hex(opts.dump());
  const json extra = {{"config_hash", hash}, {"toolkit_version", toolkit_version()}, {"rows", scores.rows()}};
  const auto written = write_eval_outputs(rep, scores, {a.report, a.table, a.roc_dir}, extra.dump());
  std::cout << report_to_table(rep);
  provenance_for_files(a.report, "eval", opts, written);
  return 0;
}

struct ExplainArgs {
  std::string image, class_name, predictor_cmd, out = "heatmap.png";
  std::optional<std::uint64_t> seed;
  int cell = 16, samples = 1000, top_k = 5, timeout_ms = 30000;
  std::size_t batch_size = 64;
  double sigma = 0.25, lambda = 1e-3;
  bool show_negative = false;
};

int cmd_explain(const ExplainArgs& a) {
  LimeConfig lime;
  lime.n_samples = a.samples;
  lime.kernel_width = a.sigma;
  lime.ridge = a.lambda;
  lime.batch_size = a.batch_size;
  lime.seed = require_seed(a.seed, "explain");
  const Image img = to_rgb(read_png(a.image));
  const Segmentation seg = segment_image(img, a.cell);

  CommandOptions co;
  co.command = a.predictor_cmd;
  co.batch_size = a.batch_size;
  co.timeout = std::chrono::milliseconds(a.timeout_ms);
  CommandPredictor predictor(co);
  const auto& classes = predictor.class_list();
  int target = -1;
  for (std::size_t i = 0; i < classes.size(); ++i) {
    if (classes[i] == a.class_name) target = static_cast<int>(i);
  }
  if (target < 0) {
    throw ValidationError("--class '" + a.class_name + "' is not among the predictor's classes");
  }
  const Explanation e = fit_explanation(img, seg, predictor, target, lime);
  HeatmapOptions ho;
  ho.top_k = a.top_k;
  ho.show_negative = a.show_negative;
  ensure_parent(a.out);
  write_png(render_heatmap(img, seg, e, ho), a.out);

  const json opts = {{"image_sha256", file_sha256(a.image)}, {"class", a.class_name}, {"cell", a.cell},
                     {"samples", a.samples}, {"sigma", a.sigma}, {"lambda", a.lambda}, {"seed", lime.seed},
                     {"top_k", a.top_k}, {"show_negative", a.show_negative}, {"predictor", a.predictor_cmd}};
  json side = json::parse(explanation_to_json(e, a.class_name));
  side["config_hash"] = sha256_hex(opts.dump());
  side["toolkit_version"] = toolkit_version();
  const fs::path side_path = sibling(a.out, ".json");
  std::ofstream(side_path) << side.dump(2) << '\n';
  std::cout << "heatmap " << a.out << ", weights " << side_path.string() << '\n';
  provenance_for_files(a.out, "explain", opts, {a.out, side_path});
  return 0;
}

struct PipelineArgs {
  std::string config, out;
  std::optional<std::uint64_t> seed;
};

int cmd_pipeline(const PipelineArgs& a) {
  RunConfig cfg = parse_run_config(a.config);
  // Precedence: command-line flag, then the config file, then FERMASK_SEED.
  if (a.seed) cfg.seed = a.seed;
  if (!cfg.seed) {
    std::uint64_t s = 0;
    if (seed_from_env(&s)) cfg.seed = s;
  }
  if (!a.out.empty()) cfg.out = a.out;
  const PipelineResult r = run_pipeline(cfg);
  for (const auto& s : r.stages_run) std::cout << "ran    " << s << '\n';
  for (const auto& s : r.stages_cached) std::cout << "cached " << s << '\n';
  for (const auto& s : r.skipped) std::cerr << "skipped " << s.image_id << ": " << s.reason << '\n';
  std::cout << "config_hash " << config_hash(cfg) << '\n';
  return 0;
}

struct SynthArgs {
  std::string profile = "jaffe-like", out;
  std::uint64_t seed = 1;
  int size = 96;
};

int cmd_synth(const SynthArgs& a) {
  SyntheticDatasetSpec spec;
  spec.profile = parse_profile(a.profile);
  spec.seed = a.seed;
  spec.image_size = a.size;
  const DatasetManifest m = write_synthetic_dataset(a.out, spec);
  std::cout << "wrote " << m.records.size() << " synthetic records to " << a.out << '\n';
  provenance_for_dir(a.out, "synth", {{"profile", a.profile}, {"seed", a.seed}, {"size", a.size}});
  return 0;
}

int cmd_templates(const std::string& out) {
  fs::create_directories(out);
  for (MaskType t : all_mask_types()) save_template(builtin_template(t), out);
  std::cout << "wrote " << all_mask_types().size() << " templates to " << out << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Masked facial-expression dataset toolkit"};
  app.set_version_flag("--version", toolkit_version());
  app.require_subcommand(1);

  MaskArgs mask;
  auto* sc_mask = app.add_subcommand("mask", "Composite mask overlays onto every record");
  sc_mask->add_option("--manifest", mask.manifest, "Input manifest CSV")->required()->check(CLI::ExistingFile);
  sc_mask->add_option("--profile", mask.profile, "jaffe-like | uibvfed-like | custom (default custom)");
  sc_mask->add_option("--types", mask.types, "Comma-separated mask types")->capture_default_str();
  sc_mask->add_option("--templates", mask.templates, "Template directory (default: built-in)");
  sc_mask->add_flag("--keep-originals", mask.keep_originals, "Also list the unmasked originals");
  sc_mask->add_option("--out", mask.out, "Output directory")->required();

  CropArgs crop;
  auto* sc_crop = app.add_subcommand("crop", "Landmark-driven square face crops");
  sc_crop->add_option("--manifest", crop.manifest)->required()->check(CLI::ExistingFile);
  sc_crop->add_option("--profile", crop.profile);
  sc_crop->add_option("--margins", crop.margins, "TOP,SIDES,BOTTOM fractions (default 0.35,0.10,0.05)");
  sc_crop->add_option("--size", crop.size, "Output side in pixels")->capture_default_str();
  sc_crop->add_option("--out", crop.out)->required();

  AugmentArgs aug;
  auto* sc_aug = app.add_subcommand("augment", "Seeded rotation and translation copies");
  sc_aug->add_option("--manifest", aug.manifest)->check(CLI::ExistingFile);
  sc_aug->add_option("--image", aug.image, "Single PNG instead of a manifest")->check(CLI::ExistingFile);
  sc_aug->add_option("--draw-key", aug.key, "Stream key for --image (default: file stem)");
  sc_aug->add_option("--profile", aug.profile);
  sc_aug->add_option("--rotation", aug.rotation, "Degrees LO:HI")->capture_default_str();
  sc_aug->add_option("--translate", aug.translate, "Pixels LO:HI per axis")->capture_default_str();
  sc_aug->add_option("--seed", aug.seed);
  sc_aug->add_option("--copies", aug.copies, "Augmented copies per record")->capture_default_str();
  sc_aug->add_option("--size", aug.size, "Resample inputs to NxN first");
  sc_aug->add_option("--out", aug.out, "Output directory, or PNG path with --image")->required();

  SplitArgs split;
  auto* sc_split = app.add_subcommand("split", "Train/test plan for an evaluation protocol");
  sc_split->add_option("--manifest", split.manifest)->required()->check(CLI::ExistingFile);
  sc_split->add_option("--protocol", split.protocol, "jaffe_pd | jaffe_pi | uibvfed_pd | uibvfed_pi")->required();
  sc_split->add_option("--profile", split.profile, "Defaults to the protocol's profile");
  sc_split->add_option("--seed", split.seed);
  sc_split->add_option("--out", split.out)->capture_default_str();

  EvalArgs ev;
  auto* sc_eval = app.add_subcommand("eval", "Metrics for a scores file over a plan's test ids");
  sc_eval->add_option("--scores", ev.scores)->required()->check(CLI::ExistingFile);
  sc_eval->add_option("--plan", ev.plan)->required()->check(CLI::ExistingFile);
  sc_eval->add_option("--report", ev.report, "Report JSON path")->capture_default_str();
  sc_eval->add_option("--table", ev.table, "Also write the text table here");
  sc_eval->add_option("--roc-dir", ev.roc_dir, "Write per-class ROC CSVs here");
  sc_eval->add_option("--auc-average", ev.auc_average, "macro | micro")->capture_default_str();
  sc_eval->add_flag("--allow-extra", ev.allow_extra, "Drop rows outside plan.test instead of failing");

  ExplainArgs ex;
  auto* sc_ex = app.add_subcommand("explain", "LIME heatmap for one image");
  sc_ex->add_option("--image", ex.image)->required()->check(CLI::ExistingFile);
  sc_ex->add_option("--class", ex.class_name, "Class to explain")->required();
  sc_ex->add_option("--predictor-cmd", ex.predictor_cmd, "Shell command speaking the predictor protocol")
      ->required();
  sc_ex->add_option("--seed", ex.seed);
  sc_ex->add_option("--cell", ex.cell, "Grid cell side in pixels")->capture_default_str();
  sc_ex->add_option("--samples", ex.samples)->capture_default_str();
  sc_ex->add_option("--sigma", ex.sigma)->capture_default_str();
  sc_ex->add_option("--lambda", ex.lambda)->capture_default_str();
  sc_ex->add_option("--top-k", ex.top_k)->capture_default_str();
  sc_ex->add_option("--batch-size", ex.batch_size)->capture_default_str();
  sc_ex->add_option("--timeout-ms", ex.timeout_ms)->capture_default_str();
  sc_ex->add_flag("--show-negative", ex.show_negative, "Tint the most negative segment red");
  sc_ex->add_option("--out", ex.out, "Heatmap PNG; weights go to <stem>.json")->capture_default_str();

  PipelineArgs pipe;
  auto* sc_pipe = app.add_subcommand("pipeline", "mask, crop, augment, split (+ eval, explain) from a config");
  sc_pipe->add_option("--config", pipe.config)->required()->check(CLI::ExistingFile);
  sc_pipe->add_option("--seed", pipe.seed, "Overrides the config seed");
  sc_pipe->add_option("--out", pipe.out, "Overrides the config output directory");

  SynthArgs synth;
  auto* sc_synth = app.add_subcommand("synth", "Write a synthetic dataset with landmarks");
  sc_synth->add_option("--profile", synth.profile)->capture_default_str();
  sc_synth->add_option("--seed", synth.seed)->capture_default_str();
  sc_synth->add_option("--size", synth.size)->capture_default_str();
  sc_synth->add_option("--out", synth.out)->required();

  std::string templates_out;
  auto* sc_tpl = app.add_subcommand("templates", "Export the built-in mask templates");
  sc_tpl->add_option("--out", templates_out)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    if (*sc_mask) return cmd_mask(mask);
    if (*sc_crop) return cmd_crop(crop);
    if (*sc_aug) return cmd_augment(aug);
    if (*sc_split) return cmd_split(split);
    if (*sc_eval) return cmd_eval(ev);
    if (*sc_ex) return cmd_explain(ex);
    if (*sc_pipe) return cmd_pipeline(pipe);
    if (*sc_synth) return cmd_synth(synth);
    if (*sc_tpl) return cmd_templates(templates_out);
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 1;
}
