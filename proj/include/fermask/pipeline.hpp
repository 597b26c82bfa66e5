#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "fermask/dataset.hpp"
#include "fermask/explain_lime.hpp"
#include "fermask/face_pipeline.hpp"
#include "fermask/mask_synthesis.hpp"
#include "fermask/metrics.hpp"
#include "fermask/protocol_splits.hpp"

namespace fermask {

std::string toolkit_version();

// Built-in templates when dir is empty, otherwise <dir>/<type>.{png,anchors.json}.
std::map<MaskType, MaskTemplate> load_templates(const std::filesystem::path& dir, const std::vector<MaskType>& types);

std::vector<MaskType> parse_mask_list(const std::string& csv);

// Masked copies (plus copied originals when keep_originals) in out_dir.
DatasetManifest run_mask_stage(const DatasetManifest& in, const std::vector<MaskType>& types,
                               const std::map<MaskType, MaskTemplate>& templates, bool keep_originals,
                               const std::filesystem::path& out_dir, std::vector<SkippedRecord>* skipped);

// Cropped images and re-projected landmark sidecars in out_dir.
DatasetManifest run_crop_stage(const DatasetManifest& in, const CropConfig& cfg, const std::filesystem::path& out_dir);

// Input records (referenced by relative path) followed by `copies` augmented
// copies per record; drawn parameters go to out_dir/augment_params.csv.
DatasetManifest run_augment_stage(const DatasetManifest& in, const AugmentConfig& cfg, int copies,
                                  const std::filesystem::path& out_dir);

struct EvalOptions {
  bool allow_extra = false;
  std::string auc_average = "macro";
};

// Restricts scores to plan.test_ids. Rows for any other id are refused unless
// allow_extra (then dropped); test ids without a row are an error.
ScoreMatrix restrict_to_plan(const ScoreMatrix& scores, const SplitPlan& plan, const EvalOptions& opts);

struct EvalOutputs {
  std::filesystem::path report_json;
  std::filesystem::path report_table;  // empty to skip
  std::filesystem::path roc_dir;       // empty to skip
};

// Writes report JSON (with `extra` merged in), the table and per-class ROC CSVs.
// Returns the written paths.
std::vector<std::filesystem::path> write_eval_outputs(const MetricReport& report, const ScoreMatrix& scores,
                                                      const EvalOutputs& where, const std::string& extra_json);

struct ProvenanceEntry {
  std::string path;  // relative to the provenance file's directory when possible
  std::string sha256;
};

std::string file_sha256(const std::filesystem::path& p);
void write_provenance(const std::filesystem::path& file, const std::string& command, const std::string& config_hash,
                      const std::vector<std::filesystem::path>& outputs, const std::string& extra_json = "{}");

// Every file under dir, sorted, skipping dot-files.
std::vector<std::filesystem::path> list_files(const std::filesystem::path& dir);

struct PredictorConfig {
  std::string command;
  std::size_t batch_size = 32;
  int timeout_ms = 30000;
};

struct ExplainStageConfig {
  int count = 1;            // first `count` test ids in sorted order
  std::string class_name;   // required
  int cell_size = 16;
  LimeConfig lime;
  HeatmapOptions heatmap;
};

struct RunConfig {
  Profile profile = Profile::kJaffe;
  std::filesystem::path manifest;
  std::filesystem::path templates;  // empty = built-in
  std::filesystem::path out;
  std::optional<std::uint64_t> seed;
  std::vector<MaskType> mask_types = all_mask_types();
  bool keep_originals = false;
  CropConfig crop;
  AugmentConfig augment;
  int augment_copies = 1;
  Protocol protocol = Protocol::kJaffePi;
  std::optional<PredictorConfig> predictor;
  std::optional<ExplainStageConfig> explain;
  std::string auc_average = "macro";
};

// Relative paths in the file resolve against the config file's directory.
RunConfig parse_run_config(const std::filesystem::path& path);
RunConfig run_config_from_json(const std::string& text, const std::filesystem::path& base_dir);
// Canonical JSON of everything that affects outputs (the out path excluded).
std::string canonical_config_json(const RunConfig& cfg);
std::string config_hash(const RunConfig& cfg);
// Throws ValidationError naming the first missing path or bad value.
void validate_run_config(const RunConfig& cfg);

struct PipelineResult {
  std::vector<std::string> stages_run;
  std::vector<std::string> stages_cached;
  std::vector<SkippedRecord> skipped;
};

// mask -> crop -> augment -> split, then score+eval and explain when a
// predictor is configured. A stage is reused when its cache key (config
// slice + upstream key) matches the marker written after its last success.
PipelineResult run_pipeline(const RunConfig& cfg);

}  // namespace fermask
