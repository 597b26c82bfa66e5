#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace fermask {

// Per-image class scores aligned to class_list.
struct ScoreMatrix {
  std::vector<std::string> class_list;
  std::vector<std::string> image_ids;
  std::vector<int> true_labels;
  std::vector<std::vector<double>> scores;
  bool probabilities = false;  // every row sums to 1 within 1e-6

  std::size_t rows() const { return scores.size(); }
  std::size_t classes() const { return class_list.size(); }
};

// Throws ValidationError on shape mismatches, non-finite scores or labels
// out of range. Sets `probabilities`.
void validate(ScoreMatrix& s);

using Confusion = std::vector<std::vector<std::int64_t>>;

// Ties go to the lower class index.
int argmax(const std::vector<double>& row);

// Rows = true class, columns = predicted class.
Confusion confusion_matrix(const ScoreMatrix& s);

struct ClassCounts {
  std::int64_t tp = 0, tn = 0, fp = 0, fn = 0;
};

struct RatioSet {
  double precision = 0;
  double sensitivity = 0;
  double specificity = 0;
  double f1 = 0;
};

struct ClassMetrics {
  ClassCounts counts;
  RatioSet ratios;
  double auc = 0;
  bool auc_defined = false;
  std::vector<std::string> warnings;  // 0/0 ratios reported as 0
};

struct MetricReport {
  std::vector<std::string> class_list;
  Confusion confusion;
  std::int64_t n = 0;
  double accuracy = 0;
  std::vector<ClassMetrics> per_class;
  RatioSet micro;
  RatioSet macro;
  double auc_macro = 0;
  double auc_micro = 0;
  bool auc_set = false;
  std::string auc_average = "macro";  // which one `auc()` returns
  std::vector<std::string> warnings;

  double auc() const { return auc_average == "micro" ? auc_micro : auc_macro; }
};

// precision TP/(TP+FP), sensitivity TP/(TP+FN), specificity TN/(TN+FP),
// F1 TP/(TP + (FP+FN)/2), accuracy trace/N. Micro pools the one-vs-rest
// counts; macro averages the per-class values. AUC fields are left unset.
MetricReport classification_metrics(const Confusion& confusion, std::vector<std::string> class_list = {});

struct RocPoint {
  double threshold = 0;
  double tpr = 0;
  double fpr = 0;
};

struct RocCurve {
  std::vector<RocPoint> points;  // threshold from +inf down to -inf
  double auc = 0;
};

// One-vs-rest ROC for binary labels (true = positive). Sweeps every distinct
// score; AUC by the trapezoid rule, evaluated on integer counts so it equals
// the tie-corrected Mann-Whitney statistic exactly.
RocCurve roc_curve(const std::vector<double>& scores, const std::vector<bool>& positive);
RocCurve roc_auc(const ScoreMatrix& s, int class_index);
// All (row, class) pairs pooled into one binary problem.
RocCurve roc_auc_micro(const ScoreMatrix& s);

// Confusion + ratios + per-class and pooled AUC. Classes without both
// positives and negatives get auc_defined = false and are left out of the
// macro average.
MetricReport evaluate(const ScoreMatrix& s, const std::string& auc_average = "macro");

ScoreMatrix load_scores(const std::filesystem::path& path,
                        const std::vector<std::string>& expected_classes = {});
ScoreMatrix parse_scores(std::istream& in, const std::vector<std::string>& expected_classes = {});
void write_scores(const ScoreMatrix& s, const std::filesystem::path& path);
void write_scores(std::ostream& out, const ScoreMatrix& s);

// Extra fields are merged into the report object (config hash, version, ...).
std::string report_to_json(const MetricReport& r, const std::string& extra_json_object = "{}");
// Columns in the order Accuracy, Sensitivity, Specificity, Precision, F1, AUC.
std::string report_to_table(const MetricReport& r);
void write_roc_csv(const RocCurve& c, const std::filesystem::path& path);

}  // namespace fermask
