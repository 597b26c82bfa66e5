#include "fermask/metrics.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include <nlohmann/json.hpp>

#include "fermask/dataset.hpp"
#include "fermask/error.hpp"

namespace fermask {

using json = nlohmann::json;

void validate(ScoreMatrix& s) {
  const std::size_t k = s.classes();
  if (k < 2) throw ValidationError("score matrix needs at least 2 classes");
  if (s.true_labels.size() != s.rows() || (!s.image_ids.empty() && s.image_ids.size() != s.rows())) {
    throw ValidationError("score matrix row bookkeeping mismatch");
  }
  bool prob = !s.scores.empty();
  for (std::size_t i = 0; i < s.rows(); ++i) {
    const auto& row = s.scores[i];
    if (row.size() != k) {
      throw ValidationError("score row " + std::to_string(i) + ": expected " + std::to_string(k) + " scores, found " +
                            std::to_string(row.size()));
    }
    if (s.true_labels[i] < 0 || static_cast<std::size_t>(s.true_labels[i]) >= k) {
      throw ValidationError("score row " + std::to_string(i) + ": label out of range");
    }
    double sum = 0;
    for (double v : row) {
      if (!std::isfinite(v)) throw ValidationError("score row " + std::to_string(i) + ": non-finite score");
      sum += v;
    }
    if (std::abs(sum - 1.0) > 1e-6) prob = false;
  }
  s.probabilities = prob;
}

int argmax(const std::vector<double>& row) {
  int best = 0;
  for (std::size_t j = 1; j < row.size(); ++j) {
    if (row[j] > row[best]) best = static_cast<int>(j);
  }
  return best;
}

Confusion confusion_matrix(const ScoreMatrix& s) {
  if (s.rows() == 0) throw ValidationError("empty score matrix");
  const std::size_t k = s.classes();
  Confusion c(k, std::vector<std::int64_t>(k, 0));
  for (std::size_t i = 0; i < s.rows(); ++i) {
    if (s.scores[i].size() != k) throw ValidationError("score row width does not match class list");
    const int t = s.true_labels.at(i);
    if (t < 0 || static_cast<std::size_t>(t) >= k) throw ValidationError("label out of range");
    ++c[t][argmax(s.scores[i])];
  }
  return c;
}

namespace {

double ratio(double num, double den, const std::string& what, std::vector<std::string>& warnings) {
  if (den == 0) {
    warnings.push_back(what + " is 0/0, reported as 0");
    return 0;
  }
  return num / den;
}

RatioSet ratios_from(const ClassCounts& c, const std::string& label, std::vector<std::string>& warnings) {
  const double tp = static_cast<double>(c.tp), tn = static_cast<double>(c.tn);
  const double fp = static_cast<double>(c.fp), fn = static_cast<double>(c.fn);
  RatioSet r;
  r.precision = ratio(tp, tp + fp, label + " precision", warnings);
  r.sensitivity = ratio(tp, tp + fn, label + " sensitivity", warnings);
  r.specificity = ratio(tn, tn + fp, label + " specificity", warnings);
  r.f1 = ratio(tp, tp + 0.5 * (fp + fn), label + " f1", warnings);
  return r;
}

}  // namespace

MetricReport classification_metrics(const Confusion& confusion, std::vector<std::string> class_list) {
  const std::size_t k = confusion.size();
  if (k < 2) throw ValidationError("confusion matrix needs at least 2 classes");
  std::int64_t n = 0;
  for (const auto& row : confusion) {
    if (row.size() != k) throw ValidationError("confusion matrix is not square");
    for (auto v : row) {
      if (v < 0) throw ValidationError("confusion matrix has a negative entry");
      n += v;
    }
  }
  if (n < 1) throw ValidationError("confusion matrix is empty");
  if (class_list.empty()) {
    for (std::size_t i = 0; i < k; ++i) class_list.push_back("class_" + std::to_string(i));
  }
  if (class_list.size() != k) throw ValidationError("class list does not match confusion size");

  MetricReport rep;
  rep.class_list = std::move(class_list);
  rep.confusion = confusion;
  rep.n = n;
  ClassCounts pooled;
  std::int64_t trace = 0;
  for (std::size_t i = 0; i < k; ++i) {
    ClassMetrics cm;
    std::int64_t row = 0, col = 0;
    for (std::size_t j = 0; j < k; ++j) {
      row += confusion[i][j];
      col += confusion[j][i];
    }
    cm.counts.tp = confusion[i][i];
    cm.counts.fp = col - cm.counts.tp;
    cm.counts.fn = row - cm.counts.tp;
    cm.counts.tn = n - cm.counts.tp - cm.counts.fp - cm.counts.fn;
    cm.ratios = ratios_from(cm.counts, rep.class_list[i], cm.warnings);
    rep.warnings.insert(rep.warnings.end(), cm.warnings.begin(), cm.warnings.end());
    pooled.tp += cm.counts.tp;
    pooled.fp += cm.counts.fp;
    pooled.fn += cm.counts.fn;
    pooled.tn += cm.counts.tn;
    trace += confusion[i][i];
    rep.per_class.push_back(std::move(cm));
  }
  rep.accuracy = static_cast<double>(trace) / static_cast<double>(n);
  rep.micro = ratios_from(pooled, "micro", rep.warnings);
  for (const auto& cm : rep.per_class) {
    rep.macro.precision += cm.ratios.precision;
    rep.macro.sensitivity += cm.ratios.sensitivity;
    rep.macro.specificity += cm.ratios.specificity;
    rep.macro.f1 += cm.ratios.f1;
  }
  const double kd = static_cast<double>(k);
  rep.macro.precision /= kd;
  rep.macro.sensitivity /= kd;
  rep.macro.specificity /= kd;
  rep.macro.f1 /= kd;
  return rep;
}

RocCurve roc_curve(const std::vector<double>& scores, const std::vector<bool>& positive) {
  if (scores.size() != positive.size()) throw ValidationError("roc: scores/labels length mismatch");
  std::int64_t p = 0, q = 0;
  for (bool b : positive) (b ? p : q) += 1;
  if (p == 0 || q == 0) throw ValidationError("undefined AUC: need at least one positive and one negative");

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

  RocCurve c;
  const double inf = std::numeric_limits<double>::infinity();
  c.points.push_back({inf, 0.0, 0.0});
  std::int64_t tp = 0, fp = 0, twice_area = 0;
  for (std::size_t i = 0; i < order.size();) {
    const double thr = scores[order[i]];
    const std::int64_t tp0 = tp, fp0 = fp;
    while (i < order.size() && scores[order[i]] == thr) {
      (positive[order[i]] ? tp : fp) += 1;
      ++i;
    }
    twice_area += (fp - fp0) * (tp + tp0);
    c.points.push_back({thr, static_cast<double>(tp) / p, static_cast<double>(fp) / q});
  }
  c.points.push_back({-inf, 1.0, 1.0});
  c.auc = static_cast<double>(twice_area) / (2.0 * static_cast<double>(p) * static_cast<double>(q));
  return c;
}

RocCurve roc_auc(const ScoreMatrix& s, int class_index) {
  if (class_index < 0 || static_cast<std::size_t>(class_index) >= s.classes()) {
    throw ValidationError("class index out of range");
  }
  std::vector<double> col;
  std::vector<bool> pos;
  for (std::size_t i = 0; i < s.rows(); ++i) {
    col.push_back(s.scores[i].at(class_index));
    pos.push_back(s.true_labels[i] == class_index);
  }
  return roc_curve(col, pos);
}

RocCurve roc_auc_micro(const ScoreMatrix& s) {
  std::vector<double> col;
  std::vector<bool> pos;
  for (std::size_t i = 0; i < s.rows(); ++i) {
    for (std::size_t j = 0; j < s.classes(); ++j) {
      col.push_back(s.scores[i][j]);
      pos.push_back(s.true_labels[i] == static_cast<int>(j));
    }
  }
  return roc_curve(col, pos);
}

MetricReport evaluate(const ScoreMatrix& s, const std::string& auc_average) {
  if (auc_average != "macro" && auc_average != "micro") {
    throw ValidationError("auc average must be 'macro' or 'micro'");
  }
  MetricReport rep = classification_metrics(confusion_matrix(s), s.class_list);
  rep.auc_average = auc_average;
  double sum = 0;
  int defined = 0;
  for (std::size_t j = 0; j < s.classes(); ++j) {
    auto& cm = rep.per_class[j];
    try {
      cm.auc = roc_auc(s, static_cast<int>(j)).auc;
      cm.auc_defined = true;
      sum += cm.auc;
      ++defined;
    } catch (const ValidationError&) {
      rep.warnings.push_back(s.class_list[j] + " AUC undefined (single-class column)");
    }
  }
  rep.auc_micro = roc_auc_micro(s).auc;
  rep.auc_macro = defined > 0 ? sum / defined : 0.0;
  rep.auc_set = true;
  return rep;
}

namespace {

double parse_double(const std::string& s, std::size_t line_no) {
  double v = 0;
  const char* b = s.data();
  const char* e = b + s.size();
  if (b != e && *b == '+') ++b;
  auto [ptr, ec] = std::from_chars(b, e, v);
  if (ec != std::errc() || ptr != e) {
    throw ValidationError("scores row " + std::to_string(line_no) + ": cannot parse score '" + s + "'");
  }
  if (!std::isfinite(v)) throw ValidationError("scores row " + std::to_string(line_no) + ": non-finite score");
  return v;
}

std::string fmt9(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

}  // namespace

ScoreMatrix parse_scores(std::istream& in, const std::vector<std::string>& expected_classes) {
  std::string line;
  if (!std::getline(in, line)) throw ValidationError("empty scores file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  auto header = split_csv_line(line);
  if (header.size() < 2 || header[0] != "image_id" || header[1] != "true_label") {
    throw ValidationError("scores header must start with image_id,true_label");
  }
  ScoreMatrix s;
  s.class_list.assign(header.begin() + 2, header.end());
  if (!expected_classes.empty()) {
    if (s.class_list.size() != expected_classes.size()) {
      throw ValidationError("scores file has " + std::to_string(s.class_list.size()) + " score columns, expected " +
                            std::to_string(expected_classes.size()) + " for the class list");
    }
    if (s.class_list != expected_classes) throw ValidationError("scores columns do not match the class list order");
  }
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto f = split_csv_line(line);
    if (f.size() != header.size()) {
      throw ValidationError("scores row " + std::to_string(line_no) + ": expected " + std::to_string(header.size()) +
                            " fields, found " + std::to_string(f.size()));
    }
    int label = -1;
    for (std::size_t j = 0; j < s.class_list.size(); ++j) {
      if (s.class_list[j] == f[1]) label = static_cast<int>(j);
    }
    if (label < 0) throw ValidationError("scores row " + std::to_string(line_no) + ": unknown label '" + f[1] + "'");
    std::vector<double> row;
    for (std::size_t j = 2; j < f.size(); ++j) row.push_back(parse_double(f[j], line_no));
    s.image_ids.push_back(f[0]);
    s.true_labels.push_back(label);
    s.scores.push_back(std::move(row));
  }
  validate(s);
  return s;
}

ScoreMatrix load_scores(const std::filesystem::path& path, const std::vector<std::string>& expected_classes) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open scores file " + path.string());
  return parse_scores(in, expected_classes);
}

void write_scores(std::ostream& out, const ScoreMatrix& s) {
  out << "image_id,true_label";
  for (const auto& c : s.class_list) out << ',' << csv_escape(c);
  out << '\n';
  for (std::size_t i = 0; i < s.rows(); ++i) {
    out << csv_escape(s.image_ids.at(i)) << ',' << csv_escape(s.class_list.at(s.true_labels[i]));
    for (double v : s.scores[i]) out << ',' << fmt9(v);
    out << '\n';
  }
}

void write_scores(const ScoreMatrix& s, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write scores " + path.string());
  write_scores(out, s);
}

std::string report_to_json(const MetricReport& r, const std::string& extra_json_object) {
  auto ratios = [](const RatioSet& x) {
    return json{{"precision", x.precision},
                {"sensitivity", x.sensitivity},
                {"specificity", x.specificity},
                {"f1", x.f1}};
  };
  json j;
  j["n"] = r.n;
  j["class_list"] = r.class_list;
  j["accuracy"] = r.accuracy;
  j["sensitivity"] = r.micro.sensitivity;
  j["specificity"] = r.micro.specificity;
  j["precision"] = r.micro.precision;
  j["f1"] = r.micro.f1;
  j["averaging"] = "micro";
  if (r.auc_set) {
    j["auc"] = r.auc();
    j["auc_average"] = r.auc_average;
    j["auc_macro"] = r.auc_macro;
    j["auc_micro"] = r.auc_micro;
  }
  j["micro"] = ratios(r.micro);
  j["macro"] = ratios(r.macro);
  json per = json::array();
  for (std::size_t i = 0; i < r.per_class.size(); ++i) {
    const auto& cm = r.per_class[i];
    json c = ratios(cm.ratios);
    c["class"] = r.class_list[i];
    c["tp"] = cm.counts.tp;
    c["tn"] = cm.counts.tn;
    c["fp"] = cm.counts.fp;
    c["fn"] = cm.counts.fn;
    if (r.auc_set) c["auc"] = cm.auc_defined ? json(cm.auc) : json(nullptr);
    per.push_back(std::move(c));
  }
  j["per_class"] = per;
  j["confusion"] = r.confusion;
  j["notes"] = {"specificity = TN/(TN+FP) (one-vs-rest); the TN/(TN+TP) variant is not used",
                "argmax ties resolve to the lower class index"};
  j["warnings"] = r.warnings;
  const json extra = json::parse(extra_json_object);
  for (auto it = extra.begin(); it != extra.end(); ++it) j[it.key()] = it.value();
  return j.dump(2) + "\n";
}

std::string report_to_table(const MetricReport& r) {
  std::ostringstream out;
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%-12s %10s %12s %12s %10s %9s %7s\n", "", "Accuracy", "Sensitivity",
                "Specificity", "Precision", "F1 Score", "AUC");
  out << buf;
  auto row = [&](const std::string& name, double acc, const RatioSet& x, double auc, bool has_auc) {
    char b[256];
    char auc_s[16] = "-";
    if (has_auc) std::snprintf(auc_s, sizeof(auc_s), "%.3f", auc);
    std::snprintf(b, sizeof(b), "%-12s %10.3f %12.3f %12.3f %10.3f %9.3f %7s\n", name.c_str(), acc * 100.0,
                  x.sensitivity, x.specificity, x.precision, x.f1, auc_s);
    out << b;
  };
  row("micro", r.accuracy, r.micro, r.auc(), r.auc_set);
  row("macro", r.accuracy, r.macro, r.auc_macro, r.auc_set);
  out << "\nper class\n";
  for (std::size_t i = 0; i < r.per_class.size(); ++i) {
    const auto& cm = r.per_class[i];
    char b[256];
    char auc_s[16] = "-";
    if (r.auc_set && cm.auc_defined) std::snprintf(auc_s, sizeof(auc_s), "%.3f", cm.auc);
    std::snprintf(b, sizeof(b), "%-12s %10s %12.3f %12.3f %10.3f %9.3f %7s\n", r.class_list[i].c_str(), "",
                  cm.ratios.sensitivity, cm.ratios.specificity, cm.ratios.precision, cm.ratios.f1, auc_s);
    out << b;
  }
  out << "\nconfusion (rows = true, columns = predicted)\n";
  for (std::size_t i = 0; i < r.confusion.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "%-12s", r.class_list[i].c_str());
    out << buf;
    for (auto v : r.confusion[i]) {
      std::snprintf(buf, sizeof(buf), " %6lld", static_cast<long long>(v));
      out << buf;
    }
    out << '\n';
  }
  return out.str();
}

void write_roc_csv(const RocCurve& c, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << "threshold,fpr,tpr\n";
  for (const auto& p : c.points) out << fmt9(p.threshold) << ',' << fmt9(p.fpr) << ',' << fmt9(p.tpr) << '\n';
}

}  // namespace fermask
