// Acceptance suite: one PASS/FAIL line per criterion, each checked at its
// stated tolerance and time budget. Exit status is non-zero if any fails.

#include <sys/wait.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fermask/explain_lime.hpp"
#include "fermask/mask_synthesis.hpp"
#include "fermask/metrics.hpp"
#include "fermask/pipeline.hpp"
#include "fermask/predictor.hpp"
#include "fermask/protocol_splits.hpp"
#include "fermask/synthetic.hpp"
#include "test_support.hpp"

using namespace fermask;
namespace fs = std::filesystem;
namespace ft = fermask::testing;

namespace {

struct Outcome {
  bool ok = true;
  std::string detail;
};

// Collects the first few failure messages; later ones are only counted.
class Checker {
 public:
  void expect(bool cond, const std::string& what) {
    if (cond) return;
    if (++failures_ <= 3) notes_ += (notes_.empty() ? "" : "; ") + what;
  }
  Outcome outcome(const std::string& summary) const {
    if (failures_ == 0) return {true, summary};
    return {false, std::to_string(failures_) + " failure(s): " + notes_};
  }

 private:
  int failures_ = 0;
  std::string notes_;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), f, v);
  return buf;
}

// ---------------------------------------------------------------------------

Outcome metric_identities() {
  struct Case {
    int k;
    std::int64_t correct, total;
    double accuracy_pct, specificity;
  };
  const std::vector<Case> cases = {{7, 59, 69, 85.507, 0.976},  {7, 270, 276, 97.826, 0.996},
                                   {7, 179, 256, 69.922, 0.950}, {7, 190, 256, 74.219, 0.957},
                                   {5, 70, 95, 73.684, 0.934},   {5, 56, 94, 59.574, 0.899}};
  Checker c;
  double worst = 0;
  for (const auto& cs : cases) {
    const MetricReport r = classification_metrics(ft::confusion_with_accuracy(cs.k, cs.correct, cs.total));
    const std::string tag = fmt("%.3f", cs.accuracy_pct);
    c.expect(std::abs(r.accuracy * 100 - cs.accuracy_pct) < 5e-4, tag + " accuracy " + fmt("%.6f", r.accuracy));
    c.expect(r.micro.sensitivity == r.accuracy, tag + " sensitivity != accuracy");
    c.expect(r.micro.precision == r.accuracy, tag + " precision != accuracy");
    c.expect(r.micro.f1 == r.accuracy, tag + " f1 != accuracy");
    const double err = std::abs(r.micro.specificity - cs.specificity);
    worst = std::max(worst, err);
    c.expect(err <= 5e-4, tag + " specificity " + fmt("%.5f", r.micro.specificity));
  }
  return c.outcome("6 cases, max specificity deviation " + fmt("%.2e", worst));
}

Outcome auc_oracle() {
  std::mt19937_64 gen(20240611);
  Checker c;
  int sets = 0;
  while (sets < 500) {
    const int n = 2 + static_cast<int>(gen() % 19);
    std::vector<double> s(n);
    std::vector<bool> pos(n);
    const int grid = 1 + static_cast<int>(gen() % 12);  // small grids force ties
    for (int i = 0; i < n; ++i) {
      s[i] = static_cast<double>(gen() % grid) / grid;
      pos[i] = (gen() % 3) == 0;
    }
    if (std::count(pos.begin(), pos.end(), true) == 0 || std::count(pos.begin(), pos.end(), false) == 0) continue;
    ++sets;
    const double got = roc_curve(s, pos).auc, want = ft::mann_whitney_oracle(s, pos);
    c.expect(got == want, "set " + std::to_string(sets) + ": " + fmt("%.17g", got) + " vs " + fmt("%.17g", want));
  }
  return c.outcome("500 sets, exact equality");
}

Outcome homography_recovery() {
  const MaskTemplate t = builtin_template(MaskType::kSurgical);
  std::vector<Point2> from;
  for (const auto& a : t.anchors) from.push_back(a.position);
  std::mt19937_64 gen(7);
  std::uniform_real_distribution<double> u(-1, 1);
  Checker c;
  double worst = 0;
  int made = 0;
  while (made < 1000) {
    const double th = u(gen) * 0.6, s = 0.4 + 0.8 * (u(gen) + 1) / 2;
    std::array<std::array<double, 3>, 3> h = {{{s * std::cos(th) + 0.1 * u(gen), -s * std::sin(th) + 0.1 * u(gen),
                                                150 + 100 * u(gen)},
                                               {s * std::sin(th) + 0.1 * u(gen), s * std::cos(th) + 0.1 * u(gen),
                                                150 + 100 * u(gen)},
                                               {5e-4 * u(gen), 5e-4 * u(gen), 1}}};
    std::vector<Point2> to;
    bool front = true;
    for (const auto& p : from) {
      const double w = h[2][0] * p.x + h[2][1] * p.y + h[2][2];
      front = front && w > 0.2;
      to.push_back({(h[0][0] * p.x + h[0][1] * p.y + h[0][2]) / w, (h[1][0] * p.x + h[1][1] * p.y + h[1][2]) / w});
    }
    if (!front) continue;
    ++made;
    try {
      const Homography got = fit_homography(from, to).homography;
      double e = 0;
      for (int r = 0; r < 3; ++r)
        for (int k = 0; k < 3; ++k) e = std::max(e, std::abs(got.h[r][k] - h[r][k]));
      worst = std::max(worst, e);
      c.expect(e < 1e-6, "homography " + std::to_string(made) + " error " + fmt("%.2e", e));
    } catch (const std::exception& ex) {
      c.expect(false, "homography " + std::to_string(made) + " threw: " + ex.what());
    }
  }
  return c.outcome("1000 homographies, max entry error " + fmt("%.2e", worst));
}

Outcome mask_locality() {
  std::mt19937_64 gen(99);
  std::uniform_real_distribution<double> u(0, 1);
  Checker c;
  double worst = 0;
  const int w = 160, h = 160;
  for (int face = 0; face < 50; ++face) {
    const LandmarkSet lm =
        place_face(60 + 40 * u(gen), 60 + 40 * u(gen), 35 + 20 * u(gen), -25 + 50 * u(gen), "f" + std::to_string(face));
    const Image img = render_synthetic_face(w, h, lm, face);
    for (MaskType mt : all_mask_types()) {
      const MaskTemplate t = builtin_template(mt);
      const Homography hm = fit_mask_warp(t, lm).homography;
      const MaskedImage out = apply_mask(img, t, hm, lm);
      const auto oracle = ft::coverage_oracle(w, h, t, hm.h, lm.bounds());
      const double err = std::abs(out.coverage_fraction - oracle.fraction());
      worst = std::max(worst, err);
      c.expect(err <= 0.01, "face " + std::to_string(face) + " " + std::string(to_string(mt)) + " coverage off by " +
                                fmt("%.4f", err));
      long long changed_outside = 0;
      for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
          if (oracle.in_support[static_cast<std::size_t>(y) * w + x]) continue;
          if (std::memcmp(out.pixels.at(x, y), img.at(x, y), 3) != 0) ++changed_outside;
        }
      }
      c.expect(changed_outside == 0, "face " + std::to_string(face) + " " + std::string(to_string(mt)) + ": " +
                                         std::to_string(changed_outside) + " pixels changed outside the support");
    }
  }
  return c.outcome("200 composites, max coverage deviation " + fmt("%.4f", worst));
}

Outcome multi_mask_expansion() {
  ft::TempDir dir("accept_expand");
  SyntheticDatasetSpec spec;
  spec.image_size = 64;
  const DatasetManifest orig = write_synthetic_dataset(dir / "orig", spec);
  Checker c;
  c.expect(orig.records.size() == 213, "synthetic originals: " + std::to_string(orig.records.size()));
  ExpandOptions opts;
  for (MaskType t : all_mask_types()) opts.templates.emplace(t, builtin_template(t));
  opts.out_dir = dir / "masked";
  const DatasetManifest m = expand_with_masks(orig, all_mask_types(), opts).manifest;
  c.expect(m.records.size() == 852, "expanded records: " + std::to_string(m.records.size()));
  c.expect(validate_manifest(m, true).ok(), "expanded manifest has violations");

  const SplitPlan pi = make_split(m, Protocol::kJaffePi);
  std::map<std::string, const ImageRecord*> by_id;
  for (const auto& r : m.records) by_id.emplace(r.image_id, &r);
  std::set<std::string> test_subjects, train_subjects;
  for (const auto& id : pi.test_ids) test_subjects.insert(by_id.at(id)->subject_id);
  for (const auto& id : pi.train_ids) train_subjects.insert(by_id.at(id)->subject_id);
  c.expect(test_subjects == std::set<std::string>{"KM", "NM", "YM"}, "test subjects differ from KM, NM, YM");
  c.expect(!train_subjects.contains("KM") && !train_subjects.contains("NM") && !train_subjects.contains("YM"),
           "a held-out subject appears in train");

  std::map<std::string, std::vector<std::string>> groups;
  for (const auto& r : m.records) groups[r.source_image_id].push_back(r.image_id);
  std::mt19937_64 gen(5);
  int clean = 0, caught = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    SplitPlan plan;
    std::vector<std::string> sources;
    for (const auto& [sid, ids] : groups) {
      sources.push_back(sid);
      auto& side = (gen() & 1) ? plan.test_ids : plan.train_ids;
      side.insert(side.end(), ids.begin(), ids.end());
    }
    clean += check_leakage(m, plan).empty();

    // Move one member of a random group to the opposite side.
    const std::string& victim_src = sources[gen() % sources.size()];
    const std::string victim = groups.at(victim_src)[gen() % 4];
    auto in_train = std::find(plan.train_ids.begin(), plan.train_ids.end(), victim);
    if (in_train != plan.train_ids.end()) {
      plan.train_ids.erase(in_train);
      plan.test_ids.push_back(victim);
    } else {
      plan.test_ids.erase(std::find(plan.test_ids.begin(), plan.test_ids.end(), victim));
      plan.train_ids.push_back(victim);
    }
    const auto leaked = check_leakage(m, plan);
    caught += std::find(leaked.begin(), leaked.end(), victim_src) != leaked.end();
  }
  c.expect(clean == 1000, std::to_string(1000 - clean) + " group-respecting splits reported leakage");
  c.expect(caught == 1000, std::to_string(1000 - caught) + " leaked plans went undetected");
  return c.outcome("213 -> 852 records; held-out {KM, NM, YM}; 1000/1000 clean, 1000/1000 leaks caught");
}

Outcome lime_recovery() {
  ft::TempDir dir("accept_lime");
  const Image img = ft::noise_image(32, 32, 17);
  write_png(img, dir / "ref.png");
  const Segmentation seg = segment_image(img, 8);
  Checker c;
  c.expect(seg.count() == 16, "segment count " + std::to_string(seg.count()));

  const std::vector<double> beta = {0.12, -0.05, 0.0,  0.3,  0.07, -0.2, 0.04, 0.0,
                                    0.15, 0.02,  -0.1, 0.09, 0.0,  0.25, -0.03, 0.06};
  std::string beta_csv;
  for (double b : beta) beta_csv += (beta_csv.empty() ? "" : ",") + fmt("%.17g", b);
  const std::string base = std::string("'") + FERMASK_PREDICTOR_DOUBLE + "' --mode linear --reference '" +
                           (dir / "ref.png").string() + "' --cell 8 --target 1 --classes neg,pos";

  LimeConfig cfg;  // n = 1000, sigma = 0.25, lambda = 1e-3
  cfg.batch_size = 100;
  double worst = 0;
  {
    CommandOptions o;
    o.command = base + " --intercept 0.1 --beta " + beta_csv;
    o.batch_size = 100;
    CommandPredictor p(o);
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
      cfg.seed = seed;
      const Explanation e = fit_explanation(img, seg, p, 1, cfg);
      for (int i = 0; i < 16; ++i) worst = std::max(worst, std::abs(e.weights[i] - beta[i]));
    }
    c.expect(worst < 1e-2, "planted coefficients off by " + fmt("%.2e", worst));
  }

  int top1 = 0;
  {
    std::vector<double> single(16, 0.0);
    single[5] = 0.4;
    std::string single_csv;
    for (double b : single) single_csv += (single_csv.empty() ? "" : ",") + fmt("%g", b);
    CommandOptions o;
    o.command = base + " --intercept 0.5 --beta " + single_csv;
    o.batch_size = 100;
    CommandPredictor p(o);
    for (std::uint64_t seed = 1; seed <= 100; ++seed) {
      cfg.seed = seed;
      const Explanation e = fit_explanation(img, seg, p, 1, cfg);
      int best = 0;
      for (int i = 1; i < 16; ++i) {
        if (std::abs(e.weights[i]) > std::abs(e.weights[best])) best = i;
      }
      top1 += best == 5;
    }
    c.expect(top1 == 100, "segment 5 top-1 in " + std::to_string(top1) + "/100 seeds");
  }
  return c.outcome("max |w - beta| " + fmt("%.2e", worst) + " over 5 seeds; top-1 " + std::to_string(top1) +
                   "/100 seeds");
}

int run_cli(const std::string& args, const fs::path& cwd) {
  const std::string cmd = "cd '" + cwd.string() + "' && '" + FERMASK_CLI + "' " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

Outcome pipeline_determinism() {
  ft::TempDir dir("accept_det");
  SyntheticDatasetSpec spec;
  spec.image_size = 72;
  write_synthetic_dataset(dir / "data", spec);
  Checker c;
  const std::string classes = "anger,disgust,fear,happiness,neutral,sadness,surprise";
  for (const std::string out : {"run_a", "run_b"}) {
    const nlohmann::json cfg = {
        {"profile", "jaffe-like"},
        {"manifest", "data/manifest.csv"},
        {"out", out},
        {"seed", 2024},
        {"crop", {{"size", 64}}},
        {"augment", {{"copies", 1}}},
        {"protocol", "jaffe_pi"},
        {"predictor", {{"command", std::string("'") + FERMASK_PREDICTOR_DOUBLE + "' --mode checksum --classes " + classes}}},
        {"explain", {{"class", "happiness"}, {"count", 2}, {"samples", 200}, {"cell", 16}}}};
    ft::spit(dir / (out + ".json"), cfg.dump(2));
    const int code = run_cli("pipeline --config " + out + ".json", dir.path());
    c.expect(code == 0, out + " exited " + std::to_string(code));
  }
  std::size_t compared = 0;
  auto same = [&](const std::string& rel) {
    const fs::path a = dir / ("run_a/" + rel), b = dir / ("run_b/" + rel);
    c.expect(fs::exists(a) && fs::exists(b), rel + " missing");
    c.expect(ft::slurp(a) == ft::slurp(b), rel + " differs");
    ++compared;
  };
  for (const std::string stage : {"masked", "cropped", "augmented"}) same(stage + "/manifest.csv");
  same("plan.json");
  same("eval/report.json");
  same("eval/report.txt");
  same("eval/scores.csv");
  if (fs::exists(dir / "run_a/explain")) {
    for (const auto& f : fs::directory_iterator(dir / "run_a/explain")) same("explain/" + f.path().filename().string());
  }
  same("provenance.json");
  return c.outcome(std::to_string(compared) + " artifacts byte-identical across two runs");
}

}  // namespace

int main() {
  struct Criterion {
    const char* name;
    double budget_s;  // <= 0 means no time limit
    std::function<Outcome()> run;
  };
  const std::vector<Criterion> criteria = {
      {"metric identities", 1.0, metric_identities},
      {"AUC oracle equivalence", 10.0, auc_oracle},
      {"homography recovery", 5.0, homography_recovery},
      {"mask locality", 0, mask_locality},
      {"multi-mask expansion", 0, multi_mask_expansion},
      {"LIME recovery", 30.0, lime_recovery},
      {"pipeline determinism", 0, pipeline_determinism},
  };
  int failed = 0;
  for (const auto& c : criteria) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (c.budget_s > 0 && secs >= c.budget_s) {
      o.ok = false;
      o.detail += "; over the " + fmt("%.0f", c.budget_s) + " s budget";
    }
    std::printf("%s  %-24s %7.2fs  %s\n", o.ok ? "PASS" : "FAIL", c.name, secs, o.detail.c_str());
    std::fflush(stdout);
    failed += !o.ok;
  }
  std::printf("%d/%zu criteria passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
  return failed == 0 ? 0 : 1;
}
