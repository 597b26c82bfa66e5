#include "fermask/explain_lime.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numeric>

#include <nlohmann/json.hpp>

#include "fermask/error.hpp"
#include "fermask/rng.hpp"

namespace fermask {

void Segmentation::bounds(int s, int* x0, int* y0, int* x1, int* y1) const {
  const int r = s / cols, c = s % cols;
  *x0 = c * cell_size;
  *y0 = r * cell_size;
  *x1 = std::min(width, *x0 + cell_size);
  *y1 = std::min(height, *y0 + cell_size);
}

Segmentation segment_image(const Image& image, int cell_size) {
  if (cell_size < 4) throw ValidationError("cell size must be at least 4");
  if (image.empty()) throw ValidationError("cannot segment an empty image");
  if (cell_size > image.width || cell_size > image.height) {
    throw ValidationError("cell size " + std::to_string(cell_size) + " exceeds the image");
  }
  Segmentation s;
  s.width = image.width;
  s.height = image.height;
  s.cell_size = cell_size;
  s.cols = (image.width + cell_size - 1) / cell_size;
  s.rows = (image.height + cell_size - 1) / cell_size;
  return s;
}

std::array<std::uint8_t, 3> mean_color(const Image& image) {
  std::array<std::uint64_t, 3> sum{};
  for (std::size_t i = 0; i < image.pixel_count(); ++i) {
    for (int c = 0; c < 3; ++c) sum[c] += image.data[i * image.channels + c];
  }
  std::array<std::uint8_t, 3> out{};
  const std::uint64_t n = std::max<std::uint64_t>(1, image.pixel_count());
  for (int c = 0; c < 3; ++c) out[c] = static_cast<std::uint8_t>((sum[c] + n / 2) / n);
  return out;
}

Image perturb(const Image& image, const Segmentation& seg, const std::vector<std::uint8_t>& z,
              const std::array<std::uint8_t, 3>& fill) {
  if (static_cast<int>(z.size()) != seg.count()) throw ValidationError("perturbation length mismatch");
  Image out = to_rgb(image);
  for (int s = 0; s < seg.count(); ++s) {
    if (z[s]) continue;
    int x0, y0, x1, y1;
    seg.bounds(s, &x0, &y0, &x1, &y1);
    for (int y = y0; y < y1; ++y) {
      for (int x = x0; x < x1; ++x) std::copy(fill.begin(), fill.end(), out.at(x, y));
    }
  }
  return out;
}

Explanation fit_explanation(const Image& image, const Segmentation& seg, Predictor& predictor, int target_class,
                            const LimeConfig& cfg) {
  const int s_count = seg.count();
  if (s_count < 2) throw ValidationError("explanation needs at least 2 segments");
  if (cfg.n_samples < 2) throw ValidationError("explanation needs at least 2 samples");
  if (!(cfg.kernel_width > 0)) throw ValidationError("kernel width must be positive");
  if (!(cfg.ridge >= 0)) throw ValidationError("ridge strength must be >= 0");
  if (target_class < 0 || static_cast<std::size_t>(target_class) >= predictor.class_list().size()) {
    throw ValidationError("target class out of range");
  }
  if (image.width != seg.width || image.height != seg.height) throw ValidationError("segmentation/image mismatch");

  Explanation e;
  e.target_class = target_class;
  e.sample_count = cfg.n_samples;
  e.kernel_width = cfg.kernel_width;
  e.ridge = cfg.ridge;
  e.seed = cfg.seed;

  CounterRng rng(cfg.seed, "lime");
  e.samples.assign(cfg.n_samples, std::vector<std::uint8_t>(s_count, 1));
  for (int i = 1; i < cfg.n_samples; ++i) {
    for (int s = 0; s < s_count; ++s) e.samples[i][s] = rng.bernoulli_half() ? 1 : 0;
  }

  const auto fill = mean_color(image);
  const std::size_t batch = std::max<std::size_t>(1, cfg.batch_size);
  e.responses.reserve(cfg.n_samples);
  for (std::size_t start = 0; start < e.samples.size(); start += batch) {
    const std::size_t end = std::min(e.samples.size(), start + batch);
    std::vector<Image> imgs;
    imgs.reserve(end - start);
    for (std::size_t i = start; i < end; ++i) imgs.push_back(perturb(image, seg, e.samples[i], fill));
    const auto preds = predictor.predict_batch(imgs);
    if (preds.size() != imgs.size()) throw Error("predictor returned the wrong number of results");
    for (std::size_t i = 0; i < preds.size(); ++i) {
      if (!preds[i].ok()) throw Error("predictor failed on perturbation " + std::to_string(start + i) + ": " +
                                      preds[i].error);
      e.responses.push_back(preds[i].scores.at(target_class));
    }
  }

  // Normal equations over [1, z]; the intercept row is not penalised.
  const int p = s_count + 1;
  Eigen::MatrixXd ata = Eigen::MatrixXd::Zero(p, p);
  Eigen::VectorXd atb = Eigen::VectorXd::Zero(p);
  Eigen::VectorXd row(p);
  e.sample_weights.reserve(cfg.n_samples);
  for (int i = 0; i < cfg.n_samples; ++i) {
    int off = 0;
    row(0) = 1.0;
    for (int s = 0; s < s_count; ++s) {
      row(s + 1) = e.samples[i][s];
      off += e.samples[i][s] ? 0 : 1;
    }
    const double d = static_cast<double>(off) / s_count;
    const double w = std::exp(-(d * d) / (cfg.kernel_width * cfg.kernel_width));
    e.sample_weights.push_back(w);
    ata.noalias() += w * row * row.transpose();
    atb.noalias() += w * e.responses[i] * row;
  }
  for (int s = 1; s < p; ++s) ata(s, s) += cfg.ridge;

  const Eigen::LDLT<Eigen::MatrixXd> ldlt(ata);
  if (ldlt.info() != Eigen::Success || !ldlt.isPositive()) {
    throw Error("surrogate system is rank deficient");
  }
  const Eigen::VectorXd beta = ldlt.solve(atb);
  if (!beta.allFinite()) throw Error("surrogate system is rank deficient");
  e.intercept = beta(0);
  e.weights.assign(beta.data() + 1, beta.data() + p);
  return e;
}

std::vector<double> heatmap_alphas(const Explanation& expl, const HeatmapOptions& opts) {
  const auto& w = expl.weights;
  std::vector<double> alpha(w.size(), 0.0);
  if (opts.top_k < 0 || static_cast<std::size_t>(opts.top_k) > w.size()) {
    throw ValidationError("top_k exceeds the segment count");
  }
  std::vector<std::size_t> order(w.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return w[a] > w[b]; });
  std::vector<std::size_t> chosen;
  for (std::size_t i = 0; i < order.size() && chosen.size() < static_cast<std::size_t>(opts.top_k); ++i) {
    if (w[order[i]] > 0) chosen.push_back(order[i]);
  }
  if (!chosen.empty()) {
    const double top = w[chosen.front()];
    for (std::size_t s : chosen) alpha[s] = opts.max_alpha * w[s] / top;
  }
  if (opts.show_negative && !order.empty() && w[order.back()] < 0) alpha[order.back()] = -opts.max_alpha;
  return alpha;
}

Image render_heatmap(const Image& image, const Segmentation& seg, const Explanation& expl,
                     const HeatmapOptions& opts) {
  if (static_cast<int>(expl.weights.size()) != seg.count()) throw ValidationError("weights/segments mismatch");
  const auto alpha = heatmap_alphas(expl, opts);
  Image out = to_rgb(image);
  for (int s = 0; s < seg.count(); ++s) {
    if (alpha[s] == 0) continue;
    const double a = std::abs(alpha[s]);
    const std::array<double, 3> tint = alpha[s] > 0 ? std::array<double, 3>{0, 255, 0}
                                                    : std::array<double, 3>{255, 0, 0};
    int x0, y0, x1, y1;
    seg.bounds(s, &x0, &y0, &x1, &y1);
    for (int y = y0; y < y1; ++y) {
      for (int x = x0; x < x1; ++x) {
        std::uint8_t* p = out.at(x, y);
        for (int c = 0; c < 3; ++c) {
          p[c] = static_cast<std::uint8_t>(std::clamp(std::lround((1 - a) * p[c] + a * tint[c]), 0L, 255L));
        }
      }
    }
  }
  return out;
}

std::string explanation_to_json(const Explanation& e, const std::string& target_name) {
  nlohmann::json j = {{"target_class", e.target_class},
                      {"weights", e.weights},
                      {"intercept", e.intercept},
                      {"sigma", e.kernel_width},
                      {"lambda", e.ridge},
                      {"n_samples", e.sample_count},
                      {"seed", e.seed}};
  if (!target_name.empty()) j["target_class_name"] = target_name;
  return j.dump(2) + "\n";
}

}  // namespace fermask
