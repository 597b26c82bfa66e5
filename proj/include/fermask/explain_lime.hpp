#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "fermask/image.hpp"
#include "fermask/predictor.hpp"

namespace fermask {

// Row-major grid; border cells may be smaller.
struct Segmentation {
  int width = 0;
  int height = 0;
  int cell_size = 0;
  int cols = 0;
  int rows = 0;

  int count() const { return cols * rows; }
  int segment_of(int x, int y) const { return (y / cell_size) * cols + x / cell_size; }
  // Pixel rectangle [x0, x1) x [y0, y1) of segment s.
  void bounds(int s, int* x0, int* y0, int* x1, int* y1) const;
};

Segmentation segment_image(const Image& image, int cell_size);

// Off segments (z[s] == 0) are replaced by `fill`.
Image perturb(const Image& image, const Segmentation& seg, const std::vector<std::uint8_t>& z,
              const std::array<std::uint8_t, 3>& fill);
std::array<std::uint8_t, 3> mean_color(const Image& image);

struct LimeConfig {
  int n_samples = 1000;
  double kernel_width = 0.25;
  double ridge = 1e-3;
  std::uint64_t seed = 0;
  std::size_t batch_size = 64;
};

struct Explanation {
  int target_class = 0;
  std::vector<double> weights;
  double intercept = 0;
  int sample_count = 0;
  double kernel_width = 0;
  double ridge = 0;
  std::uint64_t seed = 0;
  // The sampled design, kept for audit and for re-solving outside this module.
  std::vector<std::vector<std::uint8_t>> samples;
  std::vector<double> responses;
  std::vector<double> sample_weights;
};

// Draws n_samples binary masks (sample 0 is all-ones, the rest Bernoulli(1/2)
// per segment), scores each perturbation, weights it by
// exp(-D^2 / width^2) with D the fraction of disabled segments, and solves
// min sum w (y - b0 - b.z)^2 + ridge |b|^2 with the intercept unpenalised.
Explanation fit_explanation(const Image& image, const Segmentation& seg, Predictor& predictor, int target_class,
                            const LimeConfig& cfg);

struct HeatmapOptions {
  int top_k = 5;
  double max_alpha = 0.6;
  bool show_negative = false;  // tint the most negative segment red
};

// Per-segment tint alpha: top_k positive-weight segments get
// max_alpha * w / max(w); all others 0 (or the red tint for the most negative
// one, reported as a negative alpha).
std::vector<double> heatmap_alphas(const Explanation& expl, const HeatmapOptions& opts);
Image render_heatmap(const Image& image, const Segmentation& seg, const Explanation& expl,
                     const HeatmapOptions& opts = {});

std::string explanation_to_json(const Explanation& e, const std::string& target_name = "");

}  // namespace fermask
