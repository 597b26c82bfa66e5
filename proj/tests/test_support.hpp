#pragma once

// Shared fixtures and reference implementations for the test suites. The
// oracles are written independently of the library code they check: plain
// loops, a different linear solver, no shared helpers beyond data types.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "fermask/dataset.hpp"
#include "fermask/image.hpp"
#include "fermask/mask_synthesis.hpp"

namespace fermask::testing {

class TempDir {
 public:
  explicit TempDir(const std::string& tag = "t") {
    static int counter = 0;
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            ("fermask_" + tag + "_" + std::to_string(rd()) + "_" + std::to_string(counter++));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& s) const { return path_ / s; }

 private:
  std::filesystem::path path_;
};

inline std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void spit(const std::filesystem::path& p, const std::string& text) {
  std::ofstream(p, std::ios::binary) << text;
}

inline Image noise_image(int w, int h, std::uint32_t seed) {
  std::mt19937 gen(seed);
  Image img(w, h, 3);
  for (auto& b : img.data) b = static_cast<std::uint8_t>(gen() & 0xFF);
  return img;
}

// 8-unknown DLT with h33 fixed to 1, solved by column-pivoted QR on the raw
// (unnormalized) coordinates.
inline std::array<std::array<double, 3>, 3> dlt_oracle(const std::vector<Point2>& from,
                                                       const std::vector<Point2>& to) {
  const int n = static_cast<int>(from.size());
  Eigen::MatrixXd a(2 * n, 8);
  Eigen::VectorXd b(2 * n);
  for (int i = 0; i < n; ++i) {
    const double x = from[i].x, y = from[i].y, u = to[i].x, v = to[i].y;
    a.row(2 * i) << x, y, 1, 0, 0, 0, -u * x, -u * y;
    b(2 * i) = u;
    a.row(2 * i + 1) << 0, 0, 0, x, y, 1, -v * x, -v * y;
    b(2 * i + 1) = v;
  }
  const Eigen::VectorXd h = a.colPivHouseholderQr().solve(b);
  return {{{h(0), h(1), h(2)}, {h(3), h(4), h(5)}, {h(6), h(7), 1.0}}};
}

// Inverse of a 3x3 through the adjugate.
inline std::array<std::array<double, 3>, 3> adjugate_inverse(const std::array<std::array<double, 3>, 3>& m) {
  std::array<std::array<double, 3>, 3> r{};
  r[0][0] = m[1][1] * m[2][2] - m[1][2] * m[2][1];
  r[0][1] = m[0][2] * m[2][1] - m[0][1] * m[2][2];
  r[0][2] = m[0][1] * m[1][2] - m[0][2] * m[1][1];
  r[1][0] = m[1][2] * m[2][0] - m[1][0] * m[2][2];
  r[1][1] = m[0][0] * m[2][2] - m[0][2] * m[2][0];
  r[1][2] = m[0][2] * m[1][0] - m[0][0] * m[1][2];
  r[2][0] = m[1][0] * m[2][1] - m[1][1] * m[2][0];
  r[2][1] = m[0][1] * m[2][0] - m[0][0] * m[2][1];
  r[2][2] = m[0][0] * m[1][1] - m[0][1] * m[1][0];
  const double det = m[0][0] * r[0][0] + m[0][1] * r[1][0] + m[0][2] * r[2][0];
  for (auto& row : r) {
    for (auto& v : row) v /= det;
  }
  return r;
}

// Alpha of the template at continuous (x, y), bilinear over texel centers
// with border clamping; -1 outside the texture.
inline double template_alpha(const Image& tex, double x, double y) {
  if (!(x >= 0 && y >= 0 && x <= tex.width && y <= tex.height)) return -1;
  const double fx = x - 0.5, fy = y - 0.5;
  const int x0 = static_cast<int>(std::floor(fx)), y0 = static_cast<int>(std::floor(fy));
  const double ax = fx - x0, ay = fy - y0;
  auto a = [&](int xi, int yi) {
    xi = std::clamp(xi, 0, tex.width - 1);
    yi = std::clamp(yi, 0, tex.height - 1);
    return static_cast<double>(tex.data[(static_cast<std::size_t>(yi) * tex.width + xi) * 4 + 3]);
  };
  return (1 - ax) * (1 - ay) * a(x0, y0) + ax * (1 - ay) * a(x0 + 1, y0) + (1 - ax) * ay * a(x0, y0 + 1) +
         ax * ay * a(x0 + 1, y0 + 1);
}

struct CoverageOracle {
  long long support = 0;       // pixels with sampled alpha > 0 anywhere in the frame
  long long inside_box = 0;    // of those, pixel centers inside the face box
  long long box_area = 0;
  std::vector<std::uint8_t> in_support;  // per pixel, row-major
  double fraction() const { return box_area > 0 ? static_cast<double>(inside_box) / box_area : 0; }
};

// Visits every output pixel, maps its center through H^-1 into the template
// and checks the sampled alpha.
inline CoverageOracle coverage_oracle(int width, int height, const MaskTemplate& t,
                                      const std::array<std::array<double, 3>, 3>& h, const Box& face) {
  const auto inv = adjugate_inverse(h);
  CoverageOracle o;
  o.in_support.assign(static_cast<std::size_t>(width) * height, 0);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      const double px = x + 0.5, py = y + 0.5;
      const bool in_box = px >= face.x0 && px <= face.x1 && py >= face.y0 && py <= face.y1;
      if (in_box) ++o.box_area;
      const double w = inv[2][0] * px + inv[2][1] * py + inv[2][2];
      if (w <= 0) continue;
      const double u = (inv[0][0] * px + inv[0][1] * py + inv[0][2]) / w;
      const double v = (inv[1][0] * px + inv[1][1] * py + inv[1][2]) / w;
      if (template_alpha(t.texture, u, v) > 0) {
        ++o.support;
        o.in_support[static_cast<std::size_t>(y) * width + x] = 1;
        if (in_box) ++o.inside_box;
      }
    }
  }
  return o;
}

// Tie-corrected Mann-Whitney statistic by exhaustive pair counting.
inline double mann_whitney_oracle(const std::vector<double>& scores, const std::vector<bool>& positive) {
  long long wins2 = 0, pairs = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (!positive[i]) continue;
    for (std::size_t j = 0; j < scores.size(); ++j) {
      if (positive[j]) continue;
      ++pairs;
      if (scores[i] > scores[j]) wins2 += 2;
      else if (scores[i] == scores[j]) wins2 += 1;
    }
  }
  return static_cast<double>(wins2) / static_cast<double>(2 * pairs);
}

// Weighted ridge with an unpenalized intercept, solved by Gauss-Jordan
// elimination with partial pivoting. Returns [intercept, b_1..b_p].
inline std::vector<double> ridge_oracle(const std::vector<std::vector<std::uint8_t>>& z,
                                        const std::vector<double>& y, const std::vector<double>& w, double lambda) {
  const std::size_t p = z.front().size(), m = p + 1;
  std::vector<std::vector<double>> a(m, std::vector<double>(m + 1, 0.0));
  for (std::size_t s = 0; s < z.size(); ++s) {
    std::vector<double> x(m, 1.0);
    for (std::size_t j = 0; j < p; ++j) x[j + 1] = z[s][j];
    for (std::size_t r = 0; r < m; ++r) {
      for (std::size_t c = 0; c < m; ++c) a[r][c] += w[s] * x[r] * x[c];
      a[r][m] += w[s] * x[r] * y[s];
    }
  }
  for (std::size_t j = 1; j < m; ++j) a[j][j] += lambda;
  for (std::size_t col = 0; col < m; ++col) {
    std::size_t piv = col;
    for (std::size_t r = col + 1; r < m; ++r) {
      if (std::abs(a[r][col]) > std::abs(a[piv][col])) piv = r;
    }
    std::swap(a[col], a[piv]);
    for (std::size_t r = 0; r < m; ++r) {
      if (r == col) continue;
      const double f = a[r][col] / a[col][col];
      for (std::size_t c = col; c <= m; ++c) a[r][c] -= f * a[col][c];
    }
  }
  std::vector<double> out(m);
  for (std::size_t r = 0; r < m; ++r) out[r] = a[r][m] / a[r][r];
  return out;
}

// K x K confusion with `correct` on the diagonal out of `total`, both spread
// round-robin so every class has rows and the errors land on varied cells.
inline std::vector<std::vector<std::int64_t>> confusion_with_accuracy(int k, std::int64_t correct,
                                                                      std::int64_t total) {
  std::vector<std::vector<std::int64_t>> c(k, std::vector<std::int64_t>(k, 0));
  for (std::int64_t i = 0; i < correct; ++i) ++c[i % k][i % k];
  for (std::int64_t i = 0; i < total - correct; ++i) {
    const int t = static_cast<int>(i % k);
    const int p = static_cast<int>((t + 1 + (i / k) % (k - 1)) % k);
    ++c[t][p];
  }
  return c;
}

}  // namespace fermask::testing
