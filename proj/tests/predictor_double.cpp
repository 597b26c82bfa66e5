// Scriptable stand-in for an external classifier. Speaks the line-delimited
// JSON predictor protocol on stdin/stdout.
//
//   --mode uniform        every class gets 1/K
//   --mode checksum       score k = ((byte sum + 7919 k) mod 1000) / 1000
//   --mode linear         target score = intercept + sum beta_i z_i, where z_i
//                         is 1 when grid cell i matches --reference exactly;
//                         other classes share the remainder of 1
//   --mode exit           quit before the handshake
//   --mode bad-handshake  announce an unexpected class list
//   --mode error-odd      per-id error for every odd-numbered request
//   --mode short          return K-1 scores
//   --mode slow           never answer requests
//   --mode close          answer nothing, exit on the first request

#include <chrono>
#include <cstdint>
#include <iostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "fermask/dataset.hpp"
#include "fermask/image.hpp"
#include "fermask/predictor.hpp"

using json = nlohmann::json;
using fermask::Image;

namespace {

struct Args {
  std::string mode = "uniform";
  std::vector<std::string> classes = {"neg", "pos"};
  std::string reference;
  int cell = 16;
  std::vector<double> beta;
  double intercept = 0.1;
  int target = 1;
};

std::vector<double> parse_doubles(const std::string& csv) {
  std::vector<double> out;
  for (const auto& f : fermask::split_csv_line(csv)) out.push_back(std::stod(f));
  return out;
}

Args parse_args(int argc, char** argv) {
  Args a;
  for (int i = 1; i + 1 < argc; i += 2) {
    const std::string k = argv[i], v = argv[i + 1];
    if (k == "--mode") a.mode = v;
    else if (k == "--classes") a.classes = fermask::split_csv_line(v);
    else if (k == "--reference") a.reference = v;
    else if (k == "--cell") a.cell = std::stoi(v);
    else if (k == "--beta") a.beta = parse_doubles(v);
    else if (k == "--intercept") a.intercept = std::stod(v);
    else if (k == "--target") a.target = std::stoi(v);
    else throw std::runtime_error("unknown flag " + k);
  }
  return a;
}

// Cells in row-major order, matching the toolkit's grid segmentation.
std::vector<int> matching_cells(const Image& img, const Image& ref, int cell) {
  const int cols = (ref.width + cell - 1) / cell, rows = (ref.height + cell - 1) / cell;
  std::vector<int> z(static_cast<std::size_t>(cols) * rows, 1);
  for (int y = 0; y < ref.height; ++y) {
    for (int x = 0; x < ref.width; ++x) {
      const std::uint8_t* a = img.at(x, y);
      const std::uint8_t* b = ref.at(x, y);
      if (a[0] != b[0] || a[1] != b[1] || a[2] != b[2]) z[(y / cell) * cols + x / cell] = 0;
    }
  }
  return z;
}

}  // namespace

int main(int argc, char** argv) {
  std::ios::sync_with_stdio(false);
  const Args a = parse_args(argc, argv);
  if (a.mode == "exit") return 3;

  Image ref;
  if (!a.reference.empty()) ref = fermask::to_rgb(fermask::read_png(a.reference));

  const std::size_t k = a.classes.size();
  if (a.mode == "bad-handshake") {
    std::cout << json{{"classes", {"not", "these"}}}.dump() << std::endl;
  } else {
    std::cout << json{{"classes", a.classes}}.dump() << std::endl;
  }

  std::string line;
  std::uint64_t seen = 0;
  while (std::getline(std::cin, line)) {
    if (line.empty()) continue;
    if (a.mode == "close") return 0;
    if (a.mode == "slow") {
      std::this_thread::sleep_for(std::chrono::hours(1));
      continue;
    }
    const json req = json::parse(line);
    const std::string id = req.at("id").get<std::string>();
    json resp = {{"id", id}};
    ++seen;
    if (a.mode == "error-odd" && seen % 2 == 1) {
      resp["error"] = "refusing request " + id;
      std::cout << resp.dump() << '\n' << std::flush;
      continue;
    }
    Image img;
    if (req.contains("png_b64")) {
      img = fermask::decode_png(fermask::base64_decode(req.at("png_b64").get<std::string>()));
    } else {
      img = fermask::read_png(req.at("png_path").get<std::string>());
    }
    img = fermask::to_rgb(img);

    std::vector<double> scores(k, 1.0 / static_cast<double>(k));
    if (a.mode == "checksum" || a.mode == "error-odd") {
      std::uint64_t sum = 0;
      for (std::uint8_t b : img.data) sum += b;
      for (std::size_t c = 0; c < k; ++c) scores[c] = static_cast<double>((sum + 7919 * c) % 1000) / 1000.0;
    } else if (a.mode == "linear") {
      const auto z = matching_cells(img, ref, a.cell);
      double y = a.intercept;
      for (std::size_t i = 0; i < a.beta.size() && i < z.size(); ++i) y += a.beta[i] * z[i];
      for (std::size_t c = 0; c < k; ++c) scores[c] = (1.0 - y) / static_cast<double>(k - 1);
      scores[static_cast<std::size_t>(a.target)] = y;
    } else if (a.mode == "short") {
      scores.pop_back();
    }
    resp["scores"] = scores;
    std::cout << resp.dump() << '\n' << std::flush;
  }
  return 0;
}
