#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "fermask/image.hpp"
#include "fermask/metrics.hpp"

namespace fermask {

std::string base64_encode(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> base64_decode(std::string_view text);

struct Prediction {
  std::vector<double> scores;
  std::string error;  // non-empty when this item failed
  bool ok() const { return error.empty(); }
};

// Black-box classifier. Output order always matches input order.
class Predictor {
 public:
  virtual ~Predictor() = default;
  virtual const std::vector<std::string>& class_list() const = 0;
  virtual std::vector<Prediction> predict_batch(std::span<const Image> images) = 0;
  virtual std::vector<Prediction> predict_paths(std::span<const std::filesystem::path> paths);
};

// In-process predictor, for embedding and tests.
class FunctionPredictor : public Predictor {
 public:
  using Fn = std::function<std::vector<double>(const Image&)>;
  FunctionPredictor(std::vector<std::string> classes, Fn fn) : classes_(std::move(classes)), fn_(std::move(fn)) {}
  const std::vector<std::string>& class_list() const override { return classes_; }
  std::vector<Prediction> predict_batch(std::span<const Image> images) override;

 private:
  std::vector<std::string> classes_;
  Fn fn_;
};

// Precomputed scores; queried by image_id.
class ScoresFilePredictor : public Predictor {
 public:
  explicit ScoresFilePredictor(ScoreMatrix scores);
  static ScoresFilePredictor load(const std::filesystem::path& path,
                                  const std::vector<std::string>& expected_classes = {});

  const std::vector<std::string>& class_list() const override { return scores_.class_list; }
  const ScoreMatrix& scores() const { return scores_; }
  // Throws ValidationError when an id is absent.
  const std::vector<double>& lookup(const std::string& image_id) const;
  // Rasters carry no identity; always throws.
  std::vector<Prediction> predict_batch(std::span<const Image> images) override;
  // Looks up each path's stem as an image_id.
  std::vector<Prediction> predict_paths(std::span<const std::filesystem::path> paths) override;

 private:
  ScoreMatrix scores_;
  std::map<std::string, std::size_t> index_;
};

struct CommandOptions {
  std::string command;                      // run through /bin/sh -c
  std::vector<std::string> class_list;      // must match the handshake; empty accepts any
  std::size_t batch_size = 32;
  std::chrono::milliseconds timeout{30000};  // per request batch and for the handshake
};

// Line-delimited JSON over the child's stdin/stdout:
//   child -> {"classes": [...]}                       (once, first line)
//   parent -> {"id": "...", "png_b64": "..."} | {"id": "...", "png_path": "..."}
//   child -> {"id": "...", "scores": [...]} | {"id": "...", "error": "..."}
// Responses are matched by id. Calls are serialized; one child per handle.
class CommandPredictor : public Predictor {
 public:
  explicit CommandPredictor(CommandOptions opts);
  ~CommandPredictor() override;
  CommandPredictor(const CommandPredictor&) = delete;
  CommandPredictor& operator=(const CommandPredictor&) = delete;

  const std::vector<std::string>& class_list() const override { return classes_; }
  std::vector<Prediction> predict_batch(std::span<const Image> images) override;
  std::vector<Prediction> predict_paths(std::span<const std::filesystem::path> paths) override;

  std::uint64_t requests_sent() const { return next_id_; }

 private:
  // Each payload is (field name, value) for one request, e.g. ("png_path", "...").
  std::vector<Prediction> roundtrip(const std::vector<std::pair<std::string, std::string>>& payloads);
  bool read_line(std::string* line, std::chrono::steady_clock::time_point deadline);
  void shutdown();

  CommandOptions opts_;
  std::vector<std::string> classes_;
  int pid_ = -1;
  int to_child_ = -1;
  int from_child_ = -1;
  std::string rbuf_;
  bool eof_ = false;
  std::uint64_t next_id_ = 0;
  std::mutex mu_;
};

}  // namespace fermask
