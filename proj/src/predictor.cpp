#include "fermask/predictor.hpp"

#include <fcntl.h>
#include <poll.h>
#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <openssl/evp.h>

#include <cerrno>
#include <cstring>
#include <thread>

#include <nlohmann/json.hpp>

#include "fermask/error.hpp"

namespace fermask {

using json = nlohmann::json;

std::string base64_encode(std::span<const std::uint8_t> bytes) {
  std::string out(4 * ((bytes.size() + 2) / 3) + 1, '\0');
  const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()), bytes.data(),
                                static_cast<int>(bytes.size()));
  out.resize(static_cast<std::size_t>(n));
  return out;
}

std::vector<std::uint8_t> base64_decode(std::string_view text) {
  if (text.size() % 4 != 0) throw ValidationError("base64 length is not a multiple of 4");
  std::vector<std::uint8_t> out(3 * text.size() / 4);
  const int n = EVP_DecodeBlock(out.data(), reinterpret_cast<const unsigned char*>(text.data()),
                                static_cast<int>(text.size()));
  if (n < 0) throw ValidationError("invalid base64 payload");
  std::size_t len = static_cast<std::size_t>(n);
  // EVP_DecodeBlock keeps the zero bytes produced by '=' padding.
  if (!text.empty() && text.back() == '=') --len;
  if (text.size() >= 2 && text[text.size() - 2] == '=') --len;
  out.resize(len);
  return out;
}

std::vector<Prediction> Predictor::predict_paths(std::span<const std::filesystem::path> paths) {
  std::vector<Image> images;
  images.reserve(paths.size());
  for (const auto& p : paths) images.push_back(read_png(p));
  return predict_batch(images);
}

std::vector<Prediction> FunctionPredictor::predict_batch(std::span<const Image> images) {
  std::vector<Prediction> out;
  out.reserve(images.size());
  for (const auto& img : images) {
    Prediction p;
    p.scores = fn_(img);
    if (p.scores.size() != classes_.size()) {
      p.scores.clear();
      p.error = "score vector length mismatch";
    }
    out.push_back(std::move(p));
  }
  return out;
}

ScoresFilePredictor::ScoresFilePredictor(ScoreMatrix scores) : scores_(std::move(scores)) {
  validate(scores_);
  if (scores_.image_ids.size() != scores_.rows()) throw ValidationError("scores need image ids");
  for (std::size_t i = 0; i < scores_.rows(); ++i) {
    if (!index_.emplace(scores_.image_ids[i], i).second) {
      throw ValidationError("duplicate image_id '" + scores_.image_ids[i] + "' in scores");
    }
  }
}

ScoresFilePredictor ScoresFilePredictor::load(const std::filesystem::path& path,
                                              const std::vector<std::string>& expected_classes) {
  return ScoresFilePredictor(load_scores(path, expected_classes));
}

const std::vector<double>& ScoresFilePredictor::lookup(const std::string& image_id) const {
  auto it = index_.find(image_id);
  if (it == index_.end()) throw ValidationError("image_id '" + image_id + "' not in scores file");
  return scores_.scores[it->second];
}

std::vector<Prediction> ScoresFilePredictor::predict_batch(std::span<const Image>) {
  throw ValidationError("a scores-file predictor cannot score new rasters");
}

std::vector<Prediction> ScoresFilePredictor::predict_paths(std::span<const std::filesystem::path> paths) {
  std::vector<Prediction> out;
  for (const auto& p : paths) {
    Prediction pr;
    auto it = index_.find(p.stem().string());
    if (it == index_.end()) {
      pr.error = "image_id '" + p.stem().string() + "' not in scores file";
    } else {
      pr.scores = scores_.scores[it->second];
    }
    out.push_back(std::move(pr));
  }
  return out;
}

namespace {

void ignore_sigpipe() {
  static std::once_flag once;
  std::call_once(once, [] { ::signal(SIGPIPE, SIG_IGN); });
}

int remaining_ms(std::chrono::steady_clock::time_point deadline) {
  const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - std::chrono::steady_clock::now());
  return left.count() <= 0 ? 0 : static_cast<int>(std::min<long long>(left.count(), 1 << 30));
}

}  // namespace

CommandPredictor::CommandPredictor(CommandOptions opts) : opts_(std::move(opts)) {
  if (opts_.command.empty()) throw ValidationError("predictor command is empty");
  if (opts_.batch_size == 0) opts_.batch_size = 1;
  ignore_sigpipe();

  int in_pipe[2], out_pipe[2];
  if (::pipe2(in_pipe, O_CLOEXEC) != 0) throw Error(std::string("pipe: ") + std::strerror(errno));
  if (::pipe2(out_pipe, O_CLOEXEC) != 0) {
    ::close(in_pipe[0]);
    ::close(in_pipe[1]);
    throw Error(std::string("pipe: ") + std::strerror(errno));
  }
  const pid_t pid = ::fork();
  if (pid < 0) {
    for (int fd : {in_pipe[0], in_pipe[1], out_pipe[0], out_pipe[1]}) ::close(fd);
    throw Error(std::string("cannot spawn predictor: ") + std::strerror(errno));
  }
  if (pid == 0) {
    // Own process group, so shutdown also reaches whatever the shell spawns.
    ::setpgid(0, 0);
    ::dup2(in_pipe[0], STDIN_FILENO);
    ::dup2(out_pipe[1], STDOUT_FILENO);
    for (int fd : {in_pipe[0], in_pipe[1], out_pipe[0], out_pipe[1]}) ::close(fd);
    ::execl("/bin/sh", "sh", "-c", opts_.command.c_str(), static_cast<char*>(nullptr));
    ::_exit(127);
  }
  ::setpgid(pid, pid);
  ::close(in_pipe[0]);
  ::close(out_pipe[1]);
  pid_ = pid;
  to_child_ = in_pipe[1];
  from_child_ = out_pipe[0];
  ::fcntl(to_child_, F_SETFL, ::fcntl(to_child_, F_GETFL) | O_NONBLOCK);

  std::string line;
  const auto deadline = std::chrono::steady_clock::now() + opts_.timeout;
  try {
    if (!read_line(&line, deadline)) throw Error("predictor exited before its handshake: " + opts_.command);
    json hs;
    try {
      hs = json::parse(line);
      classes_ = hs.at("classes").get<std::vector<std::string>>();
    } catch (const json::exception&) {
      throw Error("malformed predictor handshake: " + line);
    }
    if (classes_.empty()) throw Error("predictor handshake lists no classes");
    if (!opts_.class_list.empty() && classes_ != opts_.class_list) {
      throw ValidationError("predictor classes do not match the class list");
    }
  } catch (...) {
    shutdown();
    throw;
  }
}

CommandPredictor::~CommandPredictor() { shutdown(); }

void CommandPredictor::shutdown() {
  if (to_child_ >= 0) {
    ::close(to_child_);
    to_child_ = -1;
  }
  if (from_child_ >= 0) {
    ::close(from_child_);
    from_child_ = -1;
  }
  if (pid_ > 0) {
    int status = 0;
    for (int i = 0; i < 50; ++i) {
      if (::waitpid(pid_, &status, WNOHANG) != 0) {
        ::kill(-pid_, SIGKILL);  // stragglers left behind by the shell
        pid_ = -1;
        return;
      }
      std::this_thread::sleep_for(std::chrono::milliseconds(10));
    }
    ::kill(-pid_, SIGKILL);
    ::waitpid(pid_, &status, 0);
    pid_ = -1;
  }
}

bool CommandPredictor::read_line(std::string* line, std::chrono::steady_clock::time_point deadline) {
  for (;;) {
    const auto nl = rbuf_.find('\n');
    if (nl != std::string::npos) {
      *line = rbuf_.substr(0, nl);
      rbuf_.erase(0, nl + 1);
      return true;
    }
    if (eof_) return false;
    pollfd p{from_child_, POLLIN, 0};
    const int r = ::poll(&p, 1, remaining_ms(deadline));
    if (r < 0 && errno == EINTR) continue;
    if (r == 0) throw Error("predictor timed out");
    char buf[65536];
    const ssize_t n = ::read(from_child_, buf, sizeof(buf));
    if (n < 0) {
      if (errno == EINTR || errno == EAGAIN) continue;
      throw Error(std::string("predictor read failed: ") + std::strerror(errno));
    }
    if (n == 0) {
      eof_ = true;
      continue;
    }
    rbuf_.append(buf, static_cast<std::size_t>(n));
  }
}

std::vector<Prediction> CommandPredictor::roundtrip(
    const std::vector<std::pair<std::string, std::string>>& payloads) {
  std::lock_guard lock(mu_);
  if (pid_ < 0) throw Error("predictor process is not running");
  std::vector<Prediction> out(payloads.size());

  for (std::size_t start = 0; start < payloads.size(); start += opts_.batch_size) {
    const std::size_t end = std::min(payloads.size(), start + opts_.batch_size);
    std::map<std::string, std::size_t> pending;
    std::string wbuf;
    for (std::size_t i = start; i < end; ++i) {
      const std::string id = "r" + std::to_string(next_id_++);
      pending.emplace(id, i);
      json req = {{"id", id}, {payloads[i].first, payloads[i].second}};
      wbuf += req.dump();
      wbuf.push_back('\n');
    }

    const auto deadline = std::chrono::steady_clock::now() + opts_.timeout;
    std::size_t written = 0;
    while (!pending.empty()) {
      // Drain complete lines first.
      for (auto nl = rbuf_.find('\n'); nl != std::string::npos; nl = rbuf_.find('\n')) {
        const std::string line = rbuf_.substr(0, nl);
        rbuf_.erase(0, nl + 1);
        if (line.empty()) continue;
        json resp;
        try {
          resp = json::parse(line);
        } catch (const json::exception&) {
          throw Error("malformed predictor response: " + line.substr(0, 200));
        }
        if (!resp.is_object() || !resp.contains("id") || !resp["id"].is_string()) {
          throw Error("predictor response without an id: " + line.substr(0, 200));
        }
        auto it = pending.find(resp["id"].get<std::string>());
        if (it == pending.end()) throw Error("predictor answered unknown id " + resp["id"].get<std::string>());
        Prediction& p = out[it->second];
        if (resp.contains("error")) {
          p.error = resp["error"].is_string() ? resp["error"].get<std::string>() : resp["error"].dump();
        } else {
          try {
            p.scores = resp.at("scores").get<std::vector<double>>();
            if (p.scores.size() != classes_.size()) {
              p.error = "score vector length " + std::to_string(p.scores.size()) + " != " +
                        std::to_string(classes_.size());
              p.scores.clear();
            }
          } catch (const json::exception&) {
            p.error = "malformed scores";
            p.scores.clear();
          }
        }
        pending.erase(it);
      }
      if (pending.empty()) break;
      if (eof_) {
        throw Error("predictor closed its output with " + std::to_string(pending.size()) + " pending requests");
      }

      pollfd fds[2] = {{from_child_, POLLIN, 0}, {to_child_, POLLOUT, 0}};
      const nfds_t nfds = written < wbuf.size() ? 2 : 1;
      const int r = ::poll(fds, nfds, remaining_ms(deadline));
      if (r < 0) {
        if (errno == EINTR) continue;
        throw Error(std::string("poll failed: ") + std::strerror(errno));
      }
      if (r == 0) throw Error("predictor timed out");
      if (nfds == 2 && (fds[1].revents & (POLLOUT | POLLERR | POLLHUP))) {
        const ssize_t n = ::write(to_child_, wbuf.data() + written, wbuf.size() - written);
        if (n < 0 && errno != EAGAIN && errno != EINTR) {
          if (errno == EPIPE) {
            written = wbuf.size();  // child gone; the read side reports EOF
          } else {
            throw Error(std::string("predictor write failed: ") + std::strerror(errno));
          }
        } else if (n > 0) {
          written += static_cast<std::size_t>(n);
        }
      }
      if (fds[0].revents & (POLLIN | POLLHUP | POLLERR)) {
        char buf[65536];
        const ssize_t n = ::read(from_child_, buf, sizeof(buf));
        if (n == 0) {
          eof_ = true;
        } else if (n > 0) {
          rbuf_.append(buf, static_cast<std::size_t>(n));
        } else if (errno != EINTR && errno != EAGAIN) {
          throw Error(std::string("predictor read failed: ") + std::strerror(errno));
        }
      }
    }
  }
  return out;
}

std::vector<Prediction> CommandPredictor::predict_batch(std::span<const Image> images) {
  std::vector<std::pair<std::string, std::string>> payloads;
  payloads.reserve(images.size());
  for (const auto& img : images) payloads.emplace_back("png_b64", base64_encode(encode_png(img)));
  return roundtrip(payloads);
}

std::vector<Prediction> CommandPredictor::predict_paths(std::span<const std::filesystem::path> paths) {
  std::vector<std::pair<std::string, std::string>> payloads;
  payloads.reserve(paths.size());
  for (const auto& p : paths) payloads.emplace_back("png_path", std::filesystem::absolute(p).string());
  return roundtrip(payloads);
}

}  // namespace fermask
