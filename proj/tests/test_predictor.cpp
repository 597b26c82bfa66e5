#include <gtest/gtest.h>

#include <chrono>

#include "fermask/error.hpp"
#include "fermask/predictor.hpp"
#include "test_support.hpp"

using namespace fermask;
namespace ft = fermask::testing;

namespace {

std::string double_cmd(const std::string& args) {
  return std::string("'") + FERMASK_PREDICTOR_DOUBLE + "' " + args;
}

CommandOptions options(const std::string& args, std::vector<std::string> classes = {"a", "b", "c"}) {
  CommandOptions o;
  o.command = double_cmd(args + " --classes a,b,c");
  o.class_list = std::move(classes);
  o.batch_size = 8;
  o.timeout = std::chrono::milliseconds(5000);
  return o;
}

std::vector<double> checksum_oracle(const Image& img) {
  std::uint64_t sum = 0;
  for (std::uint8_t b : img.data) sum += b;
  std::vector<double> out;
  for (std::uint64_t c = 0; c < 3; ++c) out.push_back(static_cast<double>((sum + 7919 * c) % 1000) / 1000.0);
  return out;
}

}  // namespace

TEST(Base64, RoundTrip) {
  for (std::size_t n : {0u, 1u, 2u, 3u, 4u, 100u, 1001u}) {
    std::vector<std::uint8_t> bytes(n);
    for (std::size_t i = 0; i < n; ++i) bytes[i] = static_cast<std::uint8_t>(i * 37 + 11);
    EXPECT_EQ(base64_decode(base64_encode(bytes)), bytes) << n;
  }
  EXPECT_EQ(base64_encode(std::vector<std::uint8_t>{'M', 'a'}), "TWE=");
  EXPECT_THROW(base64_decode("@@@@"), Error);
}

TEST(CommandPredictor, UniformDouble) {
  CommandPredictor p(options("--mode uniform"));
  EXPECT_EQ(p.class_list(), (std::vector<std::string>{"a", "b", "c"}));
  std::vector<Image> imgs = {ft::noise_image(8, 8, 1), ft::noise_image(8, 8, 2)};
  const auto out = p.predict_batch(imgs);
  ASSERT_EQ(out.size(), 2u);
  for (const auto& pr : out) {
    ASSERT_TRUE(pr.ok()) << pr.error;
    for (double v : pr.scores) EXPECT_DOUBLE_EQ(v, 1.0 / 3);
  }
}

TEST(CommandPredictor, ChecksumDoubleMatchesOracleAcrossBatches) {
  CommandPredictor p(options("--mode checksum"));
  std::vector<Image> imgs;
  for (int i = 0; i < 100; ++i) imgs.push_back(ft::noise_image(6 + i % 5, 7, 100 + i));
  const auto out = p.predict_batch(imgs);
  ASSERT_EQ(out.size(), 100u);
  for (std::size_t i = 0; i < imgs.size(); ++i) EXPECT_EQ(out[i].scores, checksum_oracle(imgs[i])) << i;
  EXPECT_EQ(p.requests_sent(), 100u);
}

TEST(CommandPredictor, PathRequests) {
  ft::TempDir dir("pred");
  std::vector<std::filesystem::path> paths;
  std::vector<Image> imgs;
  for (int i = 0; i < 5; ++i) {
    imgs.push_back(ft::noise_image(9, 9, 50 + i));
    paths.push_back(dir / ("i" + std::to_string(i) + ".png"));
    write_png(imgs.back(), paths.back());
  }
  CommandPredictor p(options("--mode checksum"));
  const auto out = p.predict_paths(paths);
  for (std::size_t i = 0; i < paths.size(); ++i) EXPECT_EQ(out[i].scores, checksum_oracle(imgs[i]));
}

TEST(CommandPredictor, ExitBeforeHandshakeIsAnError) {
  try {
    CommandPredictor p(options("--mode exit"));
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("handshake"), std::string::npos) << e.what();
  }
}

TEST(CommandPredictor, HandshakeClassMismatch) {
  EXPECT_THROW(CommandPredictor(options("--mode bad-handshake")), Error);
}

TEST(CommandPredictor, PerItemErrorsDoNotPoisonTheBatch) {
  CommandPredictor p(options("--mode error-odd"));
  std::vector<Image> imgs = {ft::noise_image(4, 4, 1), ft::noise_image(4, 4, 2), ft::noise_image(4, 4, 3)};
  const auto out = p.predict_batch(imgs);
  EXPECT_FALSE(out[0].ok());
  EXPECT_TRUE(out[1].ok());
  EXPECT_EQ(out[1].scores, checksum_oracle(imgs[1]));
  EXPECT_FALSE(out[2].ok());
}

TEST(CommandPredictor, ScoreLengthMismatchFailsThatItem) {
  CommandPredictor p(options("--mode short"));
  std::vector<Image> imgs = {ft::noise_image(4, 4, 1)};
  const auto out = p.predict_batch(imgs);
  EXPECT_FALSE(out[0].ok());
}

TEST(CommandPredictor, ChildClosingWithPendingRequests) {
  CommandPredictor p(options("--mode close"));
  std::vector<Image> imgs = {ft::noise_image(4, 4, 1), ft::noise_image(4, 4, 2)};
  try {
    p.predict_batch(imgs);
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("pending"), std::string::npos) << e.what();
  }
}

TEST(CommandPredictor, Timeout) {
  CommandOptions o = options("--mode slow");
  o.timeout = std::chrono::milliseconds(300);
  CommandPredictor p(o);
  std::vector<Image> imgs = {ft::noise_image(4, 4, 1)};
  const auto t0 = std::chrono::steady_clock::now();
  try {
    p.predict_batch(imgs);
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("timed out"), std::string::npos) << e.what();
  }
  EXPECT_LT(std::chrono::steady_clock::now() - t0, std::chrono::seconds(5));
}

TEST(CommandPredictor, MissingCommandFails) {
  CommandOptions o;
  o.command = "/nonexistent/predictor-binary";
  EXPECT_THROW(CommandPredictor{o}, Error);
}

TEST(ScoresFilePredictor, LooksUpByStem) {
  ScoreMatrix s;
  s.class_list = {"a", "b"};
  s.image_ids = {"KA.AN1.1_cloth", "x"};
  s.true_labels = {0, 1};
  s.scores = {{0.7, 0.3}, {0.2, 0.8}};
  ScoresFilePredictor p(s);
  const std::vector<std::filesystem::path> paths = {"/d/x.png", "/e/KA.AN1.1_cloth.png"};
  const auto out = p.predict_paths(paths);
  EXPECT_EQ(out[0].scores, (std::vector<double>{0.2, 0.8}));
  EXPECT_EQ(out[1].scores, (std::vector<double>{0.7, 0.3}));
  EXPECT_THROW(p.lookup("nope"), ValidationError);
  std::vector<Image> imgs = {ft::noise_image(2, 2, 1)};
  EXPECT_THROW(p.predict_batch(imgs), Error);
}

TEST(FunctionPredictor, PreservesOrder) {
  FunctionPredictor p({"a", "b"}, [](const Image& img) {
    return std::vector<double>{static_cast<double>(img.width), 0.0};
  });
  std::vector<Image> imgs = {Image(3, 1, 3), Image(5, 1, 3)};
  const auto out = p.predict_batch(imgs);
  EXPECT_EQ(out[0].scores[0], 3);
  EXPECT_EQ(out[1].scores[0], 5);
}
