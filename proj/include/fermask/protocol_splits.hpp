#pragma once

#include <cstdint>
#include <filesystem>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "fermask/dataset.hpp"

namespace fermask {

enum class Protocol { kJaffePd, kJaffePi, kUibvfedPd, kUibvfedPi, kCustom };

std::string_view to_string(Protocol p);
Protocol parse_protocol(std::string_view s);

// Held-out identities of the person-independent protocols.
const std::vector<std::string>& jaffe_pi_test_subjects();
const std::vector<std::string>& uibvfed_pi_test_subjects();

struct SplitPlan {
  Protocol protocol = Protocol::kCustom;
  std::uint64_t seed = 0;
  std::vector<std::string> train_ids;  // sorted
  std::vector<std::string> test_ids;   // sorted
};

// Whole source_image_id groups always land on one side.
SplitPlan make_split(const DatasetManifest& m, Protocol protocol, std::uint64_t seed = 0);

// source_image_ids whose group has members on both sides, sorted.
std::vector<std::string> check_leakage(const DatasetManifest& m, const SplitPlan& plan);

void write_plan(const SplitPlan& plan, const std::filesystem::path& path);
std::string plan_to_json(const SplitPlan& plan);
SplitPlan read_plan(const std::filesystem::path& path);
SplitPlan plan_from_json(std::string_view text);

}  // namespace fermask
