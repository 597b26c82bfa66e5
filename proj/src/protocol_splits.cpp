#include "fermask/protocol_splits.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include <nlohmann/json.hpp>

#include "fermask/error.hpp"
#include "fermask/rng.hpp"

namespace fermask {

using json = nlohmann::json;

std::string_view to_string(Protocol p) {
  switch (p) {
    case Protocol::kJaffePd: return "jaffe_pd";
    case Protocol::kJaffePi: return "jaffe_pi";
    case Protocol::kUibvfedPd: return "uibvfed_pd";
    case Protocol::kUibvfedPi: return "uibvfed_pi";
    case Protocol::kCustom: return "custom";
  }
  return "custom";
}

Protocol parse_protocol(std::string_view s) {
  for (Protocol p : {Protocol::kJaffePd, Protocol::kJaffePi, Protocol::kUibvfedPd, Protocol::kUibvfedPi,
                     Protocol::kCustom}) {
    if (s == to_string(p)) return p;
  }
  throw ValidationError("unknown protocol '" + std::string(s) + "'");
}

const std::vector<std::string>& jaffe_pi_test_subjects() {
  static const std::vector<std::string> kSubjects = {"KM", "NM", "YM"};
  return kSubjects;
}

const std::vector<std::string>& uibvfed_pi_test_subjects() {
  static const std::vector<std::string> kSubjects = {"Alicia", "Jose", "Ramon", "Tomeu", "Wanda"};
  return kSubjects;
}

namespace {

struct Group {
  std::string source_image_id;
  std::string subject;
  std::string emotion;
  int session = 1;
  std::vector<std::string> image_ids;
};

// Groups keyed and ordered by source_image_id.
std::map<std::string, Group> group_records(const DatasetManifest& m) {
  std::map<std::string, Group> groups;
  for (const auto& r : m.records) {
    auto [it, inserted] = groups.try_emplace(r.source_image_id);
    Group& g = it->second;
    if (inserted) {
      g.source_image_id = r.source_image_id;
      g.subject = r.subject_id;
      g.emotion = r.emotion;
      g.session = r.session;
    } else if (g.subject != r.subject_id || g.emotion != r.emotion || g.session != r.session) {
      throw ValidationError("inconsistent group '" + r.source_image_id + "' at image_id '" + r.image_id + "'");
    }
    g.image_ids.push_back(r.image_id);
  }
  return groups;
}

void check_family(const DatasetManifest& m, Protocol protocol) {
  const bool jaffe = protocol == Protocol::kJaffePd || protocol == Protocol::kJaffePi;
  if (m.profile == Profile::kJaffe && !jaffe) {
    throw ValidationError("protocol " + std::string(to_string(protocol)) + " does not apply to a jaffe-like manifest");
  }
  if (m.profile == Profile::kUibvfed && jaffe) {
    throw ValidationError("protocol " + std::string(to_string(protocol)) +
                          " does not apply to a uibvfed-like manifest");
  }
}

void require_subjects(const std::map<std::string, Group>& groups, const std::vector<std::string>& subjects) {
  std::set<std::string> present;
  for (const auto& [_, g] : groups) present.insert(g.subject);
  std::string missing;
  for (const auto& s : subjects) {
    if (!present.contains(s)) missing += (missing.empty() ? "" : ", ") + s;
  }
  if (!missing.empty()) throw ValidationError("protocol subjects absent from manifest: " + missing);
}

}  // namespace

SplitPlan make_split(const DatasetManifest& m, Protocol protocol, std::uint64_t seed) {
  if (protocol == Protocol::kCustom) throw ValidationError("custom plans are supplied, not generated");
  if (m.records.empty()) throw ValidationError("empty manifest");
  check_family(m, protocol);
  const auto groups = group_records(m);

  std::set<std::string> test_groups;
  switch (protocol) {
    case Protocol::kJaffePi:
    case Protocol::kUibvfedPi: {
      const auto& subjects =
          protocol == Protocol::kJaffePi ? jaffe_pi_test_subjects() : uibvfed_pi_test_subjects();
      require_subjects(groups, subjects);
      const std::set<std::string> held(subjects.begin(), subjects.end());
      for (const auto& [sid, g] : groups) {
        if (held.contains(g.subject)) test_groups.insert(sid);
      }
      break;
    }
    case Protocol::kJaffePd: {
      // Highest session <= 3 per (subject, emotion); max session when none is <= 3.
      std::map<std::pair<std::string, std::string>, int> pick;
      for (const auto& [_, g] : groups) {
        auto key = std::make_pair(g.subject, g.emotion);
        auto it = pick.find(key);
        if (it == pick.end()) {
          pick.emplace(key, g.session);
          continue;
        }
        const int cur = it->second;
        const bool cur_ok = cur <= 3, new_ok = g.session <= 3;
        if ((new_ok && !cur_ok) || (new_ok == cur_ok && g.session > cur)) {
          it->second = g.session;
        }
      }
      for (const auto& [sid, g] : groups) {
        if (pick.at({g.subject, g.emotion}) == g.session) test_groups.insert(sid);
      }
      break;
    }
    case Protocol::kUibvfedPd: {
      std::map<std::pair<std::string, std::string>, std::vector<std::string>> strata;
      for (const auto& [sid, g] : groups) strata[{g.subject, g.emotion}].push_back(sid);
      for (auto& [key, ids] : strata) {
        // ids arrive sorted (map order); shuffle with a per-stratum stream.
        CounterRng rng(seed, "uibvfed_pd/" + key.first + "/" + key.second);
        for (std::size_t i = ids.size(); i > 1; --i) {
          const auto j = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i) - 1));
          std::swap(ids[i - 1], ids[j]);
        }
        const auto n_test = static_cast<std::size_t>(std::floor(0.25 * ids.size() + 0.5));
        for (std::size_t i = 0; i < n_test; ++i) test_groups.insert(ids[i]);
      }
      break;
    }
    case Protocol::kCustom:
      break;
  }

  SplitPlan plan;
  plan.protocol = protocol;
  plan.seed = seed;
  for (const auto& [sid, g] : groups) {
    auto& side = test_groups.contains(sid) ? plan.test_ids : plan.train_ids;
    side.insert(side.end(), g.image_ids.begin(), g.image_ids.end());
  }
  if (plan.train_ids.empty() || plan.test_ids.empty()) throw ValidationError("empty side produced");
  std::sort(plan.train_ids.begin(), plan.train_ids.end());
  std::sort(plan.test_ids.begin(), plan.test_ids.end());
  return plan;
}

std::vector<std::string> check_leakage(const DatasetManifest& m, const SplitPlan& plan) {
  std::map<std::string, const ImageRecord*> by_id;
  for (const auto& r : m.records) by_id.emplace(r.image_id, &r);
  std::map<std::string, std::pair<bool, bool>> sides;  // source id -> (in train, in test)
  for (const auto& id : plan.train_ids) {
    auto it = by_id.find(id);
    if (it == by_id.end()) throw ValidationError("plan references unknown image_id '" + id + "'");
    sides[it->second->source_image_id].first = true;
  }
  for (const auto& id : plan.test_ids) {
    auto it = by_id.find(id);
    if (it == by_id.end()) throw ValidationError("plan references unknown image_id '" + id + "'");
    sides[it->second->source_image_id].second = true;
  }
  std::vector<std::string> leaked;
  for (const auto& [sid, s] : sides) {
    if (s.first && s.second) leaked.push_back(sid);
  }
  return leaked;
}

std::string plan_to_json(const SplitPlan& plan) {
  json j = {{"protocol", std::string(to_string(plan.protocol))},
            {"seed", plan.seed},
            {"train", plan.train_ids},
            {"test", plan.test_ids}};
  return j.dump(2) + "\n";
}

void write_plan(const SplitPlan& plan, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write plan " + path.string());
  out << plan_to_json(plan);
}

SplitPlan plan_from_json(std::string_view text) {
  SplitPlan plan;
  try {
    const json j = json::parse(text);
    plan.protocol = parse_protocol(j.at("protocol").get<std::string>());
    plan.seed = j.value("seed", std::uint64_t{0});
    plan.train_ids = j.at("train").get<std::vector<std::string>>();
    plan.test_ids = j.at("test").get<std::vector<std::string>>();
  } catch (const json::exception& e) {
    throw ValidationError(std::string("malformed split plan: ") + e.what());
  }
  std::set<std::string> train(plan.train_ids.begin(), plan.train_ids.end());
  if (train.size() != plan.train_ids.size()) throw ValidationError("split plan lists a train id twice");
  std::set<std::string> test;
  for (const auto& id : plan.test_ids) {
    if (train.contains(id)) throw ValidationError("split plan puts '" + id + "' on both sides");
    if (!test.insert(id).second) throw ValidationError("split plan lists a test id twice");
  }
  return plan;
}

SplitPlan read_plan(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open split plan " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return plan_from_json(ss.str());
}

}  // namespace fermask
