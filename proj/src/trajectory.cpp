#include "rsw/trajectory.hpp"

#include <cmath>
#include <fstream>

#include <nlohmann/json.hpp>

#include "rsw/error.hpp"
#include "rsw/text.hpp"

namespace rsw {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

constexpr int kSchemaVersion = 1;

void validate_order(const Transition* last, const Transition& tr) {
  if (!std::isfinite(tr.behavior_logprob))
    throw DataError("behavior_logprob must be finite");
  if (last == nullptr) return;
  if (tr.episode_id < last->episode_id)
    throw DataError("episode_id must be nondecreasing across appends");
  if (tr.episode_id == last->episode_id) {
    if (last->terminal)
      throw DataError("append after terminal step of episode " +
                      std::to_string(tr.episode_id));
    if (tr.t <= last->t)
      throw DataError("out-of-order or duplicate (episode_id, t): (" +
                      std::to_string(tr.episode_id) + ", " +
                      std::to_string(tr.t) + ")");
  }
}

json action_to_json(const Action& a) {
  if (a.size() == 1 && std::nearbyint(a[0]) == a[0]) {
    return static_cast<int64_t>(a[0]);
  }
  return json(a);
}

Action action_from_json(const json& j) {
  if (j.is_number()) return {j.get<double>()};
  return j.get<std::vector<double>>();
}

ordered_json transition_to_json(const Transition& tr) {
  ordered_json j;
  j["episode_id"] = tr.episode_id;
  j["t"] = tr.t;
  j["state"] = tr.state;
  j["action"] = action_to_json(tr.action);
  j["reward"] = tr.reward;
  j["next_state"] = tr.next_state;
  j["collision_flag"] = tr.collision_flag;
  j["lane_index"] = tr.lane_index;
  j["terminal"] = tr.terminal;
  j["behavior_logprob"] = tr.behavior_logprob;
  return j;
}

void transition_from_json(const json& j, Transition& tr) {
  tr.episode_id = j.at("episode_id").get<int64_t>();
  tr.t = j.at("t").get<int64_t>();
  tr.state = j.at("state").get<std::vector<double>>();
  tr.action = action_from_json(j.at("action"));
  tr.reward = j.at("reward").get<double>();
  tr.next_state = j.at("next_state").get<std::vector<double>>();
  tr.collision_flag = j.at("collision_flag").get<int>();
  tr.lane_index = j.at("lane_index").get<int>();
  tr.terminal = j.at("terminal").get<bool>();
  tr.behavior_logprob = j.at("behavior_logprob").get<double>();
}

ordered_json header_json(const std::string& env_id, bool shaped) {
  ordered_json h;
  h["schema_version"] = kSchemaVersion;
  h["env_id"] = env_id;
  h["shaped"] = shaped;
  return h;
}

// Parses the header line and returns (env_id, shaped).
std::pair<std::string, bool> read_header(std::istream& in,
                                         const std::string& path) {
  std::string line;
  if (!std::getline(in, line))
    throw DataError(path + ": empty file (missing header line)");
  json h;
  try {
    h = json::parse(line);
  } catch (const json::exception& e) {
    throw DataError(path + ": line 1: bad header: " + e.what());
  }
  if (!h.contains("schema_version") || !h["schema_version"].is_number_integer())
    throw DataError(path + ": line 1: header missing schema_version");
  const int version = h["schema_version"].get<int>();
  if (version != kSchemaVersion)
    throw DataError(path + ": schema version mismatch: file has " +
                    std::to_string(version) + ", expected " +
                    std::to_string(kSchemaVersion));
  return {h.at("env_id").get<std::string>(), h.at("shaped").get<bool>()};
}

template <typename Fn>
void for_each_record(std::istream& in, const std::string& path, Fn&& fn) {
  std::string line;
  int line_no = 1;  // header was line 1
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw DataError(path + ": line " + std::to_string(line_no) +
                      ": malformed record: " + e.what());
    }
    try {
      fn(j);
    } catch (const json::exception& e) {
      throw DataError(path + ": line " + std::to_string(line_no) +
                      ": missing or mistyped field: " + e.what());
    } catch (const DataError& e) {
      throw DataError(path + ": line " + std::to_string(line_no) + ": " +
                      e.what());
    }
  }
}

std::string csv_quote(const std::string& s) {
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += "\"\"";
    out += c;
  }
  out += "\"";
  return out;
}

std::string csv_vector(const std::vector<double>& v) {
  return csv_quote(json(v).dump());
}

std::ofstream open_out(const std::filesystem::path& path) {
  if (path.has_parent_path())
    std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open for writing: " + path.string());
  return out;
}

}  // namespace

std::string to_string(ShapingSource s) {
  switch (s) {
    case ShapingSource::kHfD: return "HF-D";
    case ShapingSource::kHfRsm: return "HF-RSM";
    case ShapingSource::kLlmD: return "LLM-D";
    case ShapingSource::kLlmHfbf: return "LLM-HFBF";
  }
  return "?";
}

std::string to_string(Profile p) {
  switch (p) {
    case Profile::kIdeal: return "IDEAL";
    case Profile::kAgg: return "AGG";
    case Profile::kRad: return "RAD";
    case Profile::kNa: return "NA";
  }
  return "?";
}

ShapingSource shaping_source_from_string(const std::string& s) {
  if (s == "HF-D") return ShapingSource::kHfD;
  if (s == "HF-RSM") return ShapingSource::kHfRsm;
  if (s == "LLM-D") return ShapingSource::kLlmD;
  if (s == "LLM-HFBF") return ShapingSource::kLlmHfbf;
  throw DataError("unknown shaping source: " + s);
}

Profile profile_from_string(const std::string& s) {
  const std::string u = lowercase(s);
  if (u == "ideal") return Profile::kIdeal;
  if (u == "agg" || u == "aggressive") return Profile::kAgg;
  if (u == "rad" || u == "reckless_adaptive") return Profile::kRad;
  if (u == "na" || u == "none") return Profile::kNa;
  throw DataError("unknown profile: " + s);
}

void Dataset::append(Transition tr) {
  validate_order(items_.empty() ? nullptr : &items_.back(), tr);
  if (!items_.empty() && tr.state.size() != items_.front().state.size())
    throw DataError("state dimension mismatch within dataset");
  items_.push_back(std::move(tr));
}

void Dataset::save(const std::filesystem::path& path) const {
  auto out = open_out(path);
  out << header_json(env_id_, false).dump() << "\n";
  for (const auto& tr : items_) out << transition_to_json(tr).dump() << "\n";
}

Dataset Dataset::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open: " + path.string());
  auto [env_id, shaped] = read_header(in, path.string());
  if (shaped)
    throw DataError(path.string() + ": file holds a shaped dataset; use ShapedDataset::load");
  Dataset d(env_id);
  for_each_record(in, path.string(), [&](const json& j) {
    Transition tr;
    transition_from_json(j, tr);
    d.append(std::move(tr));
  });
  return d;
}

bool Dataset::operator==(const Dataset& other) const {
  if (env_id_ != other.env_id_ || items_.size() != other.items_.size())
    return false;
  for (size_t i = 0; i < items_.size(); ++i) {
    const auto& a = items_[i];
    const auto& b = other.items_[i];
    if (transition_to_json(a) != transition_to_json(b)) return false;
  }
  return true;
}

void Dataset::export_csv(const std::filesystem::path& path) const {
  auto out = open_out(path);
  out << "episode_id,t,state,action,reward,next_state,collision_flag,"
         "lane_index,terminal,behavior_logprob\n";
  for (const auto& tr : items_) {
    out << tr.episode_id << "," << tr.t << "," << csv_vector(tr.state) << ","
        << csv_quote(action_to_json(tr.action).dump()) << ","
        << fmt_g17(tr.reward) << "," << csv_vector(tr.next_state) << ","
        << tr.collision_flag << "," << tr.lane_index << ","
        << (tr.terminal ? "true" : "false") << ","
        << fmt_g17(tr.behavior_logprob) << "\n";
  }
}

void ShapedDataset::append(ShapedTransition tr) {
  validate_order(items_.empty() ? nullptr : &items_.back(), tr);
  if (tr.augmented_reward != tr.reward + tr.shaped_reward)
    throw DataError("augmented_reward must equal reward + shaped_reward exactly");
  const bool hfbf = tr.shaping_source == ShapingSource::kLlmHfbf;
  if (tr.bias_flagged.has_value() != hfbf || tr.pc.has_value() != hfbf)
    throw DataError("bias_flagged and pc must be present iff source is LLM-HFBF");
  items_.push_back(std::move(tr));
}

void ShapedDataset::save(const std::filesystem::path& path) const {
  auto out = open_out(path);
  out << header_json(env_id_, true).dump() << "\n";
  for (const auto& tr : items_) {
    ordered_json j = transition_to_json(tr);
    j["shaped_reward"] = tr.shaped_reward;
    j["augmented_reward"] = tr.augmented_reward;
    j["shaping_source"] = to_string(tr.shaping_source);
    j["profile"] = to_string(tr.profile);
    if (tr.bias_flagged) j["bias_flagged"] = *tr.bias_flagged;
    if (tr.pc) j["pc"] = *tr.pc;
    out << j.dump() << "\n";
  }
}

ShapedDataset ShapedDataset::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open: " + path.string());
  auto [env_id, shaped] = read_header(in, path.string());
  if (!shaped)
    throw DataError(path.string() + ": file holds a raw dataset; use Dataset::load");
  ShapedDataset d(env_id);
  for_each_record(in, path.string(), [&](const json& j) {
    ShapedTransition tr;
    transition_from_json(j, tr);
    tr.shaped_reward = j.at("shaped_reward").get<double>();
    tr.augmented_reward = j.at("augmented_reward").get<double>();
    tr.shaping_source = shaping_source_from_string(j.at("shaping_source").get<std::string>());
    tr.profile = profile_from_string(j.at("profile").get<std::string>());
    if (j.contains("bias_flagged")) tr.bias_flagged = j["bias_flagged"].get<bool>();
    if (j.contains("pc")) tr.pc = j["pc"].get<std::array<double, 3>>();
    d.append(std::move(tr));
  });
  return d;
}

void ShapedDataset::export_csv(const std::filesystem::path& path) const {
  auto out = open_out(path);
  out << "episode_id,t,state,action,reward,next_state,collision_flag,"
         "lane_index,terminal,behavior_logprob,shaped_reward,"
         "augmented_reward,shaping_source,profile,bias_flagged,pc\n";
  for (const auto& tr : items_) {
    out << tr.episode_id << "," << tr.t << "," << csv_vector(tr.state) << ","
        << csv_quote(action_to_json(tr.action).dump()) << ","
        << fmt_g17(tr.reward) << "," << csv_vector(tr.next_state) << ","
        << tr.collision_flag << "," << tr.lane_index << ","
        << (tr.terminal ? "true" : "false") << ","
        << fmt_g17(tr.behavior_logprob) << "," << fmt_g17(tr.shaped_reward)
        << "," << fmt_g17(tr.augmented_reward) << ","
        << to_string(tr.shaping_source) << "," << to_string(tr.profile) << ",";
    if (tr.bias_flagged) out << (*tr.bias_flagged ? "true" : "false");
    out << ",";
    if (tr.pc)
      out << csv_quote(json(*tr.pc).dump());
    out << "\n";
  }
}

}  // namespace rsw
