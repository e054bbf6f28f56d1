#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace rsw {

// Environment-dependent action payload: discrete environments use one entry
// holding the action id; continuous environments use one entry per torque.
using Action = std::vector<double>;

enum class ShapingSource { kHfD, kHfRsm, kLlmD, kLlmHfbf };
enum class Profile { kIdeal, kAgg, kRad, kNa };

std::string to_string(ShapingSource s);
std::string to_string(Profile p);
ShapingSource shaping_source_from_string(const std::string& s);
Profile profile_from_string(const std::string& s);

// One step of collected experience; the unit of every dataset.
struct Transition {
  int64_t episode_id = 0;
  int64_t t = 0;
  std::vector<double> state;
  Action action;
  double reward = 0.0;  // intrinsic r_t
  std::vector<double> next_state;
  int collision_flag = 0;
  int lane_index = -1;  // -1 for non-highway environments
  bool terminal = false;
  double behavior_logprob = 0.0;  // log pi(a|s) at collection time
};

// Transition plus shaping annotations (r_hat, r_tilde, provenance).
struct ShapedTransition : Transition {
  double shaped_reward = 0.0;     // r_hat_t
  double augmented_reward = 0.0;  // r_tilde_t = r_t + r_hat_t
  ShapingSource shaping_source = ShapingSource::kHfD;
  Profile profile = Profile::kNa;
  std::optional<bool> bias_flagged;            // LLM-HFBF only
  std::optional<std::array<double, 3>> pc;     // LLM-HFBF only
};

namespace detail {
// Contiguous per-episode slices over any transition-like item vector.
template <typename T>
std::vector<std::span<const T>> episode_slices(const std::vector<T>& items) {
  std::vector<std::span<const T>> out;
  size_t begin = 0;
  for (size_t i = 0; i < items.size(); ++i) {
    if (i + 1 == items.size() || items[i + 1].episode_id != items[i].episode_id) {
      out.emplace_back(items.data() + begin, i + 1 - begin);
      begin = i + 1;
    }
  }
  return out;
}
}  // namespace detail

// Append-only dataset of raw transitions for one environment.
class Dataset {
 public:
  explicit Dataset(std::string env_id) : env_id_(std::move(env_id)) {}

  const std::string& env_id() const { return env_id_; }
  size_t size() const { return items_.size(); }
  bool empty() const { return items_.empty(); }
  const Transition& operator[](size_t i) const { return items_[i]; }
  std::span<const Transition> all() const { return items_; }

  // Rejects out-of-order t, duplicate (episode_id, t), appends after a
  // terminal step, and episode ids that go backwards.
  void append(Transition tr);

  std::vector<std::span<const Transition>> episodes() const {
    return detail::episode_slices(items_);
  }

  void save(const std::filesystem::path& path) const;
  static Dataset load(const std::filesystem::path& path);
  void export_csv(const std::filesystem::path& path) const;

  bool operator==(const Dataset& other) const;

 private:
  std::string env_id_;
  std::vector<Transition> items_;
};

// Same contract over shaped transitions (the augmented dataset D').
class ShapedDataset {
 public:
  explicit ShapedDataset(std::string env_id) : env_id_(std::move(env_id)) {}

  const std::string& env_id() const { return env_id_; }
  size_t size() const { return items_.size(); }
  bool empty() const { return items_.empty(); }
  const ShapedTransition& operator[](size_t i) const { return items_[i]; }
  std::span<const ShapedTransition> all() const { return items_; }

  void append(ShapedTransition tr);

  std::vector<std::span<const ShapedTransition>> episodes() const {
    return detail::episode_slices(items_);
  }

  void save(const std::filesystem::path& path) const;
  static ShapedDataset load(const std::filesystem::path& path);
  void export_csv(const std::filesystem::path& path) const;

 private:
  std::string env_id_;
  std::vector<ShapedTransition> items_;
};

}  // namespace rsw
