#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace rsw {

// Sectioned key-value experiment config:
//
//   [env]
//   scenario = congested_lane
//   [ppo]
//   total_timesteps = 10000
//
// '#' and ';' start comments. Keys are addressed as "section.key".
class Config {
 public:
  Config() = default;
  static Config parse_file(const std::filesystem::path& path);
  static Config parse_string(const std::string& text);

  bool has(const std::string& key) const;
  std::string get_string(const std::string& key, const std::string& fallback) const;
  int64_t get_int(const std::string& key, int64_t fallback) const;
  double get_double(const std::string& key, double fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  std::vector<int64_t> get_int_list(const std::string& key,
                                    std::vector<int64_t> fallback) const;
  std::vector<double> get_double_list(const std::string& key,
                                      std::vector<double> fallback) const;
  std::vector<std::string> get_string_list(const std::string& key,
                                           std::vector<std::string> fallback) const;

  // All keys under "section." — used to reject unknown keys early.
  std::vector<std::string> keys_in_section(const std::string& section) const;
  const std::map<std::string, std::string>& entries() const { return values_; }

  void set(const std::string& key, const std::string& value) { values_[key] = value; }

 private:
  std::string require(const std::string& key) const;
  std::map<std::string, std::string> values_;
};

}  // namespace rsw
