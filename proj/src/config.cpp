#include "rsw/config.hpp"

#include <fstream>
#include <sstream>

#include "rsw/error.hpp"
#include "rsw/text.hpp"

namespace rsw {

Config Config::parse_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_string(buf.str());
}

Config Config::parse_string(const std::string& text) {
  Config cfg;
  std::string section;
  int line_no = 0;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    ++line_no;
    const auto comment = line.find_first_of("#;");
    if (comment != std::string::npos) line = line.substr(0, comment);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']')
        throw ConfigError("config line " + std::to_string(line_no) +
                          ": unterminated section header");
      section = trim(line.substr(1, line.size() - 2));
      if (section.empty())
        throw ConfigError("config line " + std::to_string(line_no) +
                          ": empty section name");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(line_no) +
                        ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty())
      throw ConfigError("config line " + std::to_string(line_no) + ": empty key");
    const std::string full = section.empty() ? key : section + "." + key;
    if (cfg.values_.count(full))
      throw ConfigError("config line " + std::to_string(line_no) +
                        ": duplicate key '" + full + "'");
    cfg.values_[full] = value;
  }
  return cfg;
}

bool Config::has(const std::string& key) const { return values_.count(key) > 0; }

std::string Config::require(const std::string& key) const {
  const auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("missing config key: " + key);
  return it->second;
}

std::string Config::get_string(const std::string& key,
                               const std::string& fallback) const {
  return has(key) ? values_.at(key) : fallback;
}

int64_t Config::get_int(const std::string& key, int64_t fallback) const {
  if (!has(key)) return fallback;
  const std::string v = require(key);
  size_t used = 0;
  int64_t out = 0;
  try {
    out = std::stoll(v, &used);
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': not an integer: " + v);
  }
  if (used != v.size())
    throw ConfigError("config key '" + key + "': not an integer: " + v);
  return out;
}

double Config::get_double(const std::string& key, double fallback) const {
  if (!has(key)) return fallback;
  const std::string v = require(key);
  size_t used = 0;
  double out = 0;
  try {
    out = std::stod(v, &used);
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': not a number: " + v);
  }
  if (used != v.size())
    throw ConfigError("config key '" + key + "': not a number: " + v);
  return out;
}

bool Config::get_bool(const std::string& key, bool fallback) const {
  if (!has(key)) return fallback;
  const std::string v = lowercase(require(key));
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError("config key '" + key + "': not a boolean: " + v);
}

std::vector<int64_t> Config::get_int_list(const std::string& key,
                                          std::vector<int64_t> fallback) const {
  if (!has(key)) return fallback;
  std::vector<int64_t> out;
  for (const auto& part : split(require(key), ',')) {
    const std::string p = trim(part);
    if (p.empty()) continue;
    try {
      out.push_back(std::stoll(p));
    } catch (const std::exception&) {
      throw ConfigError("config key '" + key + "': bad integer list entry: " + p);
    }
  }
  return out;
}

std::vector<double> Config::get_double_list(const std::string& key,
                                            std::vector<double> fallback) const {
  if (!has(key)) return fallback;
  std::vector<double> out;
  for (const auto& part : split(require(key), ',')) {
    const std::string p = trim(part);
    if (p.empty()) continue;
    try {
      out.push_back(std::stod(p));
    } catch (const std::exception&) {
      throw ConfigError("config key '" + key + "': bad number list entry: " + p);
    }
  }
  return out;
}

std::vector<std::string> Config::get_string_list(
    const std::string& key, std::vector<std::string> fallback) const {
  if (!has(key)) return fallback;
  std::vector<std::string> out;
  for (const auto& part : split(require(key), ',')) {
    const std::string p = trim(part);
    if (!p.empty()) out.push_back(p);
  }
  return out;
}

std::vector<std::string> Config::keys_in_section(const std::string& section) const {
  std::vector<std::string> out;
  const std::string prefix = section + ".";
  for (const auto& [k, v] : values_) {
    if (k.rfind(prefix, 0) == 0 &&
        k.find('.', prefix.size()) == std::string::npos) {
      out.push_back(k.substr(prefix.size()));
    }
  }
  return out;
}

}  // namespace rsw
