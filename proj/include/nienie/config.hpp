#pragma once

#include <map>
#include <optional>
#include <string>
#include <string_view>

namespace nienie {

// Flat "key = value" configuration. Blank lines and lines starting with '#'
// are ignored. Any key can be overridden by the environment variable
// NIENIE_<KEY> (upper-cased, '.' and '-' become '_').
class FlatConfig {
 public:
  FlatConfig() = default;

  static FlatConfig parse(std::string_view text);
  static FlatConfig load(const std::string& path);

  void set(std::string key, std::string value) { values_[std::move(key)] = std::move(value); }
  // Environment override first, then the file value.
  std::optional<std::string> get(const std::string& key) const;
  std::string get_or(const std::string& key, std::string fallback) const;
  double get_double(const std::string& key, double fallback) const;
  long long get_int(const std::string& key, long long fallback) const;

  const std::map<std::string, std::string>& values() const { return values_; }

  static std::string env_name(std::string_view key);

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace nienie
