#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>

namespace cmatch {

// Flat `key = value` text with `#` comments. Used for params.cfg, synthetic
// episode specs, pipeline configs and metric reports.
class KeyValueConfig {
 public:
  static KeyValueConfig parse(const std::string& text);
  static KeyValueConfig load(const std::filesystem::path& path);

  void set(const std::string& key, std::string value);
  bool contains(const std::string& key) const { return entries_.contains(key); }
  const std::map<std::string, std::string>& entries() const noexcept { return entries_; }

  std::optional<std::string> get(const std::string& key) const;
  std::string get_string(const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& key, double fallback) const;
  long long get_int(const std::string& key, long long fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;

 private:
  std::map<std::string, std::string> entries_;
};

// Parses "on"/"off"/"true"/"false"/"1"/"0"; throws ConfigError otherwise.
bool parse_switch(const std::string& key, const std::string& value);

}  // namespace cmatch
