#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>

#include "foam/common.hpp"

namespace foam {

/// Flat key=value configuration ('#' starts a comment, blank lines ignored).
class Config {
 public:
  Config() = default;

  static Config parse_file(const std::string& path);
  static Config parse_string(const std::string& text);

  bool has(const std::string& key) const { return entries_.count(key) != 0; }
  void set(const std::string& key, const std::string& value) { entries_[key] = value; }

  std::string get_string(const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& key, double fallback) const;
  std::int64_t get_int(const std::string& key, std::int64_t fallback) const;
  std::uint64_t get_uint(const std::string& key, std::uint64_t fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;

  /// Throws ValueError naming any key outside the allowed set.
  void require_known(const std::set<std::string>& known) const;

  const std::map<std::string, std::string>& entries() const { return entries_; }
  std::string serialize() const;

 private:
  std::map<std::string, std::string> entries_;
};

}  // namespace foam
