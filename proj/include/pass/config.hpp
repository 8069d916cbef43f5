#pragma once

#include <map>
#include <set>
#include <string>
#include <vector>

#include "pass/data.hpp"

namespace pass {

// `key = value` text file, '#' comments. Tracks which keys were read so
// callers can reject unknown ones by name.
class KeyValues {
 public:
  static KeyValues load(const std::string& path);
  static KeyValues parse(const std::string& text);

  bool has(const std::string& key) const;
  std::string get_str(const std::string& key, const std::string& fallback);
  std::string require_str(const std::string& key);
  int get_int(const std::string& key, int fallback);
  float get_float(const std::string& key, float fallback);
  bool get_bool(const std::string& key, bool fallback);

  // keys present in the file but never read
  std::vector<std::string> unread_keys() const;
  const std::map<std::string, std::string>& all() const { return kv_; }

 private:
  std::map<std::string, std::string> kv_;
  mutable std::set<std::string> read_;
};

}  // namespace pass
