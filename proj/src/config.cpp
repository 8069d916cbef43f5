#include "pass/config.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

namespace pass {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

}  // namespace

KeyValues KeyValues::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

KeyValues KeyValues::parse(const std::string& text) {
  KeyValues out;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(lineno) +
                        " is not `key = value`: " + line);
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError("empty key on config line " + std::to_string(lineno));
    out.kv_[key] = value;
  }
  return out;
}

bool KeyValues::has(const std::string& key) const { return kv_.count(key) > 0; }

std::string KeyValues::get_str(const std::string& key, const std::string& fallback) {
  read_.insert(key);
  auto it = kv_.find(key);
  return it == kv_.end() ? fallback : it->second;
}

std::string KeyValues::require_str(const std::string& key) {
  read_.insert(key);
  auto it = kv_.find(key);
  if (it == kv_.end()) throw ConfigError("missing required config key: " + key);
  return it->second;
}

int KeyValues::get_int(const std::string& key, int fallback) {
  const std::string v = get_str(key, "");
  if (v.empty()) return fallback;
  try {
    size_t pos = 0;
    const int r = std::stoi(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return r;
  } catch (const std::exception&) {
    throw ConfigError("config key " + key + " is not an integer: " + v);
  }
}

float KeyValues::get_float(const std::string& key, float fallback) {
  const std::string v = get_str(key, "");
  if (v.empty()) return fallback;
  try {
    size_t pos = 0;
    const float r = std::stof(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return r;
  } catch (const std::exception&) {
    throw ConfigError("config key " + key + " is not a number: " + v);
  }
}

bool KeyValues::get_bool(const std::string& key, bool fallback) {
  const std::string v = get_str(key, "");
  if (v.empty()) return fallback;
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError("config key " + key + " is not a boolean: " + v);
}

std::vector<std::string> KeyValues::unread_keys() const {
  std::vector<std::string> out;
  for (const auto& [k, v] : kv_)
    if (!read_.count(k)) out.push_back(k);
  return out;
}

}  // namespace pass
