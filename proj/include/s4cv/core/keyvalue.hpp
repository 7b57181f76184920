#pragma once

// Flat "key = value" text. '#' starts a comment; blank lines are ignored.

#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "s4cv/core/errors.hpp"

namespace s4cv {

using KeyValues = std::map<std::string, std::string>;

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r"), e = s.find_last_not_of(" \t\r");
  return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
}

inline KeyValues parse_key_values(const std::string& text, const std::string& origin) {
  KeyValues kv;
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      if (!trim(line).empty()) throw DataError(origin + ":" + std::to_string(lineno) + ": expected key = value");
      continue;
    }
    kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return kv;
}

inline KeyValues read_key_values(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot read " + path);
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_key_values(ss.str(), path);
}

inline void write_key_values(const std::string& path, const std::vector<std::pair<std::string, std::string>>& kv) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot write " + path);
  for (const auto& [k, v] : kv) os << k << " = " << v << '\n';
}

inline std::vector<std::string> split_list(const std::string& s, char sep = ',') {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream is(s);
  while (std::getline(is, cur, sep))
    if (!trim(cur).empty()) out.push_back(trim(cur));
  return out;
}

inline std::vector<int> parse_int_list(const std::string& s) {
  std::vector<int> out;
  for (const auto& t : split_list(s)) {
    std::size_t pos = 0;
    int v = 0;
    try {
      v = std::stoi(t, &pos);
    } catch (const std::exception&) {
      pos = 0;
    }
    if (pos != t.size()) throw ArgumentError("not an integer: '" + t + "'");
    out.push_back(v);
  }
  return out;
}

inline std::string join(const std::vector<int>& v, char sep = ',') {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? std::string(1, sep) : "") + std::to_string(v[i]);
  return s;
}

inline std::string join(const std::vector<std::string>& v, char sep = ',') {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? std::string(1, sep) : "") + v[i];
  return s;
}

// Entries whose key starts with prefix, with the prefix removed.
inline KeyValues with_prefix(const KeyValues& kv, const std::string& prefix) {
  KeyValues sub;
  for (const auto& [k, v] : kv)
    if (k.rfind(prefix, 0) == 0) sub[k.substr(prefix.size())] = v;
  return sub;
}

}  // namespace s4cv
