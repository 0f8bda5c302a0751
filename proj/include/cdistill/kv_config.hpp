#pragma once

#include <algorithm>
#include <charconv>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <fmt/core.h>

#include "cdistill/errors.hpp"

namespace cdistill {

/// Flat `key = value` file. `#` starts a comment, blank lines are ignored,
/// keys may repeat only if the caller says so (they never do). Every lookup
/// marks the key as used so leftovers can be reported as unknown.
class KvConfig {
 public:
  struct Entry {
    std::string value;
    std::size_t line = 0;
  };

  static KvConfig parse(std::string_view text, std::string source = "<string>") {
    KvConfig cfg;
    cfg.source_ = std::move(source);
    std::size_t line_no = 0;
    std::size_t pos = 0;
    while (pos <= text.size()) {
      const std::size_t end = std::min(text.find('\n', pos), text.size());
      std::string_view line = text.substr(pos, end - pos);
      pos = end + 1;
      ++line_no;
      if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
      line = trim(line);
      if (line.empty()) {
        if (end == text.size()) break;
        continue;
      }
      const auto eq = line.find('=');
      if (eq == std::string_view::npos)
        throw ConfigError(fmt::format("{}:{}: expected 'key = value', got '{}'", cfg.source_, line_no, line));
      const std::string key(trim(line.substr(0, eq)));
      const std::string value(trim(line.substr(eq + 1)));
      if (key.empty()) throw ConfigError(fmt::format("{}:{}: empty key", cfg.source_, line_no));
      if (auto it = cfg.entries_.find(key); it != cfg.entries_.end())
        throw ConfigError(
            fmt::format("{}:{}: duplicate key '{}' (first set on line {})", cfg.source_, line_no, key, it->second.line));
      cfg.entries_.emplace(key, Entry{value, line_no});
      cfg.order_.push_back(key);
      if (end == text.size()) break;
    }
    return cfg;
  }

  static KvConfig load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError(fmt::format("cannot open config file '{}'", path));
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse(ss.str(), path);
  }

  const std::string& source() const noexcept { return source_; }
  const std::vector<std::string>& keys() const noexcept { return order_; }

  bool has(const std::string& key) const { return entries_.count(key) != 0; }

  /// Keys starting with `prefix`, in file order.
  std::vector<std::string> keys_with_prefix(std::string_view prefix) const {
    std::vector<std::string> out;
    for (const auto& k : order_)
      if (std::string_view(k).substr(0, prefix.size()) == prefix) out.push_back(k);
    return out;
  }

  const Entry& entry(const std::string& key) const {
    const auto it = entries_.find(key);
    if (it == entries_.end()) throw ConfigError(fmt::format("{}: missing required key '{}'", source_, key));
    used_.insert(key);
    return it->second;
  }

  std::string get_string(const std::string& key) const { return entry(key).value; }
  std::string get_string(const std::string& key, std::string fallback) const {
    return has(key) ? get_string(key) : fallback;
  }

  double get_double(const std::string& key) const {
    const Entry& e = entry(key);
    return to_double(e.value, key, e.line);
  }
  double get_double(const std::string& key, double fallback) const { return has(key) ? get_double(key) : fallback; }

  std::uint64_t get_uint(const std::string& key) const {
    const Entry& e = entry(key);
    return to_uint(e.value, key, e.line);
  }
  std::uint64_t get_uint(const std::string& key, std::uint64_t fallback) const {
    return has(key) ? get_uint(key) : fallback;
  }

  bool get_bool(const std::string& key, bool fallback) const {
    if (!has(key)) return fallback;
    const Entry& e = entry(key);
    if (e.value == "true" || e.value == "1" || e.value == "yes") return true;
    if (e.value == "false" || e.value == "0" || e.value == "no") return false;
    throw ConfigError(fmt::format("{}:{}: '{}' expects a boolean, got '{}'", source_, e.line, key, e.value));
  }

  /// Comma- or whitespace-separated list.
  std::vector<std::string> get_list(const std::string& key) const {
    std::vector<std::string> out;
    std::string cur;
    for (char c : entry(key).value) {
      if (c == ',' || c == ' ' || c == '\t') {
        if (!cur.empty()) out.push_back(std::move(cur));
        cur.clear();
      } else {
        cur.push_back(c);
      }
    }
    if (!cur.empty()) out.push_back(std::move(cur));
    return out;
  }

  std::vector<double> get_double_list(const std::string& key) const {
    const std::size_t line = entry(key).line;
    std::vector<double> out;
    for (const auto& s : get_list(key)) out.push_back(to_double(s, key, line));
    return out;
  }

  std::vector<std::uint64_t> get_uint_list(const std::string& key) const {
    const std::size_t line = entry(key).line;
    std::vector<std::uint64_t> out;
    for (const auto& s : get_list(key)) out.push_back(to_uint(s, key, line));
    return out;
  }

  /// Throws on the first key nobody asked for.
  void reject_unknown() const {
    for (const auto& k : order_)
      if (!used_.count(k))
        throw ConfigError(fmt::format("{}:{}: unknown key '{}'", source_, entries_.at(k).line, k));
  }

  [[noreturn]] void fail(const std::string& key, std::string_view message) const {
    const auto it = entries_.find(key);
    if (it == entries_.end()) throw ConfigError(fmt::format("{}: {}: {}", source_, key, message));
    throw ConfigError(fmt::format("{}:{}: {}: {}", source_, it->second.line, key, message));
  }

 private:
  static std::string_view trim(std::string_view s) noexcept {
    const auto ws = " \t\r";
    const auto b = s.find_first_not_of(ws);
    if (b == std::string_view::npos) return {};
    return s.substr(b, s.find_last_not_of(ws) - b + 1);
  }

  double to_double(const std::string& s, const std::string& key, std::size_t line) const {
    if (s == "inf" || s == "+inf") return std::numeric_limits<double>::infinity();
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size())
      throw ConfigError(fmt::format("{}:{}: '{}' expects a number, got '{}'", source_, line, key, s));
    return v;
  }

  std::uint64_t to_uint(const std::string& s, const std::string& key, std::size_t line) const {
    std::uint64_t v = 0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size())
      throw ConfigError(fmt::format("{}:{}: '{}' expects a non-negative integer, got '{}'", source_, line, key, s));
    return v;
  }

  std::string source_;
  std::map<std::string, Entry> entries_;
  std::vector<std::string> order_;
  mutable std::set<std::string> used_;
};

}  // namespace cdistill
