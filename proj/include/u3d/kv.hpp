#pragma once

#include <charconv>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <type_traits>
#include <utility>
#include <vector>

#include "u3d/errors.hpp"

namespace u3d {

/// Shortest decimal text that parses back to exactly `v`.
template <typename T>
std::string format_number(T v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, r.ptr);
}

template <typename T>
T parse_number(std::string_view s, std::string_view what = "value") {
  T v{};
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc{} || r.ptr != s.data() + s.size()) {
    throw FormatError("cannot parse " + std::string(what) + " from '" + std::string(s) + "'");
  }
  return v;
}

/// Ordered `key=value` text manifest, one entry per line; '#' starts a comment.
class KeyValues {
 public:
  void set(std::string key, std::string value) {
    for (auto& [k, v] : entries_) {
      if (k == key) {
        v = std::move(value);
        return;
      }
    }
    entries_.emplace_back(std::move(key), std::move(value));
  }
  void set(std::string key, const char* value) { set(std::move(key), std::string(value)); }
  template <typename T>
    requires std::is_arithmetic_v<T>
  void set(std::string key, T value) {
    if constexpr (std::is_same_v<T, bool>) {
      set(std::move(key), std::string(value ? "true" : "false"));
    } else {
      set(std::move(key), format_number(value));
    }
  }

  bool contains(std::string_view key) const {
    for (const auto& e : entries_) {
      if (e.first == key) return true;
    }
    return false;
  }

  const std::string& get(std::string_view key) const {
    for (const auto& e : entries_) {
      if (e.first == key) return e.second;
    }
    throw FormatError("manifest key '" + std::string(key) + "' missing");
  }

  double get_double(std::string_view key) const { return parse_number<double>(get(key), key); }
  float get_float(std::string_view key) const { return parse_number<float>(get(key), key); }
  std::size_t get_size(std::string_view key) const { return parse_number<std::size_t>(get(key), key); }
  std::uint64_t get_u64(std::string_view key) const { return parse_number<std::uint64_t>(get(key), key); }
  bool get_bool(std::string_view key) const {
    const auto& v = get(key);
    if (v == "true") return true;
    if (v == "false") return false;
    throw FormatError("manifest key '" + std::string(key) + "' is not a boolean");
  }

  const std::vector<std::pair<std::string, std::string>>& entries() const { return entries_; }

  std::string str() const {
    std::string out;
    for (const auto& [k, v] : entries_) out += k + "=" + v + "\n";
    return out;
  }

  static KeyValues parse(std::string_view text) {
    KeyValues kv;
    std::size_t pos = 0;
    while (pos < text.size()) {
      auto end = text.find('\n', pos);
      if (end == std::string_view::npos) end = text.size();
      std::string_view line = text.substr(pos, end - pos);
      pos = end + 1;
      if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
      if (line.empty() || line.front() == '#') continue;
      const auto eq = line.find('=');
      if (eq == std::string_view::npos) throw FormatError("manifest line without '=': " + std::string(line));
      kv.set(std::string(line.substr(0, eq)), std::string(line.substr(eq + 1)));
    }
    return kv;
  }

  void save(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out << str();
    if (!out) throw IoError("write failed for " + path.string());
  }

  static KeyValues load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse(ss.str());
  }

 private:
  std::vector<std::pair<std::string, std::string>> entries_;
};

}  // namespace u3d
