#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

// Minimal TOML-like configuration:
//
//   # comment
//   [section]
//   key = 1.5
//   name = "fingertip"
//   flag = true
//   gains = [5, 5, 5]
//
// Keys are addressed as "section.key". Later assignments override earlier
// ones.
namespace tforce::config {

using Value = std::variant<double, bool, std::string, std::vector<double>>;

class Config {
 public:
  Config() = default;

  /// Throws ConfigError with `origin` and the line number on malformed input.
  static Config parse(std::string_view text, const std::string& origin = "<config>");
  /// Throws ConfigError naming the path when it cannot be read.
  static Config load(const std::filesystem::path& path);

  bool has(const std::string& key) const { return values_.count(key) != 0; }
  std::vector<std::string> keys() const;

  double number(const std::string& key, double fallback) const;
  std::int64_t integer(const std::string& key, std::int64_t fallback) const;
  std::uint64_t seed(const std::string& key, std::uint64_t fallback) const;
  bool boolean(const std::string& key, bool fallback) const;
  std::string string(const std::string& key, const std::string& fallback) const;
  /// A single number is accepted as a one-element list.
  std::vector<double> numbers(const std::string& key, const std::vector<double>& fallback) const;

  void set(const std::string& key, Value v) { values_[key] = std::move(v); }

  const std::string& source() const { return source_; }
  /// FNV-1a of the source text; 64-bit.
  std::uint64_t hash() const;

 private:
  std::map<std::string, Value> values_;
  std::string source_;
  std::string origin_;
};

std::uint64_t fnv1a(std::string_view data);
std::string hex64(std::uint64_t v);

}  // namespace tforce::config
