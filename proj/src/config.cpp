#include "tforce/config.hpp"

#include "tforce/error.hpp"

#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace tforce::config {

namespace {

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

// Drops a trailing comment that is not inside a string.
std::string_view strip_comment(std::string_view s) {
  bool quoted = false;
  for (std::size_t k = 0; k < s.size(); ++k) {
    if (s[k] == '\\' && quoted) {
      ++k;
    } else if (s[k] == '"') {
      quoted = !quoted;
    } else if (s[k] == '#' && !quoted) {
      return s.substr(0, k);
    }
  }
  return s;
}

bool valid_key(std::string_view k) {
  if (k.empty()) return false;
  for (char c : k) {
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-' || c == '.')) return false;
  }
  return true;
}

std::optional<double> parse_number(std::string_view s) {
  s = trim(s);
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  std::string cleaned;
  for (char c : s) {
    if (c != '_') cleaned += c;
  }
  if (cleaned == "inf") return HUGE_VAL;
  if (cleaned == "-inf") return -HUGE_VAL;
  double v = 0.0;
  const auto* end = cleaned.data() + cleaned.size();
  const auto res = std::from_chars(cleaned.data(), end, v);
  if (res.ec != std::errc() || res.ptr != end || cleaned.empty()) return std::nullopt;
  return v;
}

const char* type_name(const Value& v) {
  switch (v.index()) {
    case 0: return "number";
    case 1: return "boolean";
    case 2: return "string";
    default: return "list";
  }
}

}  // namespace

Config Config::parse(std::string_view text, const std::string& origin) {
  Config cfg;
  cfg.source_ = std::string(text);
  cfg.origin_ = origin;
  std::string section;
  std::istringstream in{std::string(text)};
  std::string raw;
  int line_no = 0;
  auto fail = [&](const std::string& why) {
    throw ConfigError(origin + ":" + std::to_string(line_no) + ": " + why);
  };

  while (std::getline(in, raw)) {
    ++line_no;
    const std::string_view line = trim(strip_comment(raw));
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') fail("unterminated section header");
      section = std::string(trim(line.substr(1, line.size() - 2)));
      if (!valid_key(section)) fail("invalid section name '" + section + "'");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) fail("expected 'key = value'");
    const std::string key(trim(line.substr(0, eq)));
    if (!valid_key(key)) fail("invalid key '" + key + "'");
    const std::string_view rhs = trim(line.substr(eq + 1));
    if (rhs.empty()) fail("missing value for '" + key + "'");

    Value value;
    if (rhs.front() == '"') {
      std::string s;
      std::size_t k = 1;
      bool closed = false;
      for (; k < rhs.size(); ++k) {
        if (rhs[k] == '\\' && k + 1 < rhs.size()) {
          const char e = rhs[++k];
          s += e == 'n' ? '\n' : e == 't' ? '\t' : e;
        } else if (rhs[k] == '"') {
          closed = true;
          break;
        } else {
          s += rhs[k];
        }
      }
      if (!closed || k + 1 != rhs.size()) fail("malformed string for '" + key + "'");
      value = s;
    } else if (rhs == "true" || rhs == "false") {
      value = rhs == "true";
    } else if (rhs.front() == '[') {
      if (rhs.back() != ']') fail("unterminated list for '" + key + "'");
      std::vector<double> items;
      const std::string_view body = trim(rhs.substr(1, rhs.size() - 2));
      std::size_t pos = 0;
      while (!body.empty() && pos <= body.size()) {
        const auto comma = body.find(',', pos);
        const std::string_view item = trim(body.substr(pos, comma == std::string_view::npos ? body.npos : comma - pos));
        if (item.empty()) {
          if (comma == std::string_view::npos) break;  // trailing comma
          fail("empty list element for '" + key + "'");
        }
        const auto v = parse_number(item);
        if (!v) fail("list '" + key + "' must contain numbers only");
        items.push_back(*v);
        if (comma == std::string_view::npos) break;
        pos = comma + 1;
      }
      value = items;
    } else {
      const auto v = parse_number(rhs);
      if (!v) fail("cannot parse value of '" + key + "' (strings need double quotes)");
      value = *v;
    }
    cfg.values_[section.empty() ? key : section + "." + key] = std::move(value);
  }
  return cfg;
}

Config Config::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse(ss.str(), path.string());
}

std::vector<std::string> Config::keys() const {
  std::vector<std::string> out;
  for (const auto& [k, v] : values_) out.push_back(k);
  return out;
}

double Config::number(const std::string& key, double fallback) const {
  const auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  if (const auto* d = std::get_if<double>(&it->second)) return *d;
  throw ConfigError(origin_ + ": '" + key + "' must be a number, got a " + type_name(it->second));
}

std::int64_t Config::integer(const std::string& key, std::int64_t fallback) const {
  if (!has(key)) return fallback;
  const double v = number(key, 0.0);
  if (v != std::floor(v) || std::abs(v) > 9007199254740992.0) {
    throw ConfigError(origin_ + ": '" + key + "' must be an integer");
  }
  return static_cast<std::int64_t>(v);
}

std::uint64_t Config::seed(const std::string& key, std::uint64_t fallback) const {
  if (!has(key)) return fallback;
  const std::int64_t v = integer(key, 0);
  if (v < 0) throw ConfigError(origin_ + ": '" + key + "' must be non-negative");
  return static_cast<std::uint64_t>(v);
}

bool Config::boolean(const std::string& key, bool fallback) const {
  const auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  if (const auto* b = std::get_if<bool>(&it->second)) return *b;
  throw ConfigError(origin_ + ": '" + key + "' must be true or false");
}

std::string Config::string(const std::string& key, const std::string& fallback) const {
  const auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  if (const auto* s = std::get_if<std::string>(&it->second)) return *s;
  throw ConfigError(origin_ + ": '" + key + "' must be a quoted string, got a " + type_name(it->second));
}

std::vector<double> Config::numbers(const std::string& key, const std::vector<double>& fallback) const {
  const auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  if (const auto* l = std::get_if<std::vector<double>>(&it->second)) return *l;
  if (const auto* d = std::get_if<double>(&it->second)) return {*d};
  throw ConfigError(origin_ + ": '" + key + "' must be a list of numbers");
}

std::uint64_t Config::hash() const { return fnv1a(source_); }

std::uint64_t fnv1a(std::string_view data) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : data) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace tforce::config
