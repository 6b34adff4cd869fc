#include "ringcast/config.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <fstream>
#include <sstream>

namespace ringcast::config {

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return std::tolower(c); });
  return out;
}

// Splits "100us" into 100 and "us".
std::pair<double, std::string> number_and_unit(std::string_view text) {
  text = trim(text);
  std::size_t i = 0;
  while (i < text.size() && (std::isdigit(static_cast<unsigned char>(text[i])) || text[i] == '.' ||
                             (i == 0 && text[i] == '-'))) {
    ++i;
  }
  if (i == 0) throw ConfigError("expected a number in '" + std::string(text) + "'");
  double value = 0;
  try {
    std::size_t used = 0;
    value = std::stod(std::string(text.substr(0, i)), &used);
    if (used != i) throw std::invalid_argument("");
  } catch (const std::exception&) {
    throw ConfigError("bad number in '" + std::string(text) + "'");
  }
  return {value, lower(trim(text.substr(i)))};
}

}  // namespace

std::vector<std::string> split(std::string_view text, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (;;) {
    const std::size_t at = text.find(sep, start);
    auto piece = trim(text.substr(start, at == std::string_view::npos ? std::string_view::npos : at - start));
    if (!piece.empty()) out.emplace_back(piece);
    if (at == std::string_view::npos) break;
    start = at + 1;
  }
  return out;
}

std::int64_t parse_int(std::string_view text) {
  text = trim(text);
  std::int64_t v = 0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size() || text.empty()) {
    throw ConfigError("expected an integer, got '" + std::string(text) + "'");
  }
  return v;
}

bool parse_bool(std::string_view text) {
  const std::string t = lower(trim(text));
  if (t == "true" || t == "on" || t == "yes" || t == "1") return true;
  if (t == "false" || t == "off" || t == "no" || t == "0") return false;
  throw ConfigError("expected a boolean, got '" + t + "'");
}

std::int64_t parse_size(std::string_view text) {
  auto [value, unit] = number_and_unit(text);
  double scale = 1;
  if (unit.empty() || unit == "b") {
    scale = 1;
  } else if (unit == "kb" || unit == "k") {
    scale = 1024;
  } else if (unit == "mb" || unit == "m") {
    scale = 1024.0 * 1024.0;
  } else {
    throw ConfigError("unknown size unit '" + unit + "'");
  }
  if (value < 0) throw ConfigError("size must not be negative: '" + std::string(text) + "'");
  return static_cast<std::int64_t>(value * scale);
}

std::int64_t parse_duration_ns(std::string_view text) {
  auto [value, unit] = number_and_unit(text);
  double scale = 1;
  if (unit.empty() || unit == "ns") {
    scale = 1;
  } else if (unit == "us" || unit == "µs") {
    scale = 1e3;
  } else if (unit == "ms") {
    scale = 1e6;
  } else if (unit == "s") {
    scale = 1e9;
  } else {
    throw ConfigError("unknown time unit '" + unit + "'");
  }
  if (value < 0) throw ConfigError("duration must not be negative: '" + std::string(text) + "'");
  return static_cast<std::int64_t>(value * scale + 0.5);
}

Delay Delay::parse(std::string_view text) {
  const std::string t = lower(trim(text));
  if (t == "none" || t == "0") return none();
  if (t == "inf" || t == "infinite" || t == "never") return forever();
  return {parse_duration_ns(t), false};
}

std::string Delay::to_string() const {
  if (infinite) return "inf";
  if (ns == 0) return "none";
  if (ns % 1000000 == 0) return std::to_string(ns / 1000000) + "ms";
  if (ns % 1000 == 0) return std::to_string(ns / 1000) + "us";
  return std::to_string(ns) + "ns";
}

KvConfig KvConfig::parse(std::string_view text, const std::string& source) {
  KvConfig cfg;
  std::istringstream in{std::string(text)};
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::string_view view = line;
    if (auto hash = view.find('#'); hash != std::string_view::npos) view = view.substr(0, hash);
    view = trim(view);
    if (view.empty()) continue;
    const auto eq = view.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError(source + ":" + std::to_string(line_no) + ": expected key = value");
    }
    const auto key = trim(view.substr(0, eq));
    if (key.empty()) throw ConfigError(source + ":" + std::to_string(line_no) + ": empty key");
    cfg.set(std::string(key), std::string(trim(view.substr(eq + 1))));
  }
  return cfg;
}

KvConfig KvConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str(), path.string());
}

void KvConfig::set(const std::string& key, const std::string& value) { entries_[key] = value; }

void KvConfig::apply_override(std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos || trim(assignment.substr(0, eq)).empty()) {
    throw ConfigError("override must look like key=value, got '" + std::string(assignment) + "'");
  }
  set(std::string(trim(assignment.substr(0, eq))), std::string(trim(assignment.substr(eq + 1))));
}

std::optional<std::string> KvConfig::get(const std::string& key) const {
  auto it = entries_.find(key);
  if (it == entries_.end()) return std::nullopt;
  return it->second;
}

std::string KvConfig::get_string(const std::string& key, const std::string& fallback) const {
  return get(key).value_or(fallback);
}

std::int64_t KvConfig::get_int(const std::string& key, std::int64_t fallback) const {
  auto v = get(key);
  if (!v) return fallback;
  try {
    return parse_int(*v);
  } catch (const ConfigError& e) {
    throw ConfigError(key + ": " + e.what());
  }
}

double KvConfig::get_double(const std::string& key, double fallback) const {
  auto v = get(key);
  if (!v) return fallback;
  try {
    std::size_t used = 0;
    const double d = std::stod(*v, &used);
    if (used != v->size()) throw std::invalid_argument("");
    return d;
  } catch (const std::exception&) {
    throw ConfigError(key + ": expected a number, got '" + *v + "'");
  }
}

bool KvConfig::get_bool(const std::string& key, bool fallback) const {
  auto v = get(key);
  if (!v) return fallback;
  try {
    return parse_bool(*v);
  } catch (const ConfigError& e) {
    throw ConfigError(key + ": " + e.what());
  }
}

std::int64_t KvConfig::get_size(const std::string& key, std::int64_t fallback) const {
  auto v = get(key);
  if (!v) return fallback;
  try {
    return parse_size(*v);
  } catch (const ConfigError& e) {
    throw ConfigError(key + ": " + e.what());
  }
}

}  // namespace ringcast::config
