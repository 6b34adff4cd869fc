#pragma once

// Plain-text key=value configuration.
//
//   # comment
//   nodes = 4
//   message_size = 1KB      # trailing comments are allowed
//
// Later assignments to a key replace earlier ones; overrides given on the
// command line are applied last.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace ringcast::config {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class KvConfig {
 public:
  static KvConfig parse(std::string_view text, const std::string& source = "<string>");
  static KvConfig load(const std::filesystem::path& path);

  void set(const std::string& key, const std::string& value);
  /// "key=value"
  void apply_override(std::string_view assignment);

  bool has(const std::string& key) const { return entries_.count(key) != 0; }
  std::optional<std::string> get(const std::string& key) const;

  std::string get_string(const std::string& key, const std::string& fallback) const;
  std::int64_t get_int(const std::string& key, std::int64_t fallback) const;
  double get_double(const std::string& key, double fallback) const;
  /// true/false, on/off, yes/no, 1/0
  bool get_bool(const std::string& key, bool fallback) const;
  /// Byte count with optional B, KB, MB suffix (powers of 1024).
  std::int64_t get_size(const std::string& key, std::int64_t fallback) const;

  const std::map<std::string, std::string>& entries() const { return entries_; }

 private:
  std::map<std::string, std::string> entries_;
};

std::int64_t parse_int(std::string_view text);
bool parse_bool(std::string_view text);
std::int64_t parse_size(std::string_view text);
/// "250ns", "1us", "100us", "1ms", "2s"; a bare number is nanoseconds.
std::int64_t parse_duration_ns(std::string_view text);
/// Trimmed pieces; empty ones are dropped.
std::vector<std::string> split(std::string_view text, char sep);

/// A busy-wait delay; `infinite` means the actor never acts.
struct Delay {
  std::int64_t ns = 0;
  bool infinite = false;

  /// "none", "inf" / "infinite", or a duration.
  static Delay parse(std::string_view text);
  static Delay none() { return {}; }
  static Delay forever() { return {0, true}; }
  std::string to_string() const;
  friend bool operator==(const Delay&, const Delay&) = default;
};

}  // namespace ringcast::config
