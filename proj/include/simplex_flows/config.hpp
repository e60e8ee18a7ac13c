#pragma once

// Flat key = value run configuration. Every recognised key has a built-in
// default; a config file and then command-line flags override it.

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace sflow {

struct GridSpec {
  double lo = 0.0;
  double hi = 0.0;
  long count = 1;

  /// count evenly spaced values from lo to hi inclusive.
  std::vector<double> values() const;
  static GridSpec parse(const std::string &text);
};

class RunConfig {
public:
  /// All keys at their defaults.
  RunConfig();

  /// Defaults overridden by the file at `path`. Lines are `key = value`;
  /// blank lines and lines starting with '#' or ';' are ignored, as are
  /// `[section]` headers (the format is flat).
  static RunConfig load(const std::filesystem::path &path);

  /// Parses text in the same format; `origin` names it in error messages.
  void merge_text(const std::string &text, const std::string &origin);

  /// Sets one key after validating it; throws ConfigError for unknown keys
  /// and malformed values.
  void set(const std::string &key, const std::string &value);

  bool has(const std::string &key) const;
  const std::string &get(const std::string &key) const;
  double get_double(const std::string &key) const;
  long get_long(const std::string &key) const;
  std::uint64_t get_seed() const;
  std::vector<double> get_list(const std::string &key) const;
  GridSpec get_grid(const std::string &key) const;

  const std::map<std::string, std::string> &values() const { return values_; }
  static const std::map<std::string, std::string> &defaults();

private:
  std::map<std::string, std::string> values_;
};

} // namespace sflow
