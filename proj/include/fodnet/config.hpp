// Human-readable configuration files shared by scene specs, training and
// experiment configs.
//
// Grammar (one statement per line):
//   # comment                  (also allowed after a value)
//   [section]  or  [a.b.c]     opens a section; keys below it are prefixed "a.b.c."
//   key = value                value runs to end of line, surrounding blanks trimmed
// Keys are [A-Za-z0-9_-]+; section names are dot-separated keys. Lists are
// comma-separated values; vectors are three comma-separated numbers.
#pragma once

#include <Eigen/Core>

#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace fodnet {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class Config {
 public:
  static Config parse(std::string_view text, const std::string& source = "<config>");
  static Config load(const std::filesystem::path& path);

  bool has(const std::string& key) const { return values_.count(key) != 0; }
  std::string get(const std::string& key) const;
  std::string get(const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& key) const;
  double get_double(const std::string& key, double fallback) const;
  long long get_int(const std::string& key) const;
  long long get_int(const std::string& key, long long fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  Eigen::Vector3d get_vec3(const std::string& key) const;
  std::vector<std::string> get_list(const std::string& key) const;

  void set(const std::string& key, const std::string& value) { values_[key] = value; }

  /// Names of the immediate child sections of `prefix` ("" for top level), sorted.
  std::vector<std::string> sections(const std::string& prefix = "") const;

  /// Sub-config with the `prefix.` stripped from every key under it.
  Config subtree(const std::string& prefix) const;

  /// Canonical text form; parse(dump()) reproduces the same key/value set.
  std::string dump() const;

  const std::map<std::string, std::string>& values() const { return values_; }
  const std::string& source() const { return source_; }

 private:
  [[noreturn]] void fail(const std::string& key, const std::string& what) const;

  std::map<std::string, std::string> values_;
  std::map<std::string, int> lines_;
  std::string source_;
};

}  // namespace fodnet
