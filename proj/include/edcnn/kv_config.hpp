#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace edcnn {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Flat UTF-8 "key = value" text, one pair per line, '#' starts a comment.
/// Keys not declared by the consumer are rejected by check_known().
class KeyValueConfig {
 public:
  struct Entry {
    std::string value;
    int line = 0;
  };

  static KeyValueConfig parse(std::string_view text, const std::string& source = "<config>");
  static KeyValueConfig load(const std::filesystem::path& path);

  bool has(const std::string& key) const { return entries_.count(key) != 0; }
  const std::map<std::string, Entry>& entries() const { return entries_; }

  std::optional<std::string> get_string(const std::string& key) const;
  std::optional<double> get_double(const std::string& key) const;
  std::optional<std::int64_t> get_int(const std::string& key) const;
  std::optional<std::uint64_t> get_u64(const std::string& key) const;
  std::optional<bool> get_bool(const std::string& key) const;

  /// Throws ConfigError naming the first key outside `known` and its line.
  void check_known(const std::set<std::string>& known) const;

  void set(const std::string& key, const std::string& value);

  [[noreturn]] void fail(const std::string& key, const std::string& msg) const;

 private:
  std::string source_;
  std::map<std::string, Entry> entries_;
};

}  // namespace edcnn
