#pragma once

// Flat key/value configuration files.
//
//   # comment
//   seed = 7
//   [dpo]
//   lr = 2.0          -> key "dpo.lr"
//
// Keys are unique; values run to the end of the line (surrounding spaces and
// one pair of double quotes removed). Lists are comma separated.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace crosspref {

class Config {
 public:
  // Syntax errors throw UsageError naming source and line.
  static Config parse(std::string_view text, std::string_view source = "<config>");
  static Config load(const std::filesystem::path& path);

  bool has(const std::string& key) const { return values_.contains(key); }
  void set(const std::string& key, std::string value) { values_[key] = std::move(value); }

  // Typed getters return the fallback for absent keys and throw UsageError
  // for values that do not parse.
  std::string get(const std::string& key, const std::string& fallback = {}) const;
  std::int64_t get_int(const std::string& key, std::int64_t fallback) const;
  std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const;
  double get_double(const std::string& key, double fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  std::vector<std::string> get_list(const std::string& key,
                                    const std::vector<std::string>& fallback = {}) const;

  // UsageError for any key outside `known`.
  void require_known(const std::vector<std::string>& known) const;

  // CROCO_SEED, when set, replaces "seed".
  void apply_environment();

  const std::map<std::string, std::string>& values() const { return values_; }
  // Sorted "key=value" lines; hashing this gives the config digest.
  std::string canonical() const;

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace crosspref
