#pragma once

// Run manifests written beside every output file, and per-directory writer
// locks.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace crosspref {

struct RunManifest {
  std::string command;
  std::string config_hash;  // SHA-256 of the canonical command settings
  std::map<std::string, std::string> input_digests;   // path -> SHA-256 of the bytes
  std::map<std::string, std::string> output_digests;  // path -> SHA-256 of the bytes
  std::uint64_t seed = 0;
  std::string tool_version;
  std::string started;  // UTC, ISO 8601
  std::string finished;

  bool operator==(const RunManifest&) const = default;
};

std::string tool_version();
std::string utc_timestamp();

// "<output>.manifest.json"
std::filesystem::path manifest_path(const std::filesystem::path& output);

std::string manifest_json(const RunManifest& m);
RunManifest parse_manifest(std::string_view text, std::string_view source = "<manifest>");

// Reads the sibling manifest of `output`, if there is one. A present but
// unreadable manifest throws DataError.
std::optional<RunManifest> read_manifest(const std::filesystem::path& output);

// Digests every output and writes the same manifest beside each of them.
void write_manifests(RunManifest m, const std::vector<std::filesystem::path>& outputs);

std::map<std::string, std::string> digest_files(const std::vector<std::filesystem::path>& paths);

// Exclusive writer lock: creates "<dir>/.crosspref.lock" or throws
// UsageError when another process holds it. Re-entrant within a process.
class DirectoryLock {
 public:
  explicit DirectoryLock(const std::filesystem::path& dir);
  ~DirectoryLock();
  DirectoryLock(const DirectoryLock&) = delete;
  DirectoryLock& operator=(const DirectoryLock&) = delete;

 private:
  std::filesystem::path lock_;
  bool owner_ = false;
};

}  // namespace crosspref
