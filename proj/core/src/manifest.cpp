#include "crosspref/manifest.hpp"

#include <chrono>
#include <cstdio>
#include <ctime>
#include <mutex>
#include <set>

#include <fcntl.h>
#include <unistd.h>

#include "crosspref/digest.hpp"
#include "crosspref/error.hpp"
#include "json.hpp"

#ifndef CROSSPREF_VERSION
#define CROSSPREF_VERSION "0.0.0"
#endif

namespace crosspref {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

std::string tool_version() { return "crosspref " CROSSPREF_VERSION; }

std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::now();
  const auto t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

fs::path manifest_path(const fs::path& output) {
  auto p = output;
  p += ".manifest.json";
  return p;
}

std::string manifest_json(const RunManifest& m) {
  ordered_json j;
  j["command"] = m.command;
  j["config_hash"] = m.config_hash;
  j["input_digests"] = m.input_digests;
  j["output_digests"] = m.output_digests;
  j["seed"] = m.seed;
  j["tool_version"] = m.tool_version;
  j["started"] = m.started;
  j["finished"] = m.finished;
  return j.dump(2) + "\n";
}

RunManifest parse_manifest(std::string_view text, std::string_view source) {
  try {
    const auto j = nlohmann::json::parse(text);
    RunManifest m;
    m.command = j.at("command").get<std::string>();
    m.config_hash = j.at("config_hash").get<std::string>();
    m.input_digests = j.at("input_digests").get<std::map<std::string, std::string>>();
    m.output_digests = j.at("output_digests").get<std::map<std::string, std::string>>();
    m.seed = j.at("seed").get<std::uint64_t>();
    m.tool_version = j.at("tool_version").get<std::string>();
    m.started = j.at("started").get<std::string>();
    m.finished = j.at("finished").get<std::string>();
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string(source) + ": unreadable manifest: " + e.what());
  }
}

std::optional<RunManifest> read_manifest(const fs::path& output) {
  const auto p = manifest_path(output);
  if (!fs::exists(p)) return std::nullopt;
  return parse_manifest(read_file(p), p.string());
}

std::map<std::string, std::string> digest_files(const std::vector<fs::path>& paths) {
  std::map<std::string, std::string> out;
  for (const auto& p : paths) out[p.string()] = file_sha256(p);
  return out;
}

void write_manifests(RunManifest m, const std::vector<fs::path>& outputs) {
  m.output_digests = digest_files(outputs);
  if (m.finished.empty()) m.finished = utc_timestamp();
  const auto text = manifest_json(m);
  for (const auto& p : outputs) write_file_atomic(manifest_path(p), text);
}

namespace {

std::mutex& held_mutex() {
  static std::mutex m;
  return m;
}
std::set<std::string>& held_locks() {
  static std::set<std::string> s;
  return s;
}

}  // namespace

DirectoryLock::DirectoryLock(const fs::path& dir) {
  const auto d = dir.empty() ? fs::path(".") : dir;
  fs::create_directories(d);
  lock_ = fs::weakly_canonical(d) / ".crosspref.lock";
  std::lock_guard guard(held_mutex());
  if (held_locks().contains(lock_.string())) return;
  const int fd = ::open(lock_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
  if (fd < 0) {
    throw UsageError("output directory " + d.string() + " is locked by another run (" +
                     lock_.string() + ")");
  }
  const auto pid = std::to_string(::getpid()) + "\n";
  [[maybe_unused]] auto n = ::write(fd, pid.data(), pid.size());
  ::close(fd);
  held_locks().insert(lock_.string());
  owner_ = true;
}

DirectoryLock::~DirectoryLock() {
  if (!owner_) return;
  std::lock_guard guard(held_mutex());
  held_locks().erase(lock_.string());
  std::error_code ec;
  fs::remove(lock_, ec);
}

}  // namespace crosspref
