#pragma once

#include <stdlib.h>

#include <filesystem>
#include <initializer_list>
#include <string>
#include <vector>

#include "crosspref/corpus.hpp"
#include "crosspref/digest.hpp"

namespace testing_util {

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  TempDir() {
    std::string tmpl = (std::filesystem::temp_directory_path() / "crosspref-test-XXXXXX").string();
    if (!mkdtemp(tmpl.data())) throw std::runtime_error("mkdtemp failed");
    path_ = tmpl;
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline crosspref::Prompt prompt(const std::string& id, const std::string& lang = "eng",
                                const std::string& domain = "chat") {
  return {id, lang, "text of " + id, domain, std::string("ref of ") + id};
}

// A scored set whose response j has reward rewards[j].
inline crosspref::GenerationSet scored_set(const std::string& id, const std::string& lang,
                                           std::initializer_list<double> rewards,
                                           const std::string& generator = "gen") {
  crosspref::GenerationSet g{prompt(id, lang), {}};
  int j = 0;
  for (double r : rewards) {
    g.responses.push_back(
        {id, lang, lang + " response " + std::to_string(j), {3 + j}, r, generator});
    ++j;
  }
  return g;
}

inline std::string slurp(const std::filesystem::path& p) { return crosspref::read_file(p); }

}  // namespace testing_util
