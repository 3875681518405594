#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace cicl::cli {

/// Git blob id of a file: sha1("blob <size>\0" + contents), lowercase hex.
std::string git_blob_sha1(const std::filesystem::path& file);
std::string sha1_hex(const std::string& bytes);

/// manifest.json in a run directory. Each subcommand records the files it
/// wrote; entries written by other subcommands are kept.
class RunManifest {
 public:
  static RunManifest load_or_create(const std::filesystem::path& run_dir,
                                    const nlohmann::json& canonical_config);

  void record(const std::string& command, const std::vector<std::filesystem::path>& files);
  void save() const;

  const nlohmann::json& doc() const { return doc_; }

  /// Re-hashes every listed artifact; returns the paths whose hash differs or that are missing.
  static std::vector<std::string> verify(const std::filesystem::path& run_dir);

 private:
  std::filesystem::path dir_;
  nlohmann::json doc_;
};

}  // namespace cicl::cli
