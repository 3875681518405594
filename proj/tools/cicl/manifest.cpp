#include "manifest.hpp"

#include <openssl/sha.h>

#include <chrono>
#include <ctime>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace cicl::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string hex(const unsigned char* digest, std::size_t n) {
  static const char* digits = "0123456789abcdef";
  std::string out;
  for (std::size_t i = 0; i < n; ++i) {
    out += digits[digest[i] >> 4];
    out += digits[digest[i] & 0xf];
  }
  return out;
}

std::string utc_now() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

}  // namespace

std::string sha1_hex(const std::string& bytes) {
  unsigned char digest[SHA_DIGEST_LENGTH];
  SHA1(reinterpret_cast<const unsigned char*>(bytes.data()), bytes.size(), digest);
  return hex(digest, sizeof(digest));
}

std::string git_blob_sha1(const fs::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + file.string());
  SHA_CTX ctx;
  SHA1_Init(&ctx);
  const std::string prefix = "blob " + std::to_string(fs::file_size(file)) + std::string(1, '\0');
  SHA1_Update(&ctx, prefix.data(), prefix.size());
  std::vector<char> buf(1 << 20);
  while (in) {
    in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    SHA1_Update(&ctx, buf.data(), static_cast<std::size_t>(in.gcount()));
  }
  unsigned char digest[SHA_DIGEST_LENGTH];
  SHA1_Final(digest, &ctx);
  return hex(digest, sizeof(digest));
}

RunManifest RunManifest::load_or_create(const fs::path& run_dir, const json& canonical_config) {
  RunManifest m;
  m.dir_ = run_dir;
  const auto config_hash = sha1_hex(canonical_config.dump());
  const auto path = run_dir / "manifest.json";
  if (fs::exists(path)) {
    std::ifstream in(path);
    try {
      m.doc_ = json::parse(in);
    } catch (const json::exception&) {
      m.doc_ = json::object();
    }
  }
  if (!m.doc_.is_object() || m.doc_.value("config_hash", "") != config_hash) {
    m.doc_ = json{{"run_id", config_hash.substr(0, 12)},
                  {"config_hash", config_hash},
                  {"created", utc_now()},
                  {"artifacts", json::object()},
                  {"commands", json::object()}};
  }
  return m;
}

void RunManifest::record(const std::string& command, const std::vector<fs::path>& files) {
  auto& artifacts = doc_["artifacts"];
  for (const auto& f : files) {
    const auto rel = fs::relative(f, dir_).generic_string();
    artifacts[rel] = json{{"sha1", git_blob_sha1(f)}, {"bytes", fs::file_size(f)}, {"command", command}};
  }
  doc_["commands"][command] = utc_now();
  doc_["updated"] = utc_now();
}

void RunManifest::save() const {
  const auto path = dir_ / "manifest.json";
  const auto tmp = dir_ / "manifest.json.tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    out << doc_.dump(2) << '\n';
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
  }
  fs::rename(tmp, path);
}

std::vector<std::string> RunManifest::verify(const fs::path& run_dir) {
  std::ifstream in(run_dir / "manifest.json");
  if (!in) throw std::runtime_error("no manifest.json in " + run_dir.string());
  const json doc = json::parse(in);
  std::vector<std::string> bad;
  for (const auto& [rel, entry] : doc.at("artifacts").items()) {
    const auto file = run_dir / rel;
    if (!fs::exists(file) || git_blob_sha1(file) != entry.at("sha1").get<std::string>()) bad.push_back(rel);
  }
  return bad;
}

}  // namespace cicl::cli
