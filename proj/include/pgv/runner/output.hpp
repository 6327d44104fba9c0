#pragma once

#include <fmt/format.h>
#include <fmt/ranges.h>
#include <openssl/evp.h>

#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <nlohmann/json.hpp>
#include <sstream>
#include <string>
#include <vector>

#include "pgv/errors.hpp"

namespace pgv::runner {

inline constexpr const char* kArtifactVersion = "0.1.0";

/// Hex SHA-256 of a byte string.
inline std::string sha256_hex(const std::string& bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1)
    throw IoError("SHA-256 digest failed");
  std::string out;
  for (unsigned int i = 0; i < len; ++i) out += fmt::format("{:02x}", digest[i]);
  return out;
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

/// Rows are formatted with the shortest round-trip representation, so equal
/// values always give identical bytes.
class CsvWriter {
 public:
  explicit CsvWriter(std::vector<std::string> header) : columns_(header.size()) {
    text_ = fmt::format("{}\n", fmt::join(header, ","));
  }

  template <class... T>
  void row(const T&... values) {
    static_assert(sizeof...(T) > 0);
    if (sizeof...(T) != columns_) throw IoError("CSV row has the wrong number of columns");
    std::string line;
    ((line += fmt::format("{},", values)), ...);
    line.back() = '\n';
    text_ += line;
  }

  void row(const std::vector<double>& values) {
    if (values.size() != columns_) throw IoError("CSV row has the wrong number of columns");
    text_ += fmt::format("{}\n", fmt::join(values, ","));
  }

  const std::string& text() const noexcept { return text_; }

 private:
  std::size_t columns_;
  std::string text_;
};

struct OutputFile {
  std::string path;  ///< relative to the run directory
  std::string sha256;
  std::size_t bytes = 0;
};

/// Collects a run's outputs and writes them plus manifest.json.
class RunOutput {
 public:
  RunOutput(std::filesystem::path dir, std::string command, std::string config_yaml)
      : dir_(std::move(dir)), command_(std::move(command)), config_(std::move(config_yaml)),
        started_(now_utc()) {
    std::error_code ec;
    std::filesystem::create_directories(dir_, ec);
    if (ec) throw IoError("cannot create output directory " + dir_.string() + ": " + ec.message());
  }

  const std::filesystem::path& dir() const noexcept { return dir_; }

  void write(const std::string& name, const std::string& content) {
    const auto path = dir_ / name;
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    out << content;
    out.close();
    if (!out) throw IoError("failed writing " + path.string());
    files_.push_back({name, sha256_hex(content), content.size()});
  }

  void write(const std::string& name, const CsvWriter& csv) { write(name, csv.text()); }

  /// Writes manifest.json. Call once, after every output file.
  void finish() {
    if (finished_) throw IoError("manifest already written");
    finished_ = true;
    nlohmann::ordered_json m;
    m["artifact_version"] = kArtifactVersion;
    m["command"] = command_;
    m["config_sha256"] = sha256_hex(config_);
    m["started_utc"] = started_;
    m["finished_utc"] = now_utc();
    auto& files = m["files"] = nlohmann::ordered_json::array();
    for (const auto& f : files_)
      files.push_back({{"path", f.path}, {"sha256", f.sha256}, {"bytes", f.bytes}});
    const auto path = dir_ / "manifest.json";
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    out << m.dump(2) << "\n";
    if (!out) throw IoError("failed writing " + path.string());
  }

  const std::vector<OutputFile>& files() const noexcept { return files_; }

 private:
  static std::string now_utc() {
    const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
  }

  std::filesystem::path dir_;
  std::string command_;
  std::string config_;
  std::string started_;
  std::vector<OutputFile> files_;
  bool finished_ = false;
};

/// Recomputes every checksum listed in a manifest; returns the paths that
/// do not match.
inline std::vector<std::string> verify_manifest(const std::filesystem::path& dir) {
  const auto m = nlohmann::json::parse(read_file(dir / "manifest.json"));
  std::vector<std::string> bad;
  for (const auto& f : m.at("files")) {
    const auto path = f.at("path").get<std::string>();
    std::string content;
    try {
      content = read_file(dir / path);
    } catch (const IoError&) {
      bad.push_back(path);
      continue;
    }
    if (sha256_hex(content) != f.at("sha256").get<std::string>()) bad.push_back(path);
  }
  return bad;
}

}  // namespace pgv::runner
