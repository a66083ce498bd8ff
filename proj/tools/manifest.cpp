#include "manifest.hpp"

#include <array>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <memory>

#include <openssl/evp.h>

#include "msms/rng.hpp"
#include "msms/types.hpp"

#ifndef MSMS_VERSION
#define MSMS_VERSION "unknown"
#endif

namespace msms::cli {

std::string sha256_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open " + path.string());
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
  if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1) {
    throw std::runtime_error("sha256 init failed");
  }
  std::array<char, 1 << 16> buf{};
  while (in) {
    in.read(buf.data(), buf.size());
    if (in.gcount() > 0) EVP_DigestUpdate(ctx.get(), buf.data(), static_cast<std::size_t>(in.gcount()));
  }
  std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx.get(), md.data(), &len);
  std::string hex;
  char two[3];
  for (unsigned int i = 0; i < len; ++i) {
    std::snprintf(two, sizeof two, "%02x", md[i]);
    hex += two;
  }
  return hex;
}

std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void RunManifest::add_input(const std::filesystem::path& path, const std::string& role) {
  input_hashes[path.string()] = sha256_file(path);
  config_paths[role] = path.string();
}

void RunManifest::write(const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  nlohmann::json j;
  j["tool"] = "msms";
  j["version"] = MSMS_VERSION;
  j["command"] = command;
  j["argv"] = argv;
  j["options"] = options;
  j["inputs"] = config_paths;
  j["input_sha256"] = input_hashes;
  j["seeds"] = seeds;
  j["rng"] = {{"name", std::string(kRngName)}, {"version", kRngVersion}};
  j["started"] = started;
  j["finished"] = finished.empty() ? utc_timestamp() : finished;
  j["outputs"] = outputs;
  j["exit_code"] = exit_code;
  std::ofstream out(dir / "manifest.json");
  if (!out) throw InputError("cannot write " + (dir / "manifest.json").string());
  out << j.dump(2) << "\n";
}

}  // namespace msms::cli
