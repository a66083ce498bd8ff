#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace msms::cli {

// Hex SHA-256 of a file's bytes.
std::string sha256_file(const std::filesystem::path& path);

std::string utc_timestamp();

// Everything needed to repeat a run: the exact argument vector, resolved
// options, hashed inputs and the files written.
struct RunManifest {
  std::string command;
  std::vector<std::string> argv;
  nlohmann::json options = nlohmann::json::object();
  std::map<std::string, std::string> input_hashes;  // path -> sha256
  std::map<std::string, std::string> config_paths;
  nlohmann::json seeds = nlohmann::json::object();
  std::string started;
  std::string finished;
  std::vector<std::string> outputs;
  int exit_code = 0;

  void add_input(const std::filesystem::path& path, const std::string& role);
  void write(const std::filesystem::path& dir);
};

}  // namespace msms::cli
