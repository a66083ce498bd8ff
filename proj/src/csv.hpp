#pragma once

// Minimal CSV helpers shared by the readers and writers. Fields are plain
// comma-separated values without quoting; writers refuse fields containing
// separators.

#include <charconv>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "msms/types.hpp"

namespace msms::csv {

std::vector<std::string_view> split(std::string_view line);

std::string format_double(double v);  // shortest round-trip representation

// Throws std::invalid_argument with a short reason.
double parse_double(std::string_view s);
long long parse_int(std::string_view s);

void check_field(std::string_view field, std::string_view column);

class Reader {
 public:
  // Opens `path`, reads the header and maps `required` columns. Missing
  // columns throw a CsvError listing all of them.
  Reader(const std::filesystem::path& path, const std::vector<std::string>& required);

  // Next data row (1-based line number in `line_no`); false at EOF. Blank
  // lines are skipped.
  bool next();
  std::size_t line_no() const { return line_no_; }
  std::size_t fields() const { return fields_.size(); }
  std::size_t columns() const { return header_.size(); }
  std::string_view get(const std::string& column) const;

 private:
  std::ifstream in_;
  std::vector<std::string> header_;
  std::map<std::string, std::size_t> index_;
  std::string line_;
  std::vector<std::string_view> fields_;
  std::size_t line_no_ = 1;
};

}  // namespace msms::csv
