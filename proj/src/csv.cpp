#include "csv.hpp"

#include <cmath>
#include <stdexcept>

#include "msms/spells.hpp"

namespace msms::csv {

std::vector<std::string_view> split(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(',', start);
    if (pos == std::string_view::npos) {
      out.push_back(line.substr(start));
      break;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  return out;
}

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  if (ec != std::errc()) throw std::runtime_error("cannot format number");
  return std::string(buf, ptr);
}

double parse_double(std::string_view s) {
  if (s.empty()) throw std::invalid_argument("empty numeric field");
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || !std::isfinite(v)) {
    throw std::invalid_argument("non-numeric value '" + std::string(s) + "'");
  }
  return v;
}

long long parse_int(std::string_view s) {
  if (s.empty()) throw std::invalid_argument("empty integer field");
  long long v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw std::invalid_argument("non-integer value '" + std::string(s) + "'");
  }
  return v;
}

void check_field(std::string_view field, std::string_view column) {
  if (field.find_first_of(",\n\r\"") != std::string_view::npos) {
    throw InputError("field '" + std::string(field) + "' in column " + std::string(column) +
                     " contains a separator or quote");
  }
}

Reader::Reader(const std::filesystem::path& path, const std::vector<std::string>& required)
    : in_(path) {
  if (!in_) throw InputError("cannot open " + path.string());
  std::string header;
  if (!std::getline(in_, header)) throw InputError(path.string() + ": empty file");
  if (!header.empty() && header.back() == '\r') header.pop_back();
  // Tolerate a UTF-8 byte-order mark.
  if (header.rfind("\xEF\xBB\xBF", 0) == 0) header.erase(0, 3);
  for (auto f : split(header)) header_.emplace_back(f);
  for (std::size_t i = 0; i < header_.size(); ++i) index_[header_[i]] = i;
  std::vector<std::string> missing;
  for (const auto& c : required) {
    if (!index_.count(c)) missing.push_back(path.string() + ": missing column '" + c + "'");
  }
  if (!missing.empty()) throw CsvError(std::move(missing));
}

bool Reader::next() {
  while (std::getline(in_, line_)) {
    ++line_no_;
    if (!line_.empty() && line_.back() == '\r') line_.pop_back();
    if (line_.empty()) continue;
    fields_ = split(line_);
    return true;
  }
  return false;
}

std::string_view Reader::get(const std::string& column) const {
  const auto i = index_.at(column);
  if (i >= fields_.size()) throw std::invalid_argument("missing field for column " + column);
  return fields_[i];
}

}  // namespace msms::csv
