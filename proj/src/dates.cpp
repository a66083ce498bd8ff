#include "msms/dates.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>

#include "msms/types.hpp"

namespace msms {

namespace {

std::chrono::year_month_day ymd_of(Day d) {
  return std::chrono::year_month_day{std::chrono::sys_days{std::chrono::days{d}}};
}

}  // namespace

Day parse_date(std::string_view iso) {
  int y = 0;
  unsigned m = 0, d = 0;
  char tail = 0;
  const std::string s(iso);
  if (s.size() != 10 || std::sscanf(s.c_str(), "%4d-%2u-%2u%c", &y, &m, &d, &tail) != 3) {
    throw InputError("invalid date '" + s + "' (expected YYYY-MM-DD)");
  }
  const std::chrono::year_month_day ymd{std::chrono::year{y}, std::chrono::month{m},
                                        std::chrono::day{d}};
  if (!ymd.ok()) throw InputError("invalid calendar date '" + s + "'");
  return static_cast<Day>(std::chrono::sys_days{ymd}.time_since_epoch().count());
}

std::string format_date(Day d) {
  const auto ymd = ymd_of(d);
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02u", static_cast<int>(ymd.year()),
                static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()));
  return buf;
}

int year_of(Day d) { return static_cast<int>(ymd_of(d).year()); }

int month_of(Day d) { return static_cast<int>(static_cast<unsigned>(ymd_of(d).month())); }

int quarter_index(double t, Day start) {
  const Day day = static_cast<Day>(std::floor(t));
  const int q = year_of(day) * 4 + (month_of(day) - 1) / 3;
  const int q0 = year_of(start) * 4 + (month_of(start) - 1) / 3;
  return q - q0 + 1;
}

}  // namespace msms
