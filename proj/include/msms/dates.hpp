#pragma once

#include <string>
#include <string_view>

namespace msms {

// Calendar day as a count of days since 1970-01-01.
using Day = int;

Day parse_date(std::string_view iso);  // "YYYY-MM-DD"; throws InputError
std::string format_date(Day d);

int year_of(Day d);
int month_of(Day d);

// 1-based calendar-quarter index of `t` counted from the quarter holding
// `start`: the start quarter is 1, the next one 2, and so on. Fractional days
// are floored before the calendar lookup.
int quarter_index(double t, Day start);

inline constexpr double kDaysPerYear = 365.25;

}  // namespace msms
