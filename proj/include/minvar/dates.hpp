#pragma once

#include <compare>
#include <cstdio>
#include <stdexcept>
#include <string>

namespace minvar {

/// Calendar date (proleptic Gregorian). Comparable, serializable as ISO-8601.
struct Date {
  int year = 1970;
  int month = 1;
  int day = 1;

  auto operator<=>(const Date&) const = default;

  /// Days since 1970-01-01 (civil-day algorithm), for calendar-day arithmetic.
  long long serial() const {
    long long y = year;
    const int m = month;
    y -= m <= 2;
    const long long era = (y >= 0 ? y : y - 399) / 400;
    const unsigned yoe = static_cast<unsigned>(y - era * 400);
    const unsigned doy = (153u * static_cast<unsigned>(m + (m > 2 ? -3 : 9)) + 2u) / 5u +
                         static_cast<unsigned>(day) - 1u;
    const unsigned doe = yoe * 365u + yoe / 4u - yoe / 100u + doy;
    return era * 146097LL + static_cast<long long>(doe) - 719468LL;
  }

  static Date from_serial(long long z) {
    z += 719468;
    const long long era = (z >= 0 ? z : z - 146096) / 146097;
    const unsigned doe = static_cast<unsigned>(z - era * 146097);
    const unsigned yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
    const long long y = static_cast<long long>(yoe) + era * 400;
    const unsigned doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
    const unsigned mp = (5 * doy + 2) / 153;
    const unsigned d = doy - (153 * mp + 2) / 5 + 1;
    const unsigned m = mp + (mp < 10 ? 3 : -9);
    return Date{static_cast<int>(y + (m <= 2)), static_cast<int>(m), static_cast<int>(d)};
  }

  Date plus_days(long long n) const { return from_serial(serial() + n); }

  std::string to_string() const {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%04d-%02d-%02d", year, month, day);
    return buf;
  }

  static Date parse(const std::string& s) {
    int y = 0, m = 0, d = 0;
    if (s.size() != 10 || std::sscanf(s.c_str(), "%4d-%2d-%2d", &y, &m, &d) != 3 ||
        s[4] != '-' || s[7] != '-')
      throw std::invalid_argument("invalid ISO date: '" + s + "'");
    if (m < 1 || m > 12 || d < 1 || d > 31)
      throw std::invalid_argument("invalid ISO date: '" + s + "'");
    return Date{y, m, d};
  }
};

inline long long calendar_days_between(const Date& a, const Date& b) {
  return b.serial() - a.serial();
}

}  // namespace minvar
