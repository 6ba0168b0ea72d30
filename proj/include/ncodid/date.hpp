#pragma once

// Calendar dates for citation-window arithmetic. Thin wrapper over
// std::chrono::year_month_day with ISO-8601 parsing and a calendar-year
// shift where Feb 29 snaps to the last day of February.

#include <chrono>
#include <compare>
#include <cstdio>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace ncodid {

class Date {
 public:
  Date() = default;
  Date(int year, unsigned month, unsigned day)
      : ymd_(std::chrono::year{year}, std::chrono::month{month},
             std::chrono::day{day}) {
    if (!ymd_.ok()) {
      throw std::invalid_argument("invalid calendar date " + to_string());
    }
  }

  explicit Date(std::chrono::year_month_day ymd) : ymd_(ymd) {
    if (!ymd_.ok()) {
      throw std::invalid_argument("invalid calendar date " + to_string());
    }
  }

  int year() const { return static_cast<int>(ymd_.year()); }
  unsigned month() const { return static_cast<unsigned>(ymd_.month()); }
  unsigned day() const { return static_cast<unsigned>(ymd_.day()); }

  std::chrono::sys_days serial() const { return std::chrono::sys_days(ymd_); }

  // Same month/day shifted by n calendar years; an invalid result
  // (Feb 29 in a non-leap year) snaps to the last day of the month.
  Date add_years(int n) const {
    auto shifted = ymd_ + std::chrono::years{n};
    if (!shifted.ok()) {
      shifted = shifted.year() / shifted.month() / std::chrono::last;
    }
    return Date(std::chrono::year_month_day(shifted));
  }

  std::string to_string() const {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%04d-%02u-%02u",
                  static_cast<int>(ymd_.year()),
                  static_cast<unsigned>(ymd_.month()),
                  static_cast<unsigned>(ymd_.day()));
    return buf;
  }

  friend auto operator<=>(const Date& a, const Date& b) {
    return a.serial() <=> b.serial();
  }
  friend bool operator==(const Date& a, const Date& b) {
    return a.serial() == b.serial();
  }

 private:
  std::chrono::year_month_day ymd_{};
};

// Strict YYYY-MM-DD parse; nullopt on any malformation.
inline std::optional<Date> try_parse_date(std::string_view text) {
  if (text.size() != 10 || text[4] != '-' || text[7] != '-') {
    return std::nullopt;
  }
  auto digits = [](std::string_view s) -> std::optional<int> {
    int v = 0;
    for (char c : s) {
      if (c < '0' || c > '9') return std::nullopt;
      v = v * 10 + (c - '0');
    }
    return v;
  };
  auto y = digits(text.substr(0, 4));
  auto m = digits(text.substr(5, 2));
  auto d = digits(text.substr(8, 2));
  if (!y || !m || !d) return std::nullopt;
  std::chrono::year_month_day ymd{std::chrono::year{*y},
                                  std::chrono::month{unsigned(*m)},
                                  std::chrono::day{unsigned(*d)}};
  if (!ymd.ok()) return std::nullopt;
  return Date(ymd);
}

inline Date parse_date(std::string_view text) {
  auto d = try_parse_date(text);
  if (!d) {
    throw std::invalid_argument("unparseable ISO date: '" + std::string(text) +
                                "'");
  }
  return *d;
}

}  // namespace ncodid
