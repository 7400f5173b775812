#pragma once

#include <chrono>
#include <compare>
#include <optional>
#include <string>
#include <string_view>

namespace meta {

// Calendar date with month arithmetic that keeps the day of month and clamps
// to the last day when the target month is shorter.
class Date {
 public:
  constexpr Date() = default;
  Date(int year, unsigned month, unsigned day);

  // Strict YYYY-MM-DD. Returns nullopt on anything else, including
  // impossible dates such as 2021-02-30.
  static std::optional<Date> parse(std::string_view text);
  static Date from_days(long days_since_epoch);

  int year() const { return static_cast<int>(ymd_.year()); }
  unsigned month() const { return static_cast<unsigned>(ymd_.month()); }
  unsigned day() const { return static_cast<unsigned>(ymd_.day()); }

  long days_since_epoch() const;
  Date add_months(int months) const;
  Date add_days(long days) const;

  std::string iso() const;

  friend bool operator==(const Date& a, const Date& b) { return a.ymd_ == b.ymd_; }
  friend std::strong_ordering operator<=>(const Date& a, const Date& b) {
    return a.ymd_ <=> b.ymd_;
  }

 private:
  std::chrono::year_month_day ymd_{std::chrono::year{1970}, std::chrono::January,
                                   std::chrono::day{1}};
};

// Whole calendar months from `a` to `b`, ignoring the day of month.
int months_between(const Date& a, const Date& b);

}  // namespace meta
