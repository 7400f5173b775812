#include "meta/date.hpp"

#include <charconv>
#include <cstdio>
#include <stdexcept>

namespace meta {

namespace {

std::optional<int> parse_digits(std::string_view text) {
  int value = 0;
  for (char c : text) {
    if (c < '0' || c > '9') return std::nullopt;
  }
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc{} || ptr != text.data() + text.size()) return std::nullopt;
  return value;
}

}  // namespace

Date::Date(int year, unsigned month, unsigned day)
    : ymd_{std::chrono::year{year}, std::chrono::month{month}, std::chrono::day{day}} {
  if (!ymd_.ok()) {
    throw std::invalid_argument("invalid calendar date " + std::to_string(year) + "-" +
                                std::to_string(month) + "-" + std::to_string(day));
  }
}

std::optional<Date> Date::parse(std::string_view text) {
  if (text.size() != 10 || text[4] != '-' || text[7] != '-') return std::nullopt;
  auto y = parse_digits(text.substr(0, 4));
  auto m = parse_digits(text.substr(5, 2));
  auto d = parse_digits(text.substr(8, 2));
  if (!y || !m || !d) return std::nullopt;
  std::chrono::year_month_day ymd{std::chrono::year{*y},
                                  std::chrono::month{static_cast<unsigned>(*m)},
                                  std::chrono::day{static_cast<unsigned>(*d)}};
  if (!ymd.ok()) return std::nullopt;
  return Date(*y, static_cast<unsigned>(*m), static_cast<unsigned>(*d));
}

Date Date::from_days(long days_since_epoch) {
  std::chrono::year_month_day ymd{std::chrono::sys_days{std::chrono::days{days_since_epoch}}};
  return Date(static_cast<int>(ymd.year()), static_cast<unsigned>(ymd.month()),
              static_cast<unsigned>(ymd.day()));
}

long Date::days_since_epoch() const {
  return std::chrono::sys_days{ymd_}.time_since_epoch().count();
}

Date Date::add_months(int months) const {
  using namespace std::chrono;
  year_month ym = year_month{ymd_.year(), ymd_.month()} + std::chrono::months{months};
  const unsigned last = static_cast<unsigned>(year_month_day_last{ym.year(), month_day_last{ym.month()}}.day());
  const unsigned d = std::min(static_cast<unsigned>(ymd_.day()), last);
  return Date(static_cast<int>(ym.year()), static_cast<unsigned>(ym.month()), d);
}

Date Date::add_days(long days) const { return from_days(days_since_epoch() + days); }

std::string Date::iso() const {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%04d-%02u-%02u", year(), month(), day());
  return buf;
}

int months_between(const Date& a, const Date& b) {
  return (b.year() - a.year()) * 12 + static_cast<int>(b.month()) - static_cast<int>(a.month());
}

}  // namespace meta
