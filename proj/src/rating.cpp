#include "meta/rating.hpp"

#include "meta/errors.hpp"

namespace meta {

std::optional<int> RatingScale::index_of(std::string_view symbol) {
  for (int i = 0; i < kFullLevels; ++i) {
    if (kSymbols[static_cast<std::size_t>(i)] == symbol) return i;
  }
  return std::nullopt;
}

std::string_view RatingScale::symbol(int index) {
  if (index < 0 || index >= kFullLevels) {
    throw ScaleError("rating index " + std::to_string(index) + " outside the 18-level scale");
  }
  return kSymbols[static_cast<std::size_t>(index)];
}

int RatingScale::notch_distance(int from, int to) {
  if (!is_kept(from) || !is_kept(to)) {
    throw ScaleError("notch distance needs kept-scale ratings, got " + std::to_string(from) +
                     " and " + std::to_string(to));
  }
  return to - from;
}

std::string_view migration_name(Migration m) {
  switch (m) {
    case Migration::Upgrade:
      return "upgrade";
    case Migration::Unchanged:
      return "unchanged";
    case Migration::Downgrade:
      return "downgrade";
  }
  return "unknown";
}

std::optional<Migration> parse_migration(std::string_view name) {
  if (name == "upgrade") return Migration::Upgrade;
  if (name == "unchanged") return Migration::Unchanged;
  if (name == "downgrade") return Migration::Downgrade;
  return std::nullopt;
}

Migration migration_between(int from_rating, int to_rating) {
  const int delta = RatingScale::notch_distance(from_rating, to_rating);
  if (delta < 0) return Migration::Upgrade;
  if (delta > 0) return Migration::Downgrade;
  return Migration::Unchanged;
}

Migration migration_from_rating(int predicted_rating, int current_rating) {
  return migration_between(current_rating, predicted_rating);
}

std::string rating_group(int rating_index) {
  // A+ .. BBB- occupy indices 4..9.
  if (rating_index >= 4 && rating_index <= 9) {
    return std::string(RatingScale::symbol(rating_index));
  }
  return "other";
}

}  // namespace meta
