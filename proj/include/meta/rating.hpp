#pragma once

#include <array>
#include <optional>
#include <string>
#include <string_view>

namespace meta {

// Ordered best to worst. Notch distance between two ratings is the index
// difference. The modelled scale is the first 14 symbols; B, B-, D and NR are
// dropped during preprocessing.
class RatingScale {
 public:
  static constexpr int kFullLevels = 18;
  static constexpr int kKeptLevels = 14;

  static constexpr std::array<std::string_view, kFullLevels> kSymbols = {
      "AAA", "AA+", "AA", "AA-", "A+", "A", "A-", "BBB+", "BBB",
      "BBB-", "BB+", "BB", "BB-", "B+", "B", "B-", "D", "NR"};

  static std::optional<int> index_of(std::string_view symbol);
  // Throws ScaleError for indices outside the full scale.
  static std::string_view symbol(int index);
  static bool is_kept(int index) { return index >= 0 && index < kKeptLevels; }
  // Throws ScaleError unless both indices are on the kept scale.
  static int notch_distance(int from, int to);
};

enum class Migration : int { Upgrade = 0, Unchanged = 1, Downgrade = 2 };

inline constexpr int kMigrationClasses = 3;

std::string_view migration_name(Migration m);
std::optional<Migration> parse_migration(std::string_view name);

// Direction of travel between two kept-scale ratings.
Migration migration_between(int from_rating, int to_rating);

// Migration implied by a predicted 12-month-ahead rating relative to the
// current one. Both indices must lie on the 14-level scale.
Migration migration_from_rating(int predicted_rating, int current_rating);

// Rating groups used for per-group breakdowns: A+, A, A-, BBB+, BBB, BBB-,
// everything else pooled as "other".
std::string rating_group(int rating_index);

}  // namespace meta
