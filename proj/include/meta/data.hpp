#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "meta/date.hpp"
#include "meta/rating.hpp"

namespace meta {

inline constexpr std::size_t kPanelFeatures = 70;
inline constexpr int kGridMonths = 3;

// One filing of one company. Missing feature values are NaN.
struct PanelRow {
  std::string company_id;
  Date as_of;
  int rating = 0;  // index on the 18-level scale
  std::vector<double> features;
};

struct RejectedRow {
  std::size_t line = 0;  // 1-based, header is line 1
  std::string reason;
};

struct IngestResult {
  std::vector<PanelRow> rows;
  std::vector<RejectedRow> rejects;
  std::size_t feature_count = 0;
};

// Header: company_id,as_of_date,rating,f01,...,fNN (NN = 70 for panel data).
// Malformed data rows are reported in `rejects`; an empty input or a missing
// header throws InputError.
IngestResult parse_panel_csv(std::istream& in);
IngestResult ingest_csv(const std::filesystem::path& path);

// Shortest round-trip formatting, empty cell for NaN.
void write_panel_csv(std::ostream& out, std::span<const PanelRow> rows, std::size_t feature_count);
void write_panel_csv(const std::filesystem::path& path, std::span<const PanelRow> rows,
                     std::size_t feature_count);
void write_rejects_csv(const std::filesystem::path& path, std::span<const RejectedRow> rejects);

// Quarterly grid: the first day of January, April, July and October.
bool is_grid_date(const Date& d);
Date grid_on_or_after(const Date& d);
Date grid_on_or_before(const Date& d);

// One prediction instance: the T x D window ending at `as_of` and, when the
// data reaches that far, the window ending at as_of + gap.
struct CompanySample {
  std::string company_id;
  Date as_of;
  int gap_months = 12;
  std::size_t seq_len = 0;
  std::size_t input_dim = 0;
  std::vector<double> x;                      // seq_len * input_dim, row-major
  std::optional<std::vector<double>> x_lag;  // same layout
  std::vector<Date> window_dates;             // grid date of each row of x
  int current_rating = 0;                     // kept-scale index in force at as_of
  std::optional<Migration> migration_label;
  std::optional<int> rating_label;  // kept-scale index in force at as_of + gap

  bool labeled() const { return migration_label.has_value(); }
  Date label_date() const { return as_of.add_months(gap_months); }
};

struct PreprocessConfig {
  std::size_t seq_len = 4;
  int gap_months = 12;
  // Rows dated after this are excluded from the normalisation statistics.
  // Unset means every row counts.
  std::optional<Date> stats_cutoff;
};

struct FeatureStats {
  std::vector<double> mean;
  std::vector<double> stddev;
};

struct PreprocessResult {
  std::vector<CompanySample> samples;  // ordered by company id, then as_of
  FeatureStats stats;
  std::vector<std::string> notes;
};

// Normalise (z-score, statistics from rows up to the cutoff), fill missing
// with 0, drop rows rated outside the 14-level scale, resample each company
// onto the quarterly grid using the latest row on or before each grid date,
// pad short histories with the earliest point, and label each grid date with
// the rating in force at as_of + gap.
PreprocessResult preprocess(std::span<const PanelRow> rows, const PreprocessConfig& config);

FeatureStats feature_stats(std::span<const PanelRow> rows, std::size_t feature_count,
                           const std::optional<Date>& cutoff);

struct SyntheticConfig {
  std::size_t n_companies = 400;
  std::size_t n_quarters = 40;
  std::uint64_t seed = 7;
  Date start{2000, 1, 1};
  std::size_t feature_count = kPanelFeatures;
  double missing_rate = 0.01;
};

// Panel with a latent credit-quality walk per company. A persistent momentum
// term drives the walk and is visible in a block of features a few quarters
// before the rating crosses a notch boundary.
std::vector<PanelRow> generate_synthetic(const SyntheticConfig& config);

struct RatingCount {
  int year = 0;
  int rating = 0;
  std::size_t count = 0;
  double percentage = 0.0;
};

struct YearMigrationRate {
  int year = 0;
  std::size_t companies = 0;
  std::size_t labeled = 0;
  std::size_t upgrades = 0;
  std::size_t downgrades = 0;
  double pct_up = 0.0;
  double pct_down = 0.0;
};

struct MigrationMatrix {
  std::array<std::array<std::size_t, RatingScale::kKeptLevels>, RatingScale::kKeptLevels> counts{};
  std::size_t row_total(int from) const;
  // Row-normalised frequency; 0 for rows without observations.
  double ratio(int from, int to) const;
};

struct StatsReport {
  std::vector<RatingCount> ratings_by_year;
  std::vector<YearMigrationRate> migration_rates;
  MigrationMatrix matrix;
};

StatsReport stats_report(std::span<const CompanySample> samples);
// Writes ratings_by_year.csv, migration_rates.csv and migration_matrix.csv.
void write_stats(const StatsReport& report, const std::filesystem::path& dir);

// Shortest representation that parses back to the same double.
std::string format_number(double v);

}  // namespace meta
