#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "meta/date.hpp"
#include "meta/rating.hpp"

namespace meta {

// Where a record's migration came from: the migration head directly, or the
// rating head compared against the current rating.
enum class RecordMode { Direct, RatingToMigration };

std::string_view record_mode_name(RecordMode mode);
RecordMode parse_record_mode(std::string_view name);

struct PredictionRecord {
  std::size_t window_id = 0;
  std::string company_id;
  Date as_of;
  Migration pred_migration = Migration::Unchanged;
  int pred_rating = 0;
  Migration true_migration = Migration::Unchanged;
  int true_rating = 0;
  RecordMode mode = RecordMode::Direct;
  int current_rating = 0;

  friend bool operator==(const PredictionRecord&, const PredictionRecord&) = default;
};

// window_id,company_id,as_of_date,pred_migration,pred_rating,true_migration,
// true_rating,mode,current_rating
void write_predictions_csv(const std::filesystem::path& path, std::span<const PredictionRecord> records);
std::vector<PredictionRecord> read_predictions_csv(const std::filesystem::path& path);

std::vector<PredictionRecord> filter_mode(std::span<const PredictionRecord> records, RecordMode mode);

}  // namespace meta
