#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "meta/records.hpp"

namespace meta {

inline constexpr int kMetricsVersion = 1;

struct ConfusionCounts {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;
  std::size_t tn = 0;

  std::size_t total() const { return tp + fp + fn + tn; }
};

ConfusionCounts confusion(std::span<const PredictionRecord> records, Migration positive);

struct ClassScore {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  // Set when a zero denominator forced a metric to 0.
  bool undefined = false;
};

ClassScore score_counts(const ConfusionCounts& counts);
// Throws InputError on an empty record set.
ClassScore f1_for_class(std::span<const PredictionRecord> records, Migration positive);
double accuracy(std::span<const PredictionRecord> records);

struct MetricsReport {
  std::string mode;
  double f1_up = 0.0;
  double f1_down = 0.0;
  double accuracy = 0.0;
  std::size_t n_records = 0;
  std::vector<std::string> undefined_flags;  // e.g. "f1_up.precision"
  std::map<std::string, MetricsReport> by_year;
  std::map<std::string, MetricsReport> by_rating;
};

// Headline metrics only; breakdown maps stay empty.
MetricsReport summarize(std::span<const PredictionRecord> records, const std::string& mode);

enum class BreakdownAxis { Year, RatingGroup };

std::map<std::string, MetricsReport> breakdown(std::span<const PredictionRecord> records, BreakdownAxis axis,
                                               const std::string& mode);

// summarize() plus both breakdowns.
MetricsReport full_report(std::span<const PredictionRecord> records, const std::string& mode);

nlohmann::ordered_json metrics_json(const MetricsReport& report);
void write_metrics_json(const std::filesystem::path& path, const MetricsReport& report);
// bucket,n_records,f1_up,f1_down,accuracy
void write_breakdown_csv(const std::filesystem::path& path, const std::map<std::string, MetricsReport>& buckets);

struct AblationRow {
  std::string mode;
  double f1_up = 0.0;
  double f1_down = 0.0;
  double accuracy = 0.0;
  std::size_t n_records = 0;
};

struct AblationInputs {
  std::vector<PredictionRecord> rating_only;     // rating-derived migrations
  std::vector<PredictionRecord> migration_only;  // direct migrations
  std::vector<PredictionRecord> multi_task_rating;
  std::vector<PredictionRecord> multi_task_direct;
};

// Four rows: rating-only -> migration, migration-only, multi-task
// rating -> migration, multi-task direct. Throws AlignmentError if the record
// sets do not cover the same (window, company, as_of) keys.
std::vector<AblationRow> compare_modes(const AblationInputs& inputs);

// Row-wise mean of F1 and accuracy over several runs of compare_modes.
std::vector<AblationRow> average_ablation(std::span<const std::vector<AblationRow>> runs);

void write_ablation_csv(const std::filesystem::path& path, std::span<const AblationRow> rows);

}  // namespace meta
