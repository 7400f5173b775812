#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>

#include "meta/errors.hpp"
#include "meta/metrics.hpp"

using namespace meta;

namespace {

PredictionRecord make(Migration pred, Migration truth, Date as_of = Date(2005, 1, 1), int current = 9) {
  PredictionRecord r;
  r.company_id = "C";
  r.as_of = as_of;
  r.pred_migration = pred;
  r.true_migration = truth;
  r.pred_rating = current;
  r.true_rating = current;
  r.current_rating = current;
  return r;
}

Migration random_class(std::mt19937_64& rng) {
  return static_cast<Migration>(std::uniform_int_distribution<int>(0, 2)(rng));
}

std::vector<PredictionRecord> random_records(std::mt19937_64& rng, std::size_t n) {
  std::vector<PredictionRecord> records;
  for (std::size_t i = 0; i < n; ++i) records.push_back(make(random_class(rng), random_class(rng)));
  return records;
}

// Textbook F1 from explicit loops.
double brute_f1(const std::vector<PredictionRecord>& records, Migration positive) {
  double tp = 0, fp = 0, fn = 0;
  for (const auto& r : records) {
    const bool p = r.pred_migration == positive, t = r.true_migration == positive;
    if (p && t) tp += 1;
    if (p && !t) fp += 1;
    if (!p && t) fn += 1;
  }
  const double precision = tp + fp == 0 ? 0.0 : tp / (tp + fp);
  const double recall = tp + fn == 0 ? 0.0 : tp / (tp + fn);
  return precision + recall == 0 ? 0.0 : 2 * precision * recall / (precision + recall);
}

double brute_accuracy(const std::vector<PredictionRecord>& records) {
  double hits = 0;
  for (const auto& r : records) hits += r.pred_migration == r.true_migration;
  return hits / static_cast<double>(records.size());
}

Migration mirror(Migration m) {
  if (m == Migration::Upgrade) return Migration::Downgrade;
  if (m == Migration::Downgrade) return Migration::Upgrade;
  return m;
}

}  // namespace

TEST(Confusion, HandCount) {
  const std::vector<PredictionRecord> records = {
      make(Migration::Downgrade, Migration::Downgrade), make(Migration::Downgrade, Migration::Downgrade),
      make(Migration::Downgrade, Migration::Unchanged), make(Migration::Unchanged, Migration::Downgrade),
      make(Migration::Unchanged, Migration::Unchanged)};
  const auto c = confusion(records, Migration::Downgrade);
  EXPECT_EQ(c.tp, 2u);
  EXPECT_EQ(c.fp, 1u);
  EXPECT_EQ(c.fn, 1u);
  EXPECT_EQ(c.tn, 1u);
  EXPECT_EQ(c.total(), 5u);
  EXPECT_DOUBLE_EQ(f1_for_class(records, Migration::Downgrade).f1, 2.0 / 3.0);
}

TEST(Confusion, PerfectClassifierScoresOne) {
  std::vector<PredictionRecord> records;
  for (auto m : {Migration::Upgrade, Migration::Downgrade, Migration::Unchanged, Migration::Downgrade})
    records.push_back(make(m, m));
  EXPECT_DOUBLE_EQ(f1_for_class(records, Migration::Upgrade).f1, 1.0);
  EXPECT_DOUBLE_EQ(f1_for_class(records, Migration::Downgrade).f1, 1.0);
  EXPECT_DOUBLE_EQ(accuracy(records), 1.0);
}

TEST(Confusion, VacuousClassIsZeroAndFlagged) {
  const std::vector<PredictionRecord> records = {make(Migration::Unchanged, Migration::Unchanged),
                                                 make(Migration::Downgrade, Migration::Unchanged)};
  const auto score = score_counts(confusion(records, Migration::Upgrade));
  EXPECT_EQ(score.f1, 0.0);
  EXPECT_TRUE(score.undefined);
  const auto report = summarize(records, "direct");
  ASSERT_EQ(report.undefined_flags.size(), 2u);
  EXPECT_EQ(report.undefined_flags[0], "f1_up");
}

TEST(Confusion, EmptyInputIsAnError) {
  EXPECT_THROW(f1_for_class({}, Migration::Downgrade), InputError);
  EXPECT_THROW(accuracy({}), InputError);
}

TEST(Confusion, MatchesBruteForceOnRandomSets) {
  std::mt19937_64 rng(2024);
  for (int trial = 0; trial < 1000; ++trial) {
    const auto records = random_records(rng, 1 + trial % 60);
    EXPECT_EQ(f1_for_class(records, Migration::Upgrade).f1, brute_f1(records, Migration::Upgrade));
    EXPECT_EQ(f1_for_class(records, Migration::Downgrade).f1, brute_f1(records, Migration::Downgrade));
    EXPECT_EQ(accuracy(records), brute_accuracy(records));
  }
}

TEST(Confusion, UpDownSymmetry) {
  std::mt19937_64 rng(99);
  for (int trial = 0; trial < 200; ++trial) {
    auto records = random_records(rng, 50);
    auto mirrored = records;
    for (auto& r : mirrored) {
      r.pred_migration = mirror(r.pred_migration);
      r.true_migration = mirror(r.true_migration);
    }
    EXPECT_EQ(f1_for_class(records, Migration::Upgrade).f1, f1_for_class(mirrored, Migration::Downgrade).f1);
    EXPECT_EQ(f1_for_class(records, Migration::Downgrade).f1, f1_for_class(mirrored, Migration::Upgrade).f1);
    EXPECT_EQ(accuracy(records), accuracy(mirrored));
  }
}

TEST(Confusion, ConstantUnchangedPredictorHitsBaseRate) {
  std::mt19937_64 rng(5);
  auto records = random_records(rng, 300);
  std::size_t unchanged = 0;
  for (auto& r : records) {
    r.pred_migration = Migration::Unchanged;
    unchanged += r.true_migration == Migration::Unchanged;
  }
  EXPECT_DOUBLE_EQ(accuracy(records), static_cast<double>(unchanged) / 300.0);
  EXPECT_EQ(f1_for_class(records, Migration::Downgrade).f1, 0.0);
  EXPECT_EQ(f1_for_class(records, Migration::Upgrade).f1, 0.0);
}

TEST(Breakdown, PerYearHandTally) {
  std::vector<PredictionRecord> records = {
      make(Migration::Downgrade, Migration::Downgrade, Date(2005, 3, 1)),
      make(Migration::Unchanged, Migration::Downgrade, Date(2005, 6, 1)),
      make(Migration::Upgrade, Migration::Upgrade, Date(2005, 9, 1)),
      make(Migration::Downgrade, Migration::Downgrade, Date(2006, 1, 1)),
      make(Migration::Downgrade, Migration::Unchanged, Date(2006, 4, 1)),
      make(Migration::Unchanged, Migration::Unchanged, Date(2006, 7, 1)),
  };
  const auto by_year = breakdown(records, BreakdownAxis::Year, "direct");
  ASSERT_EQ(by_year.size(), 2u);
  const auto& y5 = by_year.at("2005");
  const auto& y6 = by_year.at("2006");
  // 2005: down tp=1 fn=1 -> 2/3; up tp=1 -> 1; accuracy 2/3.
  EXPECT_DOUBLE_EQ(y5.f1_down, 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(y5.f1_up, 1.0);
  EXPECT_DOUBLE_EQ(y5.accuracy, 2.0 / 3.0);
  // 2006: down tp=1 fp=1 -> 2/3; up vacuous.
  EXPECT_DOUBLE_EQ(y6.f1_down, 2.0 / 3.0);
  EXPECT_EQ(y6.f1_up, 0.0);
  EXPECT_EQ(y6.n_records, 3u);
}

TEST(Breakdown, BucketsPartitionTheRecords) {
  std::mt19937_64 rng(17);
  auto records = random_records(rng, 400);
  std::uniform_int_distribution<int> rating(0, 13), year(2005, 2012);
  for (auto& r : records) {
    r.current_rating = rating(rng);
    r.as_of = Date(year(rng), 2, 1);
  }
  for (auto axis : {BreakdownAxis::Year, BreakdownAxis::RatingGroup}) {
    std::size_t total = 0;
    for (const auto& [bucket, report] : breakdown(records, axis, "direct")) total += report.n_records;
    EXPECT_EQ(total, records.size());
  }
  EXPECT_LE(breakdown(records, BreakdownAxis::RatingGroup, "direct").size(), 7u);
}

TEST(Report, JsonHasFlatVersionedKeys) {
  std::mt19937_64 rng(3);
  const auto report = summarize(random_records(rng, 40), "direct");
  const auto json = metrics_json(report);
  for (const char* key : {"version", "mode", "f1_up", "f1_down", "accuracy", "n_records", "undefined_flags"})
    EXPECT_TRUE(json.contains(key)) << key;
  EXPECT_EQ(json["version"], kMetricsVersion);
  for (const char* key : {"f1_up", "f1_down", "accuracy"}) {
    EXPECT_GE(json[key].get<double>(), 0.0);
    EXPECT_LE(json[key].get<double>(), 1.0);
  }
}

TEST(Report, BreakdownCsvRowsPerBucket) {
  std::mt19937_64 rng(8);
  auto records = random_records(rng, 30);
  for (std::size_t i = 0; i < records.size(); ++i) records[i].as_of = Date(2005 + static_cast<int>(i % 3), 1, 1);
  const auto path = std::filesystem::temp_directory_path() / "meta_by_year.csv";
  write_breakdown_csv(path, breakdown(records, BreakdownAxis::Year, "direct"));
  std::ifstream in(path);
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "bucket,n_records,f1_up,f1_down,accuracy");
  int rows = 0;
  while (std::getline(in, line)) ++rows;
  EXPECT_EQ(rows, 3);
  std::filesystem::remove(path);
}

TEST(Ablation, FourRowsInFixedOrder) {
  std::mt19937_64 rng(11);
  const auto records = random_records(rng, 60);
  const auto rows = compare_modes({records, records, records, records});
  ASSERT_EQ(rows.size(), 4u);
  EXPECT_EQ(rows[0].mode, "rating-only->migration");
  EXPECT_EQ(rows[1].mode, "migration-only");
  EXPECT_EQ(rows[2].mode, "multi-task rating->migration");
  EXPECT_EQ(rows[3].mode, "multi-task direct");
  for (std::size_t i = 1; i < rows.size(); ++i) {
    EXPECT_EQ(rows[i].f1_down, rows[0].f1_down);
    EXPECT_EQ(rows[i].f1_up, rows[0].f1_up);
    EXPECT_EQ(rows[i].accuracy, rows[0].accuracy);
  }
}

TEST(Ablation, MisalignedSetsAreRejected) {
  std::mt19937_64 rng(12);
  const auto records = random_records(rng, 20);
  auto shifted = records;
  shifted.back().company_id = "other";
  EXPECT_THROW(compare_modes({records, records, shifted, records}), AlignmentError);
  auto shorter = records;
  shorter.pop_back();
  EXPECT_THROW(compare_modes({records, shorter, records, records}), AlignmentError);
}

TEST(Ablation, AverageIsRowWiseMean) {
  std::vector<AblationRow> a = {{"x", 0.2, 0.4, 0.6, 10}, {"y", 0.0, 1.0, 0.5, 10}};
  std::vector<AblationRow> b = {{"x", 0.4, 0.0, 0.8, 10}, {"y", 1.0, 0.0, 0.5, 10}};
  const std::vector<std::vector<AblationRow>> runs = {a, b};
  const auto mean = average_ablation(runs);
  ASSERT_EQ(mean.size(), 2u);
  EXPECT_DOUBLE_EQ(mean[0].f1_up, 0.3);
  EXPECT_DOUBLE_EQ(mean[0].f1_down, 0.2);
  EXPECT_DOUBLE_EQ(mean[0].accuracy, 0.7);
  EXPECT_DOUBLE_EQ(mean[1].f1_up, 0.5);
  b[1].mode = "z";
  const std::vector<std::vector<AblationRow>> misaligned = {a, b};
  EXPECT_THROW(average_ablation(misaligned), AlignmentError);
  EXPECT_THROW(average_ablation({}), InputError);
}
