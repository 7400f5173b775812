#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "meta/backtest.hpp"
#include "meta/errors.hpp"

using namespace meta;

namespace {

std::vector<PanelRow> small_panel() {
  SyntheticConfig cfg;
  cfg.n_companies = 40;
  cfg.n_quarters = 24;
  cfg.feature_count = 8;
  return generate_synthetic(cfg);
}

ScheduleConfig small_schedule() {
  ScheduleConfig s;
  s.train_start = Date(2000, 1, 1);
  s.test_period_start = Date(2003, 1, 1);
  s.test_period_end = Date(2003, 12, 31);
  return s;
}

BacktestConfig tiny_config() {
  BacktestConfig c;
  c.model.input_dim = 8;
  c.model.model_dim = 8;
  c.model.num_heads = 2;
  c.model.common_dim = 4;
  c.train.epochs = 2;
  c.train.batch_size = 64;
  c.train.learning_rate = 1e-3;
  return c;
}

using Key = std::tuple<std::string, long>;

std::set<Key> labeled_keys(const WindowSplit& split) {
  std::set<Key> keys;
  for (const auto& s : split.train)
    if (s.labeled()) keys.emplace(s.company_id, s.as_of.days_since_epoch());
  return keys;
}

}  // namespace

TEST(Schedule, DefaultFirstWindow) {
  const auto schedule = build_schedule({});
  ASSERT_FALSE(schedule.empty());
  const auto& w = schedule.front();
  EXPECT_EQ(w.train_start, Date(1997, 1, 1));
  EXPECT_EQ(w.train_end, Date(2004, 12, 31));
  EXPECT_EQ(w.label_cutoff, Date(2003, 12, 31));
  EXPECT_EQ(w.test_start, Date(2005, 1, 1));
  EXPECT_EQ(w.test_end, Date(2005, 4, 1));
  EXPECT_EQ(w.gap_months, 12);
}

TEST(Schedule, SixteenYearsGiveSixtyFourWindows) {
  const auto schedule = build_schedule({});
  ASSERT_EQ(schedule.size(), 64u);
  EXPECT_EQ(schedule.back().test_start, Date(2020, 10, 1));
  for (std::size_t k = 1; k < schedule.size(); ++k) {
    EXPECT_EQ(schedule[k].test_start, schedule[k - 1].test_start.add_months(3));
    EXPECT_EQ(schedule[k].train_start, schedule[0].train_start);
    EXPECT_EQ(schedule[k].test_start, schedule[k - 1].test_end);
    EXPECT_EQ(schedule[k].id, k);
  }
}

TEST(Schedule, LabelCutoffTrailsTrainEndByGap) {
  for (int gap : {3, 6, 12}) {
    ScheduleConfig cfg;
    cfg.gap_months = gap;
    for (const auto& w : build_schedule(cfg)) {
      EXPECT_EQ(w.label_cutoff, w.test_start.add_months(-gap).add_days(-1));
      // Day after the cutoff plus the gap is the day after train_end.
      EXPECT_EQ(w.label_cutoff.add_days(1).add_months(gap), w.train_end.add_days(1));
      EXPECT_EQ(w.train_end.add_days(1), w.test_start);
    }
  }
}

TEST(Schedule, InvertedDatesAreConfigurationErrors) {
  ScheduleConfig cfg;
  cfg.train_start = Date(2006, 1, 1);
  EXPECT_THROW(build_schedule(cfg), ConfigError);
  cfg = ScheduleConfig{};
  cfg.test_period_end = Date(2004, 1, 1);
  EXPECT_THROW(build_schedule(cfg), ConfigError);
  cfg = ScheduleConfig{};
  cfg.gap_months = 5;
  EXPECT_THROW(build_schedule(cfg), ConfigError);
}

TEST(Schedule, PseudoNoGapToggle) {
  auto on = pseudo_no_gap_mode(build_schedule({}), true);
  for (const auto& w : on) {
    EXPECT_EQ(w.label_cutoff, w.train_end);
    EXPECT_TRUE(w.pseudo_no_gap);
  }
  const auto off = pseudo_no_gap_mode(on, false);
  const auto fresh = build_schedule({});
  for (std::size_t k = 0; k < off.size(); ++k) EXPECT_EQ(off[k].label_cutoff, fresh[k].label_cutoff);
}

TEST(Schedule, CsvEcho) {
  const auto path = std::filesystem::temp_directory_path() / "meta_schedule.csv";
  write_schedule_csv(path, build_schedule({}));
  std::ifstream in(path);
  std::string header, first;
  std::getline(in, header);
  std::getline(in, first);
  EXPECT_EQ(header, "window_id,train_start,train_end,label_cutoff,test_start,test_end,gap_months,pseudo_no_gap");
  EXPECT_EQ(first, "0,1997-01-01,2004-12-31,2003-12-31,2005-01-01,2005-04-01,12,0");
  std::filesystem::remove(path);
}

TEST(Split, MarkerLabeledJustPastCutoffNeverTrains) {
  const auto window = build_schedule({}).front();
  CompanySample inside, marker, test;
  for (auto* s : {&inside, &marker, &test}) {
    s->company_id = "M";
    s->seq_len = 1;
    s->input_dim = 1;
    s->x = {0.0};
    s->migration_label = Migration::Downgrade;
    s->rating_label = 9;
  }
  inside.as_of = Date(2003, 10, 1);  // label date 2004-10-01, known by train_end
  marker.as_of = Date(2004, 1, 1);   // label date 2005-01-01, after train_end
  test.as_of = Date(2005, 1, 1);
  const CompanySample samples[] = {inside, marker, test};
  const auto split = split_window(samples, window);
  ASSERT_EQ(split.train.size(), 1u);
  EXPECT_EQ(split.train[0].as_of, inside.as_of);
  ASSERT_EQ(split.test.size(), 1u);
  EXPECT_EQ(split.test[0].as_of, test.as_of);
}

TEST(Split, NoTrainingSignalFromBeyondTrainEnd) {
  const auto rows = small_panel();
  for (int gap : {3, 6, 12}) {
    auto sched = small_schedule();
    sched.gap_months = gap;
    for (const auto& w : build_schedule(sched)) {
      PreprocessConfig prep;
      prep.gap_months = gap;
      prep.stats_cutoff = w.train_end;
      const auto split = split_window(preprocess(rows, prep).samples, w);
      for (const auto& s : split.train) {
        EXPECT_LE(s.label_date(), w.train_end);
        EXPECT_GE(s.as_of, w.train_start);
      }
      for (const auto& s : split.test) {
        EXPECT_GE(s.as_of, w.test_start);
        EXPECT_LT(s.as_of, w.test_end);
        EXPECT_TRUE(s.labeled());
      }
    }
  }
}

TEST(Split, LabeledTrainingSetsExpand) {
  const auto rows = small_panel();
  const auto schedule = build_schedule(small_schedule());
  const auto samples = preprocess(rows, {}).samples;
  std::set<Key> previous;
  for (const auto& w : schedule) {
    const auto keys = labeled_keys(split_window(samples, w));
    EXPECT_TRUE(std::includes(keys.begin(), keys.end(), previous.begin(), previous.end()));
    EXPECT_GT(keys.size(), previous.size());
    previous = keys;
  }
}

TEST(Split, PseudoModeAddsLabelsWhenMigrationsExistInTheGap) {
  const auto rows = small_panel();
  const auto normal = build_schedule(small_schedule());
  const auto pseudo = pseudo_no_gap_mode(normal, true);
  const auto samples = preprocess(rows, {}).samples;
  for (std::size_t k = 0; k < normal.size(); ++k) {
    const auto a = split_window(samples, normal[k]);
    const auto b = split_window(samples, pseudo[k]);
    bool migration_in_gap = false;
    for (const auto& s : b.train)
      if (s.as_of > normal[k].label_cutoff && s.labeled() && *s.migration_label != Migration::Unchanged)
        migration_in_gap = true;
    if (migration_in_gap) EXPECT_GT(b.labeled_train, a.labeled_train);
  }
}

TEST(Split, ShorterGapNeverLosesLabels) {
  const auto rows = small_panel();
  std::size_t previous = 0;
  for (int gap : {12, 6, 3}) {
    auto sched = small_schedule();
    sched.gap_months = gap;
    PreprocessConfig prep;
    prep.gap_months = gap;
    const auto samples = preprocess(rows, prep).samples;
    const auto split = split_window(samples, build_schedule(sched).front());
    EXPECT_GE(split.labeled_train, previous);
    previous = split.labeled_train;
  }
}

TEST(RunBacktest, RecordsCoverEveryLabeledTestSampleInBothModes) {
  const auto rows = small_panel();
  const auto schedule = build_schedule(small_schedule());
  const auto result = run_backtest(rows, schedule, tiny_config());

  // Enumeration oracle: labeled samples with as_of in the test period.
  std::size_t expected = 0;
  for (const auto& s : preprocess(rows, {}).samples)
    if (s.labeled() && s.as_of >= Date(2003, 1, 1) && s.as_of < Date(2004, 1, 1)) ++expected;
  ASSERT_EQ(result.records.size(), 2 * expected);
  EXPECT_EQ(filter_mode(result.records, RecordMode::Direct).size(), expected);

  for (const auto& r : result.records) {
    const auto& w = schedule[r.window_id];
    EXPECT_GE(r.as_of, w.test_start);
    EXPECT_LT(r.as_of, w.test_end);
    EXPECT_LT(w.train_end, r.as_of);
    if (r.mode == RecordMode::RatingToMigration)
      EXPECT_EQ(r.pred_migration, migration_from_rating(r.pred_rating, r.current_rating));
  }
  ASSERT_EQ(result.windows.size(), 4u);
  for (const auto& w : result.windows) {
    EXPECT_FALSE(w.skipped);
    EXPECT_GT(w.labeled_train, 0u);
  }
  EXPECT_TRUE(result.warnings.empty());
}

TEST(RunBacktest, DeterministicAndIndependentOfThreading) {
  const auto rows = small_panel();
  const auto schedule = build_schedule(small_schedule());
  auto cfg = tiny_config();
  const auto a = run_backtest(rows, schedule, cfg);
  cfg.max_threads = 3;
  const auto b = run_backtest(rows, schedule, cfg);
  cfg.parallel = false;
  const auto c = run_backtest(rows, schedule, cfg);
  EXPECT_EQ(a.records, b.records);
  EXPECT_EQ(a.records, c.records);
}

TEST(RunBacktest, WindowWithoutLabelsIsSkippedWithWarning) {
  const auto rows = small_panel();
  ScheduleConfig sched;
  sched.train_start = Date(1990, 1, 1);
  sched.test_period_start = Date(2000, 4, 1);
  sched.test_period_end = Date(2000, 6, 30);
  const auto result = run_backtest(rows, build_schedule(sched), tiny_config());
  ASSERT_EQ(result.windows.size(), 1u);
  EXPECT_TRUE(result.windows[0].skipped);
  EXPECT_TRUE(result.records.empty());
  ASSERT_EQ(result.warnings.size(), 1u);
}

TEST(RunBacktest, WindowWithoutTestSamplesYieldsNoRecords) {
  const auto rows = small_panel();
  auto sched = small_schedule();
  sched.test_period_start = Date(2010, 1, 1);
  sched.test_period_end = Date(2010, 3, 31);
  const auto result = run_backtest(rows, build_schedule(sched), tiny_config());
  EXPECT_TRUE(result.records.empty());
  EXPECT_FALSE(result.windows[0].skipped);
}

TEST(RunBacktest, EmptyScheduleIsRejected) {
  EXPECT_THROW(run_backtest(small_panel(), {}, tiny_config()), ConfigError);
}

TEST(RunBacktest, WarmStartRunsSerially) {
  const auto rows = small_panel();
  auto cfg = tiny_config();
  cfg.warm_start = true;
  const auto warm = run_backtest(rows, build_schedule(small_schedule()), cfg);
  const auto cold = run_backtest(rows, build_schedule(small_schedule()), tiny_config());
  ASSERT_EQ(warm.records.size(), cold.records.size());
  // The first window starts from the same initialisation either way.
  for (std::size_t i = 0; i < warm.records.size(); ++i)
    if (warm.records[i].window_id == 0) EXPECT_EQ(warm.records[i], cold.records[i]);
}

TEST(GapStudy, SingletonEqualsPlainBacktest) {
  const auto rows = small_panel();
  const int gaps[] = {12};
  const auto study = gap_study(rows, gaps, small_schedule(), tiny_config());
  const auto plain = run_backtest(rows, build_schedule(small_schedule()), tiny_config());
  ASSERT_EQ(study.size(), 1u);
  EXPECT_EQ(study.at(12).records, plain.records);
}

TEST(GapStudy, LabelsDifferExactlyWhereTheTimelineMovesBetweenGaps) {
  const auto rows = small_panel();
  PreprocessConfig p3, p12;
  p3.gap_months = 3;
  p12.gap_months = 12;
  const auto a = preprocess(rows, p3).samples;
  const auto b = preprocess(rows, p12).samples;
  ASSERT_EQ(a.size(), b.size());
  std::size_t differing = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!a[i].labeled() || !b[i].labeled()) continue;
    // Scan the raw timeline between month 3 and month 12.
    bool moved = false;
    int at3 = -1;
    for (const auto& r : rows) {
      if (r.company_id != a[i].company_id) continue;
      if (r.as_of <= a[i].as_of.add_months(3)) at3 = r.rating;
    }
    for (const auto& r : rows) {
      if (r.company_id != a[i].company_id) continue;
      if (r.as_of > a[i].as_of.add_months(3) && r.as_of <= a[i].as_of.add_months(12) && r.rating != at3) moved = true;
    }
    const int later = *b[i].rating_label;
    EXPECT_EQ(*a[i].rating_label != later, moved && later != at3);
    differing += *a[i].rating_label != later;
  }
  EXPECT_GT(differing, 0u);
}

TEST(GapStudy, LabeledTrainingCountShrinksWithLongerGaps) {
  const auto rows = small_panel();
  const int gaps[] = {3, 6, 12};
  const auto study = gap_study(rows, gaps, small_schedule(), tiny_config());
  auto total = [&](int g) {
    std::size_t n = 0;
    for (const auto& w : study.at(g).windows) n += w.labeled_train;
    return n;
  };
  EXPECT_GE(total(3), total(6));
  EXPECT_GE(total(6), total(12));
}

TEST(Ablation, OneSeedRowsMatchSeparateBacktests) {
  const auto rows = small_panel();
  const auto schedule = build_schedule(small_schedule());
  const std::uint64_t seeds[] = {7};
  const auto study = ablation_study(rows, schedule, tiny_config(), seeds);
  ASSERT_EQ(study.per_seed.size(), 1u);
  ASSERT_EQ(study.mean.size(), 4u);

  auto cfg = tiny_config();
  cfg.train.weights = {1.0, 0.0};
  const auto migration_only = filter_mode(run_backtest(rows, schedule, cfg).records, RecordMode::Direct);
  EXPECT_EQ(study.mean[1].mode, "migration-only");
  EXPECT_EQ(study.mean[1].f1_down, f1_for_class(migration_only, Migration::Downgrade).f1);
  EXPECT_EQ(study.mean[1].n_records, migration_only.size());
  EXPECT_THROW(ablation_study(rows, schedule, tiny_config(), {}), ConfigError);
}
