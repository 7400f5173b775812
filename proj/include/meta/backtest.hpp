#pragma once

#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "meta/data.hpp"
#include "meta/metrics.hpp"
#include "meta/model.hpp"
#include "meta/records.hpp"
#include "meta/training.hpp"

namespace meta {

// One recalibration step of the expanding-window protocol. train_end and
// label_cutoff are inclusive; the test bucket is [test_start, test_end).
struct BacktestWindow {
  std::size_t id = 0;
  Date train_start;
  Date train_end;
  Date label_cutoff;
  Date test_start;
  Date test_end;
  int gap_months = 12;
  bool pseudo_no_gap = false;
};

struct ScheduleConfig {
  Date test_period_start{2005, 1, 1};
  Date test_period_end{2020, 12, 31};  // inclusive
  Date train_start{1997, 1, 1};
  int gap_months = 12;
  bool pseudo_no_gap = false;
};

// Quarterly windows tiling the test period. Window k tests
// [start + 3k months, start + 3(k+1) months), trains on data up to the day
// before, and only sees labels whose as_of + gap falls inside training.
std::vector<BacktestWindow> build_schedule(const ScheduleConfig& config);

// With the flag on every window gets label_cutoff = train_end (all past labels
// assumed known); with it off the gap-based cutoff is restored.
std::vector<BacktestWindow> pseudo_no_gap_mode(std::vector<BacktestWindow> schedule, bool enabled);

void write_schedule_csv(const std::filesystem::path& path, std::span<const BacktestWindow> schedule);

struct WindowSplit {
  std::vector<CompanySample> train;  // as_of in [train_start, label_cutoff]
  std::vector<CompanySample> test;   // labeled, as_of in [test_start, test_end)
  std::size_t labeled_train = 0;
  std::size_t lagged_train = 0;
};

WindowSplit split_window(std::span<const CompanySample> samples, const BacktestWindow& window);

struct BacktestConfig {
  ModelConfig model;
  TrainConfig train;
  bool warm_start = false;  // forces serial execution
  bool parallel = true;
  std::size_t max_threads = 0;  // 0 = hardware concurrency
};

struct WindowSummary {
  std::size_t window_id = 0;
  std::size_t labeled_train = 0;
  std::size_t lagged_train = 0;
  std::size_t test_samples = 0;
  bool skipped = false;
  bool trained = false;  // false also when the window has no test samples
  double final_objective = 0.0;
};

struct BacktestResult {
  std::vector<PredictionRecord> records;  // window order, direct then rating-derived per sample
  std::vector<WindowSummary> windows;
  std::vector<std::string> warnings;
};

// Per window: preprocess with statistics up to train_end, train from scratch
// (or from the previous window when warm-starting), and predict every labeled
// test sample. Windows with no labeled training sample are skipped with a
// warning.
BacktestResult run_backtest(std::span<const PanelRow> rows, std::span<const BacktestWindow> schedule,
                            const BacktestConfig& config);

// Full backtest per gap, with schedules, labels and lag windows rebuilt for
// each gap length.
std::map<int, BacktestResult> gap_study(std::span<const PanelRow> rows, std::span<const int> gaps,
                                        const ScheduleConfig& schedule, const BacktestConfig& config);

struct AblationStudy {
  std::vector<std::uint64_t> seeds;
  std::vector<std::vector<AblationRow>> per_seed;  // parallel to seeds
  std::vector<AblationRow> mean;
  std::vector<std::string> warnings;
};

// Per seed, three backtests: both heads at the configured weights, the
// migration head alone (beta = 0) and the rating head alone (alpha = 0).
// Throws InputError when the schedule yields no test records.
AblationStudy ablation_study(std::span<const PanelRow> rows, std::span<const BacktestWindow> schedule,
                             const BacktestConfig& config, std::span<const std::uint64_t> seeds);

}  // namespace meta
