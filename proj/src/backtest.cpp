#include "meta/backtest.hpp"

#include <algorithm>
#include <atomic>
#include <exception>
#include <fstream>
#include <mutex>
#include <optional>
#include <thread>

#include "meta/errors.hpp"

namespace meta {

namespace {

Date gap_cutoff(const Date& test_start, int gap_months) {
  return test_start.add_months(-gap_months).add_days(-1);
}

}  // namespace

std::vector<BacktestWindow> build_schedule(const ScheduleConfig& config) {
  if (!(config.train_start < config.test_period_start)) {
    throw ConfigError("train_start " + config.train_start.iso() + " must precede the test period start " +
                      config.test_period_start.iso());
  }
  if (config.test_period_end < config.test_period_start) {
    throw ConfigError("test period end " + config.test_period_end.iso() + " precedes its start " +
                      config.test_period_start.iso());
  }
  if (config.gap_months <= 0 || config.gap_months % kGridMonths != 0) {
    throw ConfigError("gap must be a positive multiple of 3 months");
  }
  std::vector<BacktestWindow> schedule;
  for (int k = 0;; ++k) {
    const Date test_start = config.test_period_start.add_months(kGridMonths * k);
    if (test_start > config.test_period_end) break;
    BacktestWindow w;
    w.id = static_cast<std::size_t>(k);
    w.train_start = config.train_start;
    w.train_end = test_start.add_days(-1);
    w.label_cutoff = gap_cutoff(test_start, config.gap_months);
    w.test_start = test_start;
    w.test_end = test_start.add_months(kGridMonths);
    w.gap_months = config.gap_months;
    schedule.push_back(w);
  }
  return pseudo_no_gap_mode(std::move(schedule), config.pseudo_no_gap);
}

std::vector<BacktestWindow> pseudo_no_gap_mode(std::vector<BacktestWindow> schedule, bool enabled) {
  for (auto& w : schedule) {
    w.pseudo_no_gap = enabled;
    w.label_cutoff = enabled ? w.train_end : gap_cutoff(w.test_start, w.gap_months);
  }
  return schedule;
}

void write_schedule_csv(const std::filesystem::path& path, std::span<const BacktestWindow> schedule) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write " + path.string());
  out << "window_id,train_start,train_end,label_cutoff,test_start,test_end,gap_months,pseudo_no_gap\n";
  for (const auto& w : schedule) {
    out << w.id << ',' << w.train_start.iso() << ',' << w.train_end.iso() << ',' << w.label_cutoff.iso() << ','
        << w.test_start.iso() << ',' << w.test_end.iso() << ',' << w.gap_months << ','
        << (w.pseudo_no_gap ? 1 : 0) << '\n';
  }
}

WindowSplit split_window(std::span<const CompanySample> samples, const BacktestWindow& window) {
  WindowSplit split;
  for (const auto& s : samples) {
    if (s.gap_months != window.gap_months) {
      throw ConfigError("sample gap " + std::to_string(s.gap_months) + " does not match window gap " +
                        std::to_string(window.gap_months));
    }
    if (s.as_of >= window.train_start && s.as_of <= window.label_cutoff) {
      // Only samples whose label date has passed (or, in the pseudo setting,
      // any sample up to train_end) carry a label and lag window.
      if (!s.labeled() && !s.x_lag) continue;
      split.train.push_back(s);
      if (s.labeled()) ++split.labeled_train;
      if (s.x_lag) ++split.lagged_train;
    } else if (s.as_of >= window.test_start && s.as_of < window.test_end && s.labeled()) {
      split.test.push_back(s);
    }
  }
  return split;
}

namespace {

struct WindowOutcome {
  WindowSummary summary;
  std::vector<PredictionRecord> records;
  std::optional<std::string> warning;
  std::optional<MetaParams> params;
};

WindowOutcome run_window(std::span<const PanelRow> rows, const BacktestWindow& window,
                         const BacktestConfig& config, const MetaParams* warm) {
  WindowOutcome outcome;
  outcome.summary.window_id = window.id;
  PreprocessConfig prep;
  prep.seq_len = config.model.seq_len;
  prep.gap_months = window.gap_months;
  prep.stats_cutoff = window.train_end;
  const PreprocessResult data = preprocess(rows, prep);
  const WindowSplit split = split_window(data.samples, window);
  outcome.summary.labeled_train = split.labeled_train;
  outcome.summary.lagged_train = split.lagged_train;
  outcome.summary.test_samples = split.test.size();
  if (split.labeled_train == 0) {
    outcome.summary.skipped = true;
    outcome.warning = "window " + std::to_string(window.id) + " (test " + window.test_start.iso() +
                      "): no labeled training samples, skipped";
    return outcome;
  }
  if (split.test.empty() && !config.warm_start) return outcome;
  outcome.summary.trained = true;
  TrainResult trained = train(split.train, config.model, config.train, warm);
  outcome.summary.final_objective = trained.history.back().objective;
  const auto predictions = predict(trained.params, split.test);
  for (std::size_t i = 0; i < split.test.size(); ++i) {
    const auto& s = split.test[i];
    const auto& p = predictions[i];
    PredictionRecord base;
    base.window_id = window.id;
    base.company_id = s.company_id;
    base.as_of = s.as_of;
    base.pred_rating = p.rating;
    base.true_migration = *s.migration_label;
    base.true_rating = *s.rating_label;
    base.current_rating = s.current_rating;

    PredictionRecord direct = base;
    direct.mode = RecordMode::Direct;
    direct.pred_migration = p.migration;
    PredictionRecord derived = base;
    derived.mode = RecordMode::RatingToMigration;
    derived.pred_migration = migration_from_rating(p.rating, s.current_rating);
    outcome.records.push_back(std::move(direct));
    outcome.records.push_back(std::move(derived));
  }
  if (config.warm_start) outcome.params = std::move(trained.params);
  return outcome;
}

}  // namespace

BacktestResult run_backtest(std::span<const PanelRow> rows, std::span<const BacktestWindow> schedule,
                            const BacktestConfig& config) {
  if (schedule.empty()) throw ConfigError("run_backtest: empty schedule");
  config.model.validate();
  config.train.validate();

  std::vector<WindowOutcome> outcomes(schedule.size());
  const bool serial = config.warm_start || !config.parallel;
  if (serial) {
    const MetaParams* warm = nullptr;
    std::optional<MetaParams> previous;
    for (std::size_t i = 0; i < schedule.size(); ++i) {
      outcomes[i] = run_window(rows, schedule[i], config, warm);
      if (outcomes[i].params) {
        previous = std::move(outcomes[i].params);
        outcomes[i].params.reset();
        warm = &*previous;
      }
    }
  } else {
    std::size_t threads = config.max_threads ? config.max_threads : std::thread::hardware_concurrency();
    threads = std::clamp<std::size_t>(threads, 1, schedule.size());
    std::atomic<std::size_t> next{0};
    std::vector<std::exception_ptr> errors(schedule.size());
    auto worker = [&] {
      for (std::size_t i = next++; i < schedule.size(); i = next++) {
        try {
          outcomes[i] = run_window(rows, schedule[i], config, nullptr);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    };
    std::vector<std::thread> pool;
    for (std::size_t t = 1; t < threads; ++t) pool.emplace_back(worker);
    worker();
    for (auto& t : pool) t.join();
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
  }

  BacktestResult result;
  for (auto& o : outcomes) {
    result.windows.push_back(o.summary);
    if (o.warning) result.warnings.push_back(*o.warning);
    std::move(o.records.begin(), o.records.end(), std::back_inserter(result.records));
  }
  return result;
}

std::map<int, BacktestResult> gap_study(std::span<const PanelRow> rows, std::span<const int> gaps,
                                        const ScheduleConfig& schedule, const BacktestConfig& config) {
  std::map<int, BacktestResult> out;
  for (int gap : gaps) {
    ScheduleConfig per_gap = schedule;
    per_gap.gap_months = gap;
    const auto windows = build_schedule(per_gap);
    out.emplace(gap, run_backtest(rows, windows, config));
  }
  return out;
}

AblationStudy ablation_study(std::span<const PanelRow> rows, std::span<const BacktestWindow> schedule,
                             const BacktestConfig& config, std::span<const std::uint64_t> seeds) {
  if (seeds.empty()) throw ConfigError("ablation needs at least one seed");
  AblationStudy study;
  for (auto seed : seeds) {
    auto run = [&](double alpha, double beta) {
      auto c = config;
      c.train.seed = seed;
      c.train.weights = {alpha, beta};
      auto result = run_backtest(rows, schedule, c);
      study.warnings.insert(study.warnings.end(), result.warnings.begin(), result.warnings.end());
      return std::move(result.records);
    };
    const auto& w = config.train.weights;
    const auto multi = run(w.alpha, w.beta);
    const auto migration_only = run(w.alpha, 0.0);
    const auto rating_only = run(0.0, w.beta);
    AblationInputs inputs;
    inputs.rating_only = filter_mode(rating_only, RecordMode::RatingToMigration);
    inputs.migration_only = filter_mode(migration_only, RecordMode::Direct);
    inputs.multi_task_rating = filter_mode(multi, RecordMode::RatingToMigration);
    inputs.multi_task_direct = filter_mode(multi, RecordMode::Direct);
    if (inputs.multi_task_direct.empty()) throw InputError("ablation produced no records; check the test period");
    study.seeds.push_back(seed);
    study.per_seed.push_back(compare_modes(inputs));
  }
  study.mean = average_ablation(study.per_seed);
  return study;
}

}  // namespace meta
