#include "meta/cli.hpp"

#include <CLI11.hpp>

#include <charconv>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include "meta/errors.hpp"
#include "meta/metrics.hpp"
#include "meta/records.hpp"

namespace meta {

namespace fs = std::filesystem;

BacktestConfig Settings::backtest() const {
  BacktestConfig c;
  c.model = model;
  c.train = train;
  c.warm_start = warm_start;
  c.parallel = !warm_start;
  c.max_threads = threads;
  return c;
}

namespace {

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

template <typename T>
T parse_value(const std::string& key, const std::string& text) {
  T value{};
  const auto* begin = text.data();
  const auto* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(begin, end, value);
  if (ec != std::errc() || ptr != end || text.empty()) {
    throw ConfigError("bad value for " + key + ": '" + text + "'");
  }
  return value;
}

std::size_t parse_count(const std::string& key, const std::string& text) {
  if (!text.empty() && text.front() == '-') throw ConfigError("bad value for " + key + ": '" + text + "'");
  return parse_value<std::size_t>(key, text);
}

bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "1" || text == "true" || text == "yes" || text == "on") return true;
  if (text == "0" || text == "false" || text == "no" || text == "off") return false;
  throw ConfigError("bad value for " + key + ": '" + text + "' (expected true or false)");
}

Date parse_date(const std::string& key, const std::string& text) {
  const auto d = Date::parse(text);
  if (!d) throw ConfigError("bad date for " + key + ": '" + text + "' (expected YYYY-MM-DD)");
  return *d;
}

const std::set<std::string> kBoolKeys = {"pseudo_no_gap", "warm_start", "verbose"};

std::string flag_name(const std::string& key) {
  std::string name = "--" + key;
  for (auto& c : name)
    if (c == '_') c = '-';
  return name;
}

}  // namespace

const std::vector<std::string>& setting_keys() {
  static const std::vector<std::string> keys = {
      "seed",        "gap",        "loss_mode",  "alpha",        "beta",       "epochs",
      "pseudo_no_gap", "lr",       "batch_size", "clip_norm",    "seq_len",    "model_dim",
      "heads",       "common_dim", "readout",    "test_start",   "test_end",   "train_start",
      "threads",     "warm_start", "verbose",    "companies",    "quarters",   "start_date",
      "missing_rate"};
  return keys;
}

void apply_setting(Settings& s, const std::string& key, const std::string& raw) {
  const std::string value = trim(raw);
  if (key == "seed") {
    const auto seed = parse_value<std::uint64_t>(key, value);
    s.train.seed = seed;
    s.synthetic.seed = seed;
  } else if (key == "gap") {
    const int gap = parse_value<int>(key, value);
    if (gap != 3 && gap != 6 && gap != 12) throw ConfigError("gap must be 3, 6 or 12 months, got " + value);
    s.schedule.gap_months = gap;
  } else if (key == "loss_mode") {
    s.train.loss_mode = parse_loss_mode(value);
  } else if (key == "alpha") {
    s.train.weights.alpha = parse_value<double>(key, value);
  } else if (key == "beta") {
    s.train.weights.beta = parse_value<double>(key, value);
  } else if (key == "epochs") {
    s.train.epochs = parse_count(key, value);
  } else if (key == "pseudo_no_gap") {
    s.schedule.pseudo_no_gap = parse_bool(key, value);
  } else if (key == "lr") {
    s.train.learning_rate = parse_value<double>(key, value);
  } else if (key == "batch_size") {
    s.train.batch_size = parse_count(key, value);
  } else if (key == "clip_norm") {
    s.train.clip_norm = parse_value<double>(key, value);
  } else if (key == "seq_len") {
    s.model.seq_len = parse_count(key, value);
  } else if (key == "model_dim") {
    s.model.model_dim = parse_count(key, value);
  } else if (key == "heads") {
    s.model.num_heads = parse_count(key, value);
  } else if (key == "common_dim") {
    s.model.common_dim = parse_count(key, value);
  } else if (key == "readout") {
    if (value == "last") s.model.readout = Readout::LastStep;
    else if (value == "mean") s.model.readout = Readout::MeanOverSteps;
    else throw ConfigError("readout must be last or mean, got '" + value + "'");
  } else if (key == "test_start") {
    s.schedule.test_period_start = parse_date(key, value);
  } else if (key == "test_end") {
    s.schedule.test_period_end = parse_date(key, value);
  } else if (key == "train_start") {
    s.schedule.train_start = parse_date(key, value);
  } else if (key == "threads") {
    s.threads = parse_count(key, value);
  } else if (key == "warm_start") {
    s.warm_start = parse_bool(key, value);
  } else if (key == "verbose") {
    s.verbose = parse_bool(key, value);
  } else if (key == "companies") {
    s.synthetic.n_companies = parse_count(key, value);
  } else if (key == "quarters") {
    s.synthetic.n_quarters = parse_count(key, value);
  } else if (key == "start_date") {
    s.synthetic.start = parse_date(key, value);
  } else if (key == "missing_rate") {
    s.synthetic.missing_rate = parse_value<double>(key, value);
  } else {
    throw ConfigError("unknown setting '" + key + "'");
  }
}

std::map<std::string, std::string> read_config_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open config file " + path.string());
  std::map<std::string, std::string> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string t = trim(line);
    if (t.empty() || t.front() == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(path.string() + ":" + std::to_string(line_no) + ": expected key=value");
    }
    out[trim(t.substr(0, eq))] = trim(t.substr(eq + 1));
  }
  return out;
}

namespace {

struct Context {
  Settings settings;
  std::ostream& out;
  std::ostream& err;
};

std::vector<PanelRow> load_panel(const fs::path& input, const fs::path& out_dir, Context& ctx) {
  auto ingest = ingest_csv(input);
  if (!ingest.rejects.empty()) {
    fs::create_directories(out_dir);
    write_rejects_csv(out_dir / "rejects.csv", ingest.rejects);
    ctx.err << ingest.rejects.size() << " malformed rows skipped, see " << (out_dir / "rejects.csv").string()
            << '\n';
  }
  if (ingest.rows.empty()) throw InputError("no valid rows in " + input.string());
  if (ingest.feature_count != ctx.settings.model.input_dim) {
    ctx.settings.model.input_dim = ingest.feature_count;
  }
  return std::move(ingest.rows);
}

void write_window_summary(const fs::path& path, std::span<const WindowSummary> windows) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write " + path.string());
  out << "window_id,labeled_train,lagged_train,test_samples,skipped,trained,final_objective\n";
  for (const auto& w : windows) {
    out << w.window_id << ',' << w.labeled_train << ',' << w.lagged_train << ',' << w.test_samples << ','
        << (w.skipped ? 1 : 0) << ',' << (w.trained ? 1 : 0) << ',' << format_number(w.final_objective) << '\n';
  }
}

void report_warnings(const BacktestResult& result, std::ostream& err) {
  for (const auto& w : result.warnings) err << "warning: " << w << '\n';
}

int cmd_generate(Context& ctx, const fs::path& out_path) {
  const auto rows = generate_synthetic(ctx.settings.synthetic);
  if (out_path.has_parent_path()) fs::create_directories(out_path.parent_path());
  write_panel_csv(out_path, rows, ctx.settings.synthetic.feature_count);
  ctx.out << "wrote " << rows.size() << " rows for " << ctx.settings.synthetic.n_companies << " companies to "
          << out_path.string() << '\n';
  return kExitOk;
}

int cmd_stats(Context& ctx, const fs::path& input, const fs::path& out_dir) {
  const auto rows = load_panel(input, out_dir, ctx);
  PreprocessConfig prep;
  prep.seq_len = ctx.settings.model.seq_len;
  prep.gap_months = ctx.settings.schedule.gap_months;
  const auto data = preprocess(rows, prep);
  const auto report = stats_report(data.samples);
  fs::create_directories(out_dir);
  write_stats(report, out_dir);
  std::size_t labeled = 0, up = 0, down = 0;
  for (const auto& r : report.migration_rates) {
    labeled += r.labeled;
    up += r.upgrades;
    down += r.downgrades;
  }
  ctx.out << "samples " << data.samples.size() << ", labeled " << labeled << ", upgrades " << up
          << ", downgrades " << down << '\n';
  return kExitOk;
}

int cmd_train(Context& ctx, const fs::path& input, const fs::path& out_dir, const std::string& train_end_text) {
  const auto rows = load_panel(input, out_dir, ctx);
  PreprocessConfig prep;
  prep.seq_len = ctx.settings.model.seq_len;
  prep.gap_months = ctx.settings.schedule.gap_months;
  std::vector<CompanySample> samples;
  if (!train_end_text.empty()) {
    BacktestWindow w;
    w.train_start = ctx.settings.schedule.train_start;
    w.train_end = parse_date("train-end", train_end_text);
    w.test_start = w.train_end.add_days(1);
    w.test_end = w.test_start.add_months(kGridMonths);
    w.gap_months = prep.gap_months;
    w.label_cutoff = w.test_start.add_months(-w.gap_months).add_days(-1);
    if (ctx.settings.schedule.pseudo_no_gap) w.label_cutoff = w.train_end;
    prep.stats_cutoff = w.train_end;
    samples = split_window(preprocess(rows, prep).samples, w).train;
  } else {
    samples = preprocess(rows, prep).samples;
  }
  EpochCallback progress;
  if (ctx.settings.verbose) {
    progress = [&](const EpochLoss& e) {
      ctx.err << "epoch " << e.epoch << " objective " << format_number(e.objective) << '\n';
    };
  }
  const auto result = train(samples, ctx.settings.model, ctx.settings.train, nullptr, progress);
  fs::create_directories(out_dir);
  save_checkpoint(result.params, out_dir / "model.ckpt");
  write_loss_history(out_dir / "loss_history.csv", result.history);
  ctx.out << "trained on " << result.samples_used << " samples, " << result.optimizer_steps
          << " steps, objective " << format_number(result.history.front().objective) << " -> "
          << format_number(result.history.back().objective) << '\n';
  return kExitOk;
}

int cmd_backtest(Context& ctx, const fs::path& input, const fs::path& out_dir) {
  const auto rows = load_panel(input, out_dir, ctx);
  const auto schedule = build_schedule(ctx.settings.schedule);
  fs::create_directories(out_dir);
  write_schedule_csv(out_dir / "schedule.csv", schedule);
  const auto result = run_backtest(rows, schedule, ctx.settings.backtest());
  report_warnings(result, ctx.err);
  write_predictions_csv(out_dir / "predictions.csv", result.records);
  write_window_summary(out_dir / "windows.csv", result.windows);
  ctx.out << "windows " << schedule.size() << ", records " << result.records.size() << '\n';
  return kExitOk;
}

void write_evaluation(const fs::path& dir, std::span<const PredictionRecord> records, const std::string& mode) {
  const auto report = full_report(records, mode);
  fs::create_directories(dir);
  write_metrics_json(dir / "metrics.json", report);
  write_breakdown_csv(dir / "by_year.csv", report.by_year);
  write_breakdown_csv(dir / "by_rating.csv", report.by_rating);
}

int cmd_gap_study(Context& ctx, const fs::path& input, const fs::path& out_dir, const std::vector<int>& gaps) {
  for (int g : gaps) {
    if (g != 3 && g != 6 && g != 12) throw ConfigError("gap must be 3, 6 or 12 months, got " + std::to_string(g));
  }
  const auto rows = load_panel(input, out_dir, ctx);
  const auto results = gap_study(rows, gaps, ctx.settings.schedule, ctx.settings.backtest());
  fs::create_directories(out_dir);
  std::ofstream summary(out_dir / "gap_study.csv", std::ios::binary);
  summary << "gap_months,labeled_train,lagged_train,n_records,f1_up,f1_down,accuracy\n";
  for (int g : gaps) {
    const auto& result = results.at(g);
    report_warnings(result, ctx.err);
    const fs::path dir = out_dir / ("gap_" + std::to_string(g));
    fs::create_directories(dir);
    write_predictions_csv(dir / "predictions.csv", result.records);
    write_window_summary(dir / "windows.csv", result.windows);
    std::size_t labeled = 0, lagged = 0;
    for (const auto& w : result.windows) {
      labeled += w.labeled_train;
      lagged += w.lagged_train;
    }
    const auto direct = filter_mode(result.records, RecordMode::Direct);
    summary << g << ',' << labeled << ',' << lagged << ',' << direct.size();
    if (direct.empty()) {
      summary << ",,,\n";
      ctx.err << "warning: gap " << g << " produced no records\n";
      continue;
    }
    write_evaluation(dir, direct, "multi-task");
    const auto m = summarize(direct, "multi-task");
    summary << ',' << format_number(m.f1_up) << ',' << format_number(m.f1_down) << ','
            << format_number(m.accuracy) << '\n';
    ctx.out << "gap " << g << ": records " << direct.size() << ", f1_down " << format_number(m.f1_down) << '\n';
  }
  return kExitOk;
}

int cmd_evaluate(Context& ctx, const fs::path& predictions, const fs::path& out_dir, const std::string& mode) {
  const auto all = read_predictions_csv(predictions);
  const auto records = filter_mode(all, parse_record_mode(mode));
  if (records.empty()) {
    ctx.err << "no records in " << predictions.string() << " (mode " << mode << ")\n";
    return kExitInput;
  }
  const std::string tag = mode == "direct" ? "multi-task" : "rating->migration";
  write_evaluation(out_dir, records, tag);
  const auto report = summarize(records, tag);
  ctx.out << "f1_up " << format_number(report.f1_up) << " f1_down " << format_number(report.f1_down)
          << " accuracy " << format_number(report.accuracy) << " n " << report.n_records << '\n';
  return kExitOk;
}

int cmd_ablate(Context& ctx, const fs::path& input, const fs::path& out_dir, std::vector<std::uint64_t> seeds) {
  const auto rows = load_panel(input, out_dir, ctx);
  if (seeds.empty()) seeds.push_back(ctx.settings.train.seed);
  const auto schedule = build_schedule(ctx.settings.schedule);
  fs::create_directories(out_dir);
  const auto study = ablation_study(rows, schedule, ctx.settings.backtest(), seeds);
  for (const auto& w : study.warnings) ctx.err << "warning: " << w << '\n';
  for (std::size_t i = 0; i < study.seeds.size(); ++i)
    write_ablation_csv(out_dir / ("ablation_seed" + std::to_string(study.seeds[i]) + ".csv"), study.per_seed[i]);
  const auto& mean = study.mean;
  write_ablation_csv(out_dir / "ablation.csv", mean);
  ctx.out << "mode,f1_up,f1_down,accuracy\n";
  for (const auto& r : mean) {
    ctx.out << r.mode << ',' << format_number(r.f1_up) << ',' << format_number(r.f1_down) << ','
            << format_number(r.accuracy) << '\n';
  }
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Early prediction of credit rating migration with a multi-task transformer"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path;
  app.add_option("--config", config_path, "key=value settings file; flags take precedence");
  std::map<std::string, std::string> flag_values;
  std::map<std::string, bool> flag_switches;
  static const std::map<std::string, std::string> kHelp = {
      {"seed", "training and generator seed"},
      {"gap", "months between as-of date and label: 3, 6 or 12"},
      {"loss_mode", "classification loss: literal or nll"},
      {"alpha", "migration loss weight"},
      {"beta", "rating loss weight"},
      {"epochs", "training epochs"},
      {"pseudo_no_gap", "treat every label up to train_end as known"},
      {"lr", "Adam learning rate"},
      {"batch_size", "samples per optimizer step"},
      {"clip_norm", "global gradient-norm clip, 0 disables"},
      {"seq_len", "quarters per input window"},
      {"model_dim", "transformer width"},
      {"heads", "attention heads"},
      {"common_dim", "width of the shared prediction layer"},
      {"readout", "prediction readout: last or mean"},
      {"test_start", "first test date, YYYY-MM-DD"},
      {"test_end", "last test date, inclusive"},
      {"train_start", "start of the expanding training range"},
      {"threads", "backtest worker threads, 0 = all cores"},
      {"warm_start", "start each window from the previous one"},
      {"verbose", "per-epoch losses on stderr"},
      {"companies", "synthetic panel: number of companies"},
      {"quarters", "synthetic panel: quarters per company"},
      {"start_date", "synthetic panel: first quarter"},
      {"missing_rate", "synthetic panel: share of missing feature values"}};
  for (const auto& key : setting_keys()) {
    const auto help = kHelp.contains(key) ? kHelp.at(key) : std::string();
    if (kBoolKeys.contains(key)) {
      app.add_flag(flag_name(key), flag_switches[key], help);
    } else {
      app.add_option(flag_name(key), flag_values[key], help);
    }
  }

  std::string input, out_dir, out_file, predictions, train_end, eval_mode = "direct";
  std::vector<int> gaps = {3, 6, 12};
  std::vector<std::uint64_t> seeds;

  auto* generate = app.add_subcommand("generate", "Write a synthetic panel CSV");
  generate->add_option("--out", out_file, "output CSV")->required();

  auto* stats = app.add_subcommand("stats", "Rating counts, migration rates and migration matrix");
  stats->add_option("--input", input, "panel CSV")->required();
  stats->add_option("--out", out_dir, "output directory")->required();

  auto* train_cmd = app.add_subcommand("train", "Single fit; writes model.ckpt and loss_history.csv");
  train_cmd->add_option("--input", input, "panel CSV")->required();
  train_cmd->add_option("--out", out_dir, "output directory")->required();
  train_cmd->add_option("--train-end", train_end, "inclusive end of the training range");

  auto* backtest = app.add_subcommand("backtest", "Expanding-window backtest; writes predictions.csv");
  backtest->add_option("--input", input, "panel CSV")->required();
  backtest->add_option("--out", out_dir, "output directory")->required();

  auto* gap_cmd = app.add_subcommand("gap-study", "Backtest once per gap length");
  gap_cmd->add_option("--input", input, "panel CSV")->required();
  gap_cmd->add_option("--out", out_dir, "output directory")->required();
  gap_cmd->add_option("--gaps", gaps, "comma-separated gap lengths in months")->delimiter(',');

  auto* evaluate = app.add_subcommand("evaluate", "Metrics JSON and breakdown CSVs from predictions");
  evaluate->add_option("--predictions", predictions, "predictions.csv from backtest")->required();
  evaluate->add_option("--out", out_dir, "output directory")->required();
  evaluate->add_option("--mode", eval_mode, "record mode to score")->check(CLI::IsMember({"direct", "rating_to_migration"}));

  auto* ablate = app.add_subcommand("ablate", "Multi-task versus single-task comparison");
  ablate->add_option("--input", input, "panel CSV")->required();
  ablate->add_option("--out", out_dir, "output directory")->required();
  ablate->add_option("--seeds", seeds, "comma-separated training seeds")->delimiter(',');

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  if (!reversed.empty()) reversed.pop_back();  // program name
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n" << app.help();
    return kExitUsage;
  }

  Context ctx{Settings{}, out, err};
  try {
    if (!config_path.empty()) {
      for (const auto& [key, value] : read_config_file(config_path)) apply_setting(ctx.settings, key, value);
    }
    for (const auto& key : setting_keys()) {
      if (app.get_option(flag_name(key))->count() == 0) continue;
      if (kBoolKeys.contains(key)) apply_setting(ctx.settings, key, flag_switches[key] ? "true" : "false");
      else apply_setting(ctx.settings, key, flag_values[key]);
    }
    ctx.settings.model.validate();
    ctx.settings.train.validate();

    if (*generate) return cmd_generate(ctx, out_file);
    if (*stats) return cmd_stats(ctx, input, out_dir);
    if (*train_cmd) return cmd_train(ctx, input, out_dir, train_end);
    if (*backtest) return cmd_backtest(ctx, input, out_dir);
    if (*gap_cmd) return cmd_gap_study(ctx, input, out_dir, gaps);
    if (*evaluate) return cmd_evaluate(ctx, predictions, out_dir, eval_mode);
    if (*ablate) return cmd_ablate(ctx, input, out_dir, seeds);
    err << app.help();
    return kExitUsage;
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const InputError& e) {
    err << "error: " << e.what() << '\n';
    return kExitInput;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
}

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  return run_cli(std::vector<std::string>(argv, argv + argc), out, err);
}

}  // namespace meta
