#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include "meta/backtest.hpp"
#include "meta/cli.hpp"
#include "meta/errors.hpp"
#include "meta/metrics.hpp"

namespace py = pybind11;

namespace {

meta::Date to_date(const std::string& text) {
  const auto d = meta::Date::parse(text);
  if (!d) throw meta::ConfigError("not a YYYY-MM-DD date: " + text);
  return *d;
}

py::dict report_dict(const meta::MetricsReport& r) {
  py::dict d;
  d["mode"] = r.mode;
  d["f1_up"] = r.f1_up;
  d["f1_down"] = r.f1_down;
  d["accuracy"] = r.accuracy;
  d["n_records"] = r.n_records;
  d["undefined_flags"] = r.undefined_flags;
  return d;
}

std::vector<meta::PredictionRecord> to_records(const std::vector<int>& pred, const std::vector<int>& truth) {
  if (pred.size() != truth.size()) throw meta::InputError("pred and true differ in length");
  std::vector<meta::PredictionRecord> records(pred.size());
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (pred[i] < 0 || pred[i] > 2 || truth[i] < 0 || truth[i] > 2)
      throw meta::InputError("migration classes are 0 (up), 1 (unchanged), 2 (down)");
    records[i].pred_migration = static_cast<meta::Migration>(pred[i]);
    records[i].true_migration = static_cast<meta::Migration>(truth[i]);
  }
  return records;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Credit-rating migration model: data, backtest and metrics";

  py::register_exception<meta::ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<meta::InputError>(m, "InputError", PyExc_ValueError);
  py::register_exception<meta::AlignmentError>(m, "AlignmentError", PyExc_ValueError);

  m.def(
      "generate_synthetic",
      [](const std::filesystem::path& path, std::size_t companies, std::size_t quarters, std::uint64_t seed) {
        meta::SyntheticConfig cfg;
        cfg.n_companies = companies;
        cfg.n_quarters = quarters;
        cfg.seed = seed;
        const auto rows = meta::generate_synthetic(cfg);
        meta::write_panel_csv(path, rows, cfg.feature_count);
        return rows.size();
      },
      py::arg("path"), py::arg("companies") = 400, py::arg("quarters") = 40, py::arg("seed") = 7,
      "Write a synthetic panel CSV and return its row count.");

  m.def(
      "build_schedule",
      [](const std::string& test_start, const std::string& test_end, const std::string& train_start, int gap,
         bool pseudo_no_gap) {
        meta::ScheduleConfig cfg;
        cfg.test_period_start = to_date(test_start);
        cfg.test_period_end = to_date(test_end);
        cfg.train_start = to_date(train_start);
        cfg.gap_months = gap;
        cfg.pseudo_no_gap = pseudo_no_gap;
        py::list out;
        for (const auto& w : meta::build_schedule(cfg)) {
          py::dict d;
          d["window_id"] = w.id;
          d["train_start"] = w.train_start.iso();
          d["train_end"] = w.train_end.iso();
          d["label_cutoff"] = w.label_cutoff.iso();
          d["test_start"] = w.test_start.iso();
          d["test_end"] = w.test_end.iso();
          out.append(d);
        }
        return out;
      },
      py::arg("test_start") = "2005-01-01", py::arg("test_end") = "2020-12-31", py::arg("train_start") = "1997-01-01",
      py::arg("gap") = 12, py::arg("pseudo_no_gap") = false);

  m.def(
      "f1",
      [](const std::vector<int>& pred, const std::vector<int>& truth, int positive) {
        return meta::f1_for_class(to_records(pred, truth), static_cast<meta::Migration>(positive)).f1;
      },
      py::arg("pred"), py::arg("true"), py::arg("positive"));

  m.def(
      "accuracy",
      [](const std::vector<int>& pred, const std::vector<int>& truth) {
        return meta::accuracy(to_records(pred, truth));
      },
      py::arg("pred"), py::arg("true"));

  m.def(
      "evaluate",
      [](const std::filesystem::path& predictions, const std::string& mode) {
        const auto all = meta::read_predictions_csv(predictions);
        const auto records = meta::filter_mode(all, meta::parse_record_mode(mode));
        if (records.empty()) throw meta::InputError("no records in " + predictions.string());
        return report_dict(meta::summarize(records, mode));
      },
      py::arg("predictions"), py::arg("mode") = "direct");

  m.def(
      "run_cli",
      [](const std::vector<std::string>& args) {
        std::vector<std::string> argv{"meta_cli"};
        argv.insert(argv.end(), args.begin(), args.end());
        std::ostringstream out, err;
        int code = 0;
        {
          py::gil_scoped_release release;
          code = meta::run_cli(argv, out, err);
        }
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"), "Run a command-line invocation; returns (exit_code, stdout, stderr).");

  m.attr("UPGRADE") = 0;
  m.attr("UNCHANGED") = 1;
  m.attr("DOWNGRADE") = 2;
}
