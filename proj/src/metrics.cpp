#include "meta/metrics.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <tuple>

#include "meta/data.hpp"
#include "meta/errors.hpp"

namespace meta {

ConfusionCounts confusion(std::span<const PredictionRecord> records, Migration positive) {
  ConfusionCounts c;
  for (const auto& r : records) {
    const bool pred = r.pred_migration == positive;
    const bool truth = r.true_migration == positive;
    if (pred && truth) ++c.tp;
    else if (pred) ++c.fp;
    else if (truth) ++c.fn;
    else ++c.tn;
  }
  return c;
}

ClassScore score_counts(const ConfusionCounts& c) {
  ClassScore s;
  const auto predicted = c.tp + c.fp;
  const auto actual = c.tp + c.fn;
  if (predicted == 0) s.undefined = true;
  else s.precision = static_cast<double>(c.tp) / static_cast<double>(predicted);
  if (actual == 0) s.undefined = true;
  else s.recall = static_cast<double>(c.tp) / static_cast<double>(actual);
  if (s.precision + s.recall == 0.0) {
    s.undefined = true;
    s.f1 = 0.0;
  } else {
    s.f1 = 2.0 * s.precision * s.recall / (s.precision + s.recall);
  }
  return s;
}

ClassScore f1_for_class(std::span<const PredictionRecord> records, Migration positive) {
  if (records.empty()) throw InputError("no records to score");
  return score_counts(confusion(records, positive));
}

double accuracy(std::span<const PredictionRecord> records) {
  if (records.empty()) throw InputError("no records to score");
  const auto correct = std::count_if(records.begin(), records.end(),
                                     [](const PredictionRecord& r) { return r.pred_migration == r.true_migration; });
  return static_cast<double>(correct) / static_cast<double>(records.size());
}

MetricsReport summarize(std::span<const PredictionRecord> records, const std::string& mode) {
  MetricsReport report;
  report.mode = mode;
  report.n_records = records.size();
  const auto up = f1_for_class(records, Migration::Upgrade);
  const auto down = f1_for_class(records, Migration::Downgrade);
  report.f1_up = up.f1;
  report.f1_down = down.f1;
  report.accuracy = accuracy(records);
  if (up.undefined) report.undefined_flags.push_back("f1_up");
  if (down.undefined) report.undefined_flags.push_back("f1_down");
  return report;
}

std::map<std::string, MetricsReport> breakdown(std::span<const PredictionRecord> records, BreakdownAxis axis,
                                               const std::string& mode) {
  std::map<std::string, std::vector<PredictionRecord>> buckets;
  for (const auto& r : records) {
    const std::string key = axis == BreakdownAxis::Year ? std::to_string(r.as_of.year())
                                                        : std::string(rating_group(r.current_rating));
    buckets[key].push_back(r);
  }
  std::map<std::string, MetricsReport> out;
  for (const auto& [key, bucket] : buckets) out.emplace(key, summarize(bucket, mode));
  return out;
}

MetricsReport full_report(std::span<const PredictionRecord> records, const std::string& mode) {
  MetricsReport report = summarize(records, mode);
  report.by_year = breakdown(records, BreakdownAxis::Year, mode);
  report.by_rating = breakdown(records, BreakdownAxis::RatingGroup, mode);
  return report;
}

nlohmann::ordered_json metrics_json(const MetricsReport& report) {
  nlohmann::ordered_json j;
  j["version"] = kMetricsVersion;
  j["mode"] = report.mode;
  j["f1_up"] = report.f1_up;
  j["f1_down"] = report.f1_down;
  j["accuracy"] = report.accuracy;
  j["n_records"] = report.n_records;
  j["undefined_flags"] = report.undefined_flags;
  return j;
}

void write_metrics_json(const std::filesystem::path& path, const MetricsReport& report) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write " + path.string());
  out << metrics_json(report).dump(2) << '\n';
}

void write_breakdown_csv(const std::filesystem::path& path, const std::map<std::string, MetricsReport>& buckets) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write " + path.string());
  out << "bucket,n_records,f1_up,f1_down,accuracy\n";
  for (const auto& [key, r] : buckets) {
    out << key << ',' << r.n_records << ',' << format_number(r.f1_up) << ',' << format_number(r.f1_down) << ','
        << format_number(r.accuracy) << '\n';
  }
}

namespace {

using RecordKey = std::tuple<std::size_t, std::string, int>;

std::multiset<RecordKey> keys_of(std::span<const PredictionRecord> records) {
  std::multiset<RecordKey> keys;
  for (const auto& r : records) keys.emplace(r.window_id, r.company_id, r.as_of.days_since_epoch());
  return keys;
}

AblationRow row_for(const std::string& mode, std::span<const PredictionRecord> records) {
  const auto s = summarize(records, mode);
  return {mode, s.f1_up, s.f1_down, s.accuracy, s.n_records};
}

}  // namespace

std::vector<AblationRow> compare_modes(const AblationInputs& in) {
  const auto reference = keys_of(in.multi_task_direct);
  const std::pair<const char*, const std::vector<PredictionRecord>*> others[] = {
      {"rating-only", &in.rating_only},
      {"migration-only", &in.migration_only},
      {"multi-task rating->migration", &in.multi_task_rating}};
  for (const auto& [name, set] : others) {
    if (keys_of(*set) != reference) {
      throw AlignmentError(std::string(name) + " records do not cover the same samples as multi-task direct (" +
                           std::to_string(set->size()) + " vs " + std::to_string(in.multi_task_direct.size()) + ")");
    }
  }
  return {row_for("rating-only->migration", in.rating_only), row_for("migration-only", in.migration_only),
          row_for("multi-task rating->migration", in.multi_task_rating),
          row_for("multi-task direct", in.multi_task_direct)};
}

std::vector<AblationRow> average_ablation(std::span<const std::vector<AblationRow>> runs) {
  if (runs.empty()) throw InputError("no ablation runs to average");
  std::vector<AblationRow> mean = runs.front();
  for (std::size_t r = 0; r < mean.size(); ++r) {
    double up = 0, down = 0, acc = 0;
    for (const auto& run : runs) {
      if (run.size() != mean.size() || run[r].mode != mean[r].mode) throw AlignmentError("ablation rows differ");
      up += run[r].f1_up;
      down += run[r].f1_down;
      acc += run[r].accuracy;
    }
    const double n = static_cast<double>(runs.size());
    mean[r].f1_up = up / n;
    mean[r].f1_down = down / n;
    mean[r].accuracy = acc / n;
  }
  return mean;
}

void write_ablation_csv(const std::filesystem::path& path, std::span<const AblationRow> rows) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write " + path.string());
  out << "mode,n_records,f1_up,f1_down,accuracy\n";
  for (const auto& r : rows) {
    out << r.mode << ',' << r.n_records << ',' << format_number(r.f1_up) << ',' << format_number(r.f1_down) << ','
        << format_number(r.accuracy) << '\n';
  }
}

}  // namespace meta
