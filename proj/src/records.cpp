#include "meta/records.hpp"

#include <fstream>
#include <sstream>

#include "meta/errors.hpp"

namespace meta {

namespace {

constexpr std::string_view kHeader =
    "window_id,company_id,as_of_date,pred_migration,pred_rating,true_migration,true_rating,mode,current_rating";

int rating_field(const std::string& text, std::size_t line) {
  auto idx = RatingScale::index_of(text);
  if (!idx || !RatingScale::is_kept(*idx)) {
    throw InputError("line " + std::to_string(line) + ": rating '" + text + "' not on the 14-level scale");
  }
  return *idx;
}

Migration migration_field(const std::string& text, std::size_t line) {
  auto m = parse_migration(text);
  if (!m) throw InputError("line " + std::to_string(line) + ": unknown migration '" + text + "'");
  return *m;
}

}  // namespace

std::string_view record_mode_name(RecordMode mode) {
  return mode == RecordMode::Direct ? "direct" : "rating_to_migration";
}

RecordMode parse_record_mode(std::string_view name) {
  if (name == "direct") return RecordMode::Direct;
  if (name == "rating_to_migration") return RecordMode::RatingToMigration;
  throw ConfigError("unknown record mode '" + std::string(name) + "'");
}

void write_predictions_csv(const std::filesystem::path& path, std::span<const PredictionRecord> records) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write " + path.string());
  out << kHeader << '\n';
  for (const auto& r : records) {
    out << r.window_id << ',' << r.company_id << ',' << r.as_of.iso() << ',' << migration_name(r.pred_migration)
        << ',' << RatingScale::symbol(r.pred_rating) << ',' << migration_name(r.true_migration) << ','
        << RatingScale::symbol(r.true_rating) << ',' << record_mode_name(r.mode) << ','
        << RatingScale::symbol(r.current_rating) << '\n';
  }
}

std::vector<PredictionRecord> read_predictions_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw InputError("empty predictions file " + path.string());
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kHeader) throw InputError("unexpected predictions header in " + path.string());
  std::vector<PredictionRecord> records;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    if (f.size() != 9) throw InputError("line " + std::to_string(line_no) + ": expected 9 fields");
    auto date = Date::parse(f[2]);
    if (!date) throw InputError("line " + std::to_string(line_no) + ": bad date '" + f[2] + "'");
    PredictionRecord r;
    try {
      r.window_id = std::stoul(f[0]);
      r.mode = parse_record_mode(f[7]);
    } catch (const std::exception&) {
      throw InputError("line " + std::to_string(line_no) + ": bad window id or mode");
    }
    r.company_id = f[1];
    r.as_of = *date;
    r.pred_migration = migration_field(f[3], line_no);
    r.pred_rating = rating_field(f[4], line_no);
    r.true_migration = migration_field(f[5], line_no);
    r.true_rating = rating_field(f[6], line_no);
    r.current_rating = rating_field(f[8], line_no);
    records.push_back(std::move(r));
  }
  return records;
}

std::vector<PredictionRecord> filter_mode(std::span<const PredictionRecord> records, RecordMode mode) {
  std::vector<PredictionRecord> out;
  for (const auto& r : records)
    if (r.mode == mode) out.push_back(r);
  return out;
}

}  // namespace meta
