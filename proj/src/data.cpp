#include "meta/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <random>
#include <set>
#include <sstream>

#include "meta/errors.hpp"

namespace meta {

namespace {

constexpr double kMissing = std::numeric_limits<double>::quiet_NaN();

std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    if (comma == std::string_view::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
}

std::string feature_column(std::size_t index) {
  const std::string n = std::to_string(index + 1);
  return n.size() < 2 ? "f0" + n : "f" + n;
}

std::optional<double> parse_number(std::string_view text) {
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc{} || ptr != text.data() + text.size() || !std::isfinite(v)) return std::nullopt;
  return v;
}

}  // namespace

std::string format_number(double v) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

// ---------------------------------------------------------------------------
// CSV ingest

IngestResult parse_panel_csv(std::istream& in) {
  IngestResult result;
  std::string line;
  if (!std::getline(in, line)) throw InputError("empty input: no header line");
  if (!line.empty() && line.back() == '\r') line.pop_back();

  const auto header = split_commas(line);
  bool header_ok = header.size() >= 4 && header[0] == "company_id" && header[1] == "as_of_date" &&
                   header[2] == "rating";
  for (std::size_t i = 3; header_ok && i < header.size(); ++i) {
    header_ok = header[i] == feature_column(i - 3);
  }
  if (!header_ok) {
    throw InputError("missing or malformed header (expected company_id,as_of_date,rating,f01,...)");
  }
  result.feature_count = header.size() - 3;

  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto fields = split_commas(line);
    if (fields.size() != header.size()) {
      result.rejects.push_back({line_no, "expected " + std::to_string(header.size()) + " fields, got " +
                                             std::to_string(fields.size())});
      continue;
    }
    if (fields[0].empty()) {
      result.rejects.push_back({line_no, "empty company_id"});
      continue;
    }
    auto date = Date::parse(fields[1]);
    if (!date) {
      result.rejects.push_back({line_no, "unparseable date '" + std::string(fields[1]) + "'"});
      continue;
    }
    auto rating = RatingScale::index_of(fields[2]);
    if (!rating) {
      result.rejects.push_back({line_no, "unknown rating symbol '" + std::string(fields[2]) + "'"});
      continue;
    }
    PanelRow row{std::string(fields[0]), *date, *rating, {}};
    row.features.reserve(result.feature_count);
    std::optional<std::string> bad;
    for (std::size_t i = 3; i < fields.size(); ++i) {
      if (fields[i].empty()) {
        row.features.push_back(kMissing);
      } else if (auto v = parse_number(fields[i])) {
        row.features.push_back(*v);
      } else {
        bad = "bad numeric value in column " + feature_column(i - 3);
        break;
      }
    }
    if (bad) {
      result.rejects.push_back({line_no, *bad});
      continue;
    }
    result.rows.push_back(std::move(row));
  }
  return result;
}

IngestResult ingest_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open " + path.string());
  return parse_panel_csv(in);
}

void write_panel_csv(std::ostream& out, std::span<const PanelRow> rows, std::size_t feature_count) {
  out << "company_id,as_of_date,rating";
  for (std::size_t i = 0; i < feature_count; ++i) out << ',' << feature_column(i);
  out << '\n';
  for (const auto& row : rows) {
    out << row.company_id << ',' << row.as_of.iso() << ',' << RatingScale::symbol(row.rating);
    for (double v : row.features) {
      out << ',';
      if (!std::isnan(v)) out << format_number(v);
    }
    out << '\n';
  }
}

void write_panel_csv(const std::filesystem::path& path, std::span<const PanelRow> rows,
                     std::size_t feature_count) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write " + path.string());
  write_panel_csv(out, rows, feature_count);
}

void write_rejects_csv(const std::filesystem::path& path, std::span<const RejectedRow> rejects) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write " + path.string());
  out << "line_number,reason\n";
  for (const auto& r : rejects) out << r.line << ',' << r.reason << '\n';
}

// ---------------------------------------------------------------------------
// Quarterly grid

bool is_grid_date(const Date& d) { return d.day() == 1 && (d.month() - 1) % 3 == 0; }

Date grid_on_or_before(const Date& d) {
  return Date(d.year(), d.month() - (d.month() - 1) % 3, 1);
}

Date grid_on_or_after(const Date& d) {
  const Date floor = grid_on_or_before(d);
  return floor == d ? d : floor.add_months(kGridMonths);
}

// ---------------------------------------------------------------------------
// Preprocessing

FeatureStats feature_stats(std::span<const PanelRow> rows, std::size_t feature_count,
                           const std::optional<Date>& cutoff) {
  FeatureStats stats;
  stats.mean.assign(feature_count, 0.0);
  stats.stddev.assign(feature_count, 1.0);
  std::vector<double> sum(feature_count, 0.0), sum_sq(feature_count, 0.0);
  std::vector<std::size_t> count(feature_count, 0);
  for (const auto& row : rows) {
    if (cutoff && row.as_of > *cutoff) continue;
    for (std::size_t j = 0; j < feature_count; ++j) {
      const double v = row.features[j];
      if (std::isnan(v)) continue;
      sum[j] += v;
      ++count[j];
    }
  }
  for (std::size_t j = 0; j < feature_count; ++j) {
    if (count[j] > 0) stats.mean[j] = sum[j] / static_cast<double>(count[j]);
  }
  // Second pass on centred values keeps the variance accurate for features
  // with large magnitudes.
  for (const auto& row : rows) {
    if (cutoff && row.as_of > *cutoff) continue;
    for (std::size_t j = 0; j < feature_count; ++j) {
      const double v = row.features[j];
      if (!std::isnan(v)) sum_sq[j] += (v - stats.mean[j]) * (v - stats.mean[j]);
    }
  }
  for (std::size_t j = 0; j < feature_count; ++j) {
    if (count[j] >= 2) {
      const double sd = std::sqrt(sum_sq[j] / static_cast<double>(count[j]));
      if (sd > 0.0) stats.stddev[j] = sd;
    }
  }
  return stats;
}

PreprocessResult preprocess(std::span<const PanelRow> rows, const PreprocessConfig& config) {
  if (config.gap_months <= 0 || config.gap_months % kGridMonths != 0) {
    throw ConfigError("gap_months must be a positive multiple of 3, got " + std::to_string(config.gap_months));
  }
  if (config.seq_len < 1) throw ConfigError("seq_len must be >= 1");

  PreprocessResult result;
  if (rows.empty()) return result;
  const std::size_t dim = rows.front().features.size();
  for (const auto& row : rows) {
    if (row.features.size() != dim) throw DimensionError("panel rows disagree on feature count");
  }
  result.stats = feature_stats(rows, dim, config.stats_cutoff);

  // Group by company; duplicate dates keep the last occurrence.
  std::map<std::string, std::map<Date, const PanelRow*>> companies;
  for (const auto& row : rows) companies[row.company_id][row.as_of] = &row;

  const std::size_t T = config.seq_len;
  const int lag_steps = config.gap_months / kGridMonths;

  for (const auto& [company, dated] : companies) {
    struct Normalized {
      Date date;
      int rating;
      std::vector<double> features;
    };
    std::vector<Normalized> all;
    all.reserve(dated.size());
    for (const auto& [date, row] : dated) {
      Normalized n{date, row->rating, std::vector<double>(dim)};
      for (std::size_t j = 0; j < dim; ++j) {
        const double v = row->features[j];
        n.features[j] = std::isnan(v) ? 0.0 : (v - result.stats.mean[j]) / result.stats.stddev[j];
      }
      all.push_back(std::move(n));
    }
    std::vector<std::size_t> kept;
    for (std::size_t i = 0; i < all.size(); ++i)
      if (RatingScale::is_kept(all[i].rating)) kept.push_back(i);
    if (kept.empty()) {
      result.notes.push_back("company " + company + ": no rows on the 14-level scale, skipped");
      continue;
    }

    const Date first_grid = grid_on_or_after(all[kept.front()].date);
    const Date last_grid = grid_on_or_before(all.back().date);
    if (first_grid > last_grid) {
      result.notes.push_back("company " + company + ": no quarterly grid date inside its coverage, skipped");
      continue;
    }

    // Per grid date: latest kept row on or before it, and whether the latest
    // raw row is itself kept (otherwise the company is unrated there).
    std::vector<Date> grid;
    std::vector<std::size_t> source;
    std::vector<bool> active;
    std::size_t raw_pos = 0, kept_pos = 0;
    for (Date g = first_grid; g <= last_grid; g = g.add_months(kGridMonths)) {
      while (raw_pos + 1 < all.size() && all[raw_pos + 1].date <= g) ++raw_pos;
      while (kept_pos + 1 < kept.size() && all[kept[kept_pos + 1]].date <= g) ++kept_pos;
      grid.push_back(g);
      source.push_back(kept[kept_pos]);
      active.push_back(RatingScale::is_kept(all[raw_pos].rating));
    }

    auto rating_in_force = [&](const Date& when) -> int {
      int rating = all.front().rating;
      for (const auto& n : all) {
        if (n.date > when) break;
        rating = n.rating;
      }
      return rating;
    };
    auto fill_window = [&](std::ptrdiff_t end_index, std::vector<double>& out) {
      out.resize(T * dim);
      for (std::size_t t = 0; t < T; ++t) {
        const std::ptrdiff_t k = std::max<std::ptrdiff_t>(0, end_index - static_cast<std::ptrdiff_t>(T - 1 - t));
        const auto& feats = all[source[static_cast<std::size_t>(k)]].features;
        std::copy(feats.begin(), feats.end(), out.begin() + static_cast<std::ptrdiff_t>(t * dim));
      }
    };

    const Date coverage_end = all.back().date;
    for (std::size_t k = 0; k < grid.size(); ++k) {
      if (!active[k]) continue;
      CompanySample s;
      s.company_id = company;
      s.as_of = grid[k];
      s.gap_months = config.gap_months;
      s.seq_len = T;
      s.input_dim = dim;
      s.current_rating = all[source[k]].rating;
      fill_window(static_cast<std::ptrdiff_t>(k), s.x);
      for (std::size_t t = 0; t < T; ++t) {
        s.window_dates.push_back(grid[k].add_months(-kGridMonths * static_cast<int>(T - 1 - t)));
      }
      const std::size_t lag_index = k + static_cast<std::size_t>(lag_steps);
      if (lag_index < grid.size()) {
        std::vector<double> lag;
        fill_window(static_cast<std::ptrdiff_t>(lag_index), lag);
        s.x_lag = std::move(lag);
      }
      const Date label_date = s.label_date();
      if (label_date <= coverage_end) {
        const int future = rating_in_force(label_date);
        if (RatingScale::is_kept(future)) {
          s.rating_label = future;
          s.migration_label = migration_between(s.current_rating, future);
        }
      }
      result.samples.push_back(std::move(s));
    }
  }
  return result;
}

// ---------------------------------------------------------------------------
// Synthetic panel

namespace {

// Generator constants. The label mix they produce over 400 x 40 is checked in
// the data tests.
struct LatentDynamics {
  double initial_mean = 7.5;
  double initial_sd = 2.2;
  double drift = 0.016;           // per quarter, towards worse ratings
  double momentum_persistence = 0.8;
  double momentum_sd = 0.045;
  double latent_sd = 0.05;
  double hysteresis = 0.15;       // beyond the half-notch boundary
  double floor = 0.0;
  double ceiling = static_cast<double>(RatingScale::kKeptLevels - 1);
};

}  // namespace

std::vector<PanelRow> generate_synthetic(const SyntheticConfig& config) {
  if (config.n_companies < 1) throw ConfigError("n_companies must be >= 1");
  if (config.n_quarters < 1) throw ConfigError("n_quarters must be >= 1");
  if (config.feature_count < 4) throw ConfigError("feature_count must be >= 4");

  const LatentDynamics dyn;
  std::mt19937_64 rng(config.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  const std::size_t F = config.feature_count;
  // Feature blocks: rating level, momentum (leading), distance to the next
  // notch boundary, and pure noise.
  const std::size_t level_end = F * 2 / 7;
  const std::size_t momentum_end = F * 4 / 7;
  const std::size_t distance_end = F * 11 / 14;

  constexpr int kGroups = 6;  // AAA, AA, A, BBB, BB, B+
  auto group_of = [](int rating) {
    if (rating == 0) return 0;
    return std::min(kGroups - 1, (rating + 2) / 3);
  };
  std::vector<std::array<double, kGroups>> group_mean(F);
  std::vector<double> loading(F), feature_scale(F), offset(F), persistence(F), noise_sd(F);
  for (std::size_t j = 0; j < F; ++j) {
    for (int g = 0; g < kGroups; ++g) group_mean[j][static_cast<std::size_t>(g)] = 0.5 * normal(rng);
    loading[j] = (unit(rng) < 0.5 ? -1.0 : 1.0) * (0.6 + 0.8 * unit(rng));
    feature_scale[j] = std::pow(10.0, -2.0 + 8.0 * unit(rng));
    offset[j] = 3.0 * normal(rng);
    persistence[j] = 0.8 + 0.18 * unit(rng);
    noise_sd[j] = 0.4 + 0.3 * unit(rng);
  }

  std::vector<PanelRow> rows;
  rows.reserve(config.n_companies * config.n_quarters);
  const int id_width = static_cast<int>(std::to_string(config.n_companies).size());
  for (std::size_t c = 0; c < config.n_companies; ++c) {
    char id[32];
    std::snprintf(id, sizeof(id), "C%0*zu", id_width, c + 1);

    double latent = std::clamp(dyn.initial_mean + dyn.initial_sd * normal(rng), dyn.floor, dyn.ceiling);
    int rating = static_cast<int>(std::lround(latent));
    const double momentum_stationary_sd =
        dyn.momentum_sd / std::sqrt(1.0 - dyn.momentum_persistence * dyn.momentum_persistence);
    double momentum = momentum_stationary_sd * normal(rng);
    std::vector<double> noise(F);
    for (std::size_t j = 0; j < F; ++j) noise[j] = noise_sd[j] * normal(rng);

    Date date = config.start;
    for (std::size_t q = 0; q < config.n_quarters; ++q) {
      if (q > 0) {
        latent = std::clamp(latent + dyn.drift + momentum + dyn.latent_sd * normal(rng), dyn.floor - 0.4,
                            dyn.ceiling + 0.4);
        momentum = dyn.momentum_persistence * momentum + dyn.momentum_sd * normal(rng);
        const double band = 0.5 + dyn.hysteresis;
        if (std::abs(latent - rating) > band) {
          rating = static_cast<int>(std::clamp(std::lround(latent), 0L,
                                               static_cast<long>(RatingScale::kKeptLevels - 1)));
        }
      }
      // Standardised momentum so the leading block has unit-scale signal.
      const double momentum_z = momentum / momentum_stationary_sd;
      const double distance = latent - rating;

      PanelRow row{id, date, rating, std::vector<double>(F)};
      for (std::size_t j = 0; j < F; ++j) {
        noise[j] = persistence[j] * noise[j] +
                   noise_sd[j] * std::sqrt(1.0 - persistence[j] * persistence[j]) * normal(rng);
        double signal = 0.0;
        if (j < level_end) {
          signal = group_mean[j][static_cast<std::size_t>(group_of(rating))] + loading[j] * (latent - 6.5) / 3.5;
        } else if (j < momentum_end) {
          signal = loading[j] * momentum_z;
        } else if (j < distance_end) {
          signal = loading[j] * distance * 2.0;
        }
        const double v = (offset[j] + signal + noise[j]) * feature_scale[j];
        row.features[j] = unit(rng) < config.missing_rate ? kMissing : v;
      }
      rows.push_back(std::move(row));
      date = date.add_months(kGridMonths);
    }
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Statistics tables

std::size_t MigrationMatrix::row_total(int from) const {
  std::size_t total = 0;
  for (std::size_t c : counts[static_cast<std::size_t>(from)]) total += c;
  return total;
}

double MigrationMatrix::ratio(int from, int to) const {
  const std::size_t total = row_total(from);
  if (total == 0) return 0.0;
  return static_cast<double>(counts[static_cast<std::size_t>(from)][static_cast<std::size_t>(to)]) /
         static_cast<double>(total);
}

StatsReport stats_report(std::span<const CompanySample> samples) {
  StatsReport report;
  // Latest as-of rating of each company within each year.
  std::map<int, std::map<std::string, std::pair<Date, int>>> latest;
  std::map<int, YearMigrationRate> rates;
  std::map<int, std::set<std::string>> companies;
  for (const auto& s : samples) {
    const int year = s.as_of.year();
    auto [slot, inserted] = latest[year].try_emplace(s.company_id, s.as_of, s.current_rating);
    if (!inserted && s.as_of >= slot->second.first) slot->second = {s.as_of, s.current_rating};
    companies[year].insert(s.company_id);
    auto& r = rates[year];
    r.year = year;
    if (s.labeled()) {
      ++r.labeled;
      if (*s.migration_label == Migration::Upgrade) ++r.upgrades;
      if (*s.migration_label == Migration::Downgrade) ++r.downgrades;
      report.matrix.counts[static_cast<std::size_t>(s.current_rating)][static_cast<std::size_t>(*s.rating_label)]++;
    }
  }
  for (const auto& [year, by_company] : latest) {
    std::map<int, std::size_t> counts;
    for (const auto& [company, entry] : by_company) counts[entry.second]++;
    for (const auto& [rating, count] : counts) {
      report.ratings_by_year.push_back(
          {year, rating, count, 100.0 * static_cast<double>(count) / static_cast<double>(by_company.size())});
    }
  }
  for (auto& [year, r] : rates) {
    r.companies = companies[year].size();
    if (r.labeled > 0) {
      r.pct_up = 100.0 * static_cast<double>(r.upgrades) / static_cast<double>(r.labeled);
      r.pct_down = 100.0 * static_cast<double>(r.downgrades) / static_cast<double>(r.labeled);
    }
    report.migration_rates.push_back(r);
  }
  return report;
}

void write_stats(const StatsReport& report, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  auto open = [&](const char* name) {
    std::ofstream out(dir / name, std::ios::binary);
    if (!out) throw InputError("cannot write " + (dir / name).string());
    return out;
  };
  {
    auto out = open("ratings_by_year.csv");
    out << "year,rating,count,percentage\n";
    for (const auto& r : report.ratings_by_year) {
      out << r.year << ',' << RatingScale::symbol(r.rating) << ',' << r.count << ',' << format_number(r.percentage)
          << '\n';
    }
  }
  {
    auto out = open("migration_rates.csv");
    out << "year,companies,labeled,upgrades,downgrades,pct_up,pct_down\n";
    for (const auto& r : report.migration_rates) {
      out << r.year << ',' << r.companies << ',' << r.labeled << ',' << r.upgrades << ',' << r.downgrades << ','
          << format_number(r.pct_up) << ',' << format_number(r.pct_down) << '\n';
    }
  }
  {
    auto out = open("migration_matrix.csv");
    out << "from";
    for (int j = 0; j < RatingScale::kKeptLevels; ++j) out << ',' << RatingScale::symbol(j);
    out << ",observations\n";
    for (int i = 0; i < RatingScale::kKeptLevels; ++i) {
      out << RatingScale::symbol(i);
      for (int j = 0; j < RatingScale::kKeptLevels; ++j) out << ',' << format_number(report.matrix.ratio(i, j));
      out << ',' << report.matrix.row_total(i) << '\n';
    }
  }
}

}  // namespace meta
