#include "tfbest/data.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <random>
#include <unordered_map>

#include <fmt/format.h>
#include "json.hpp"

namespace tfbest::data {

namespace {

using json = nlohmann::json;

std::string where(const std::filesystem::path& file, std::size_t line) {
  return file.string() + ":" + std::to_string(line);
}

// Splits one CSV line; double quotes group fields and "" escapes a quote.
std::vector<std::string> split_csv(std::string_view line) {
  std::vector<std::string> out;
  std::string field;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char ch = line[i];
    if (quoted) {
      if (ch == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        field += '"';
        ++i;
      } else if (ch == '"') {
        quoted = false;
      } else {
        field += ch;
      }
    } else if (ch == '"') {
      quoted = true;
    } else if (ch == ',') {
      out.push_back(std::move(field));
      field.clear();
    } else {
      field += ch;
    }
  }
  out.push_back(std::move(field));
  return out;
}

bool parse_number(std::string_view s, double& out) {
  while (!s.empty() && s.front() == ' ') s.remove_prefix(1);
  while (!s.empty() && s.back() == ' ') s.remove_suffix(1);
  if (s.empty()) return false;
  auto res = std::from_chars(s.data(), s.data() + s.size(), out);
  return res.ec == std::errc{} && res.ptr == s.data() + s.size();
}

// Box-Muller over mt19937_64; std::normal_distribution is not
// specified bit-for-bit across standard libraries.
struct Gaussian {
  std::mt19937_64& rng;
  double uniform() { return (static_cast<double>(rng() >> 11) + 0.5) * 0x1.0p-53; }
  double normal() {
    const double u1 = uniform(), u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }
};

}  // namespace

Day parse_date(std::string_view text) {
  using namespace std::chrono;
  int y = 0;
  unsigned m = 0, d = 0;
  auto bad = [&] { return DataError("unparseable date '" + std::string(text) + "'"); };
  if (text.size() != 10 || text[4] != '-' || text[7] != '-') throw bad();
  auto r1 = std::from_chars(text.data(), text.data() + 4, y);
  auto r2 = std::from_chars(text.data() + 5, text.data() + 7, m);
  auto r3 = std::from_chars(text.data() + 8, text.data() + 10, d);
  if (r1.ec != std::errc{} || r2.ec != std::errc{} || r3.ec != std::errc{} || r1.ptr != text.data() + 4 ||
      r2.ptr != text.data() + 7 || r3.ptr != text.data() + 10) {
    throw bad();
  }
  const year_month_day ymd{year{y}, month{m}, day{d}};
  if (!ymd.ok()) throw bad();
  return static_cast<Day>(sys_days{ymd}.time_since_epoch().count());
}

std::string format_date(Day day) {
  using namespace std::chrono;
  const year_month_day ymd{sys_days{days{day}}};
  return fmt::format("{:04d}-{:02d}-{:02d}", static_cast<int>(ymd.year()), static_cast<unsigned>(ymd.month()),
                     static_cast<unsigned>(ymd.day()));
}

// ---- ingestion ------------------------------------------------------------------

std::vector<std::string> raw_smart_columns(const std::filesystem::path& csv) {
  std::ifstream in(csv);
  if (!in) throw DataError("cannot open " + csv.string());
  std::string header;
  if (!std::getline(in, header)) throw DataError(csv.string() + ": missing header row");
  if (!header.empty() && header.back() == '\r') header.pop_back();
  std::vector<std::string> out;
  for (auto& col : split_csv(header)) {
    if (col.rfind("smart_", 0) == 0 && col.size() > 10 && col.compare(col.size() - 4, 4, "_raw") == 0) {
      out.push_back(col);
    }
  }
  return out;
}

std::vector<DriveHistory> ingest_csv(std::span<const std::filesystem::path> paths, const IngestOptions& options,
                                     IngestStats* stats) {
  IngestStats local;
  std::map<std::string, DriveHistory> by_serial;
  const std::size_t nf = options.feature_columns.size();

  for (const auto& path : paths) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path.string());
    std::string line;
    if (!std::getline(in, line)) throw DataError(path.string() + ": missing header row");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto header = split_csv(line);
    std::unordered_map<std::string, std::size_t> index;
    for (std::size_t i = 0; i < header.size(); ++i) index.emplace(header[i], i);
    auto column = [&](const std::string& name) {
      auto it = index.find(name);
      if (it == index.end()) throw DataError(path.string() + ": missing required column '" + name + "'");
      return it->second;
    };
    const std::size_t c_date = column("date"), c_serial = column("serial_number"), c_model = column("model"),
                      c_failure = column("failure");
    std::vector<std::size_t> c_features;
    for (const auto& name : options.feature_columns) c_features.push_back(column(name));

    std::size_t lineno = 1;
    while (std::getline(in, line)) {
      ++lineno;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty()) continue;
      const auto cells = split_csv(line);
      if (cells.size() != header.size()) {
        throw DataError(where(path, lineno) + ": expected " + std::to_string(header.size()) + " fields, got " +
                        std::to_string(cells.size()));
      }
      ++local.rows;
      if (!options.model_filter.empty() && cells[c_model] != options.model_filter) {
        ++local.filtered_rows;
        continue;
      }
      SmartRecord rec;
      try {
        rec.date = parse_date(cells[c_date]);
      } catch (const DataError& e) {
        throw DataError(where(path, lineno) + ": " + e.what());
      }
      rec.serial = cells[c_serial];
      rec.model = cells[c_model];
      if (rec.serial.empty()) throw DataError(where(path, lineno) + ": empty serial_number");
      if (cells[c_failure] == "1") {
        rec.failure = true;
      } else if (cells[c_failure] != "0") {
        throw DataError(where(path, lineno) + ": failure must be 0 or 1, got '" + cells[c_failure] + "'");
      }
      rec.features.resize(nf);
      for (std::size_t f = 0; f < nf; ++f) {
        const std::string& cell = cells[c_features[f]];
        if (cell.empty()) {
          rec.features[f] = kMissing;
        } else if (!parse_number(cell, rec.features[f])) {
          throw DataError(where(path, lineno) + ": column '" + options.feature_columns[f] + "' is not numeric: '" +
                          cell + "'");
        }
      }
      DriveHistory& h = by_serial[rec.serial];
      if (h.serial.empty()) {
        h.serial = rec.serial;
        h.model = rec.model;
      }
      h.records.push_back(std::move(rec));
    }
  }

  std::vector<DriveHistory> out;
  for (auto& [serial, h] : by_serial) {
    std::stable_sort(h.records.begin(), h.records.end(),
                     [](const SmartRecord& a, const SmartRecord& b) { return a.date < b.date; });
    const std::size_t before = h.records.size();
    h.records.erase(std::unique(h.records.begin(), h.records.end(),
                                [](const SmartRecord& a, const SmartRecord& b) { return a.date == b.date; }),
                    h.records.end());
    local.duplicate_rows += before - h.records.size();

    std::size_t failures = 0;
    for (const auto& r : h.records) failures += r.failure ? 1 : 0;
    if (failures == 0) {
      ++local.healthy_serials;
      continue;
    }
    if (failures > 1 || !h.records.back().failure) {
      throw DataError("serial " + serial + ": records continue after the failure record");
    }
    h.failure_date = h.records.back().date;
    out.push_back(std::move(h));
  }
  if (local.duplicate_rows > 0) {
    spdlog::warn("ingest: dropped {} duplicate (serial, date) rows, keeping the first occurrence",
                 local.duplicate_rows);
  }
  if (stats) *stats = local;
  return out;
}

std::vector<int> label_rul(const DriveHistory& history) {
  std::vector<int> rul;
  rul.reserve(history.records.size());
  for (const auto& r : history.records) {
    if (r.date > history.failure_date) {
      throw DataError("serial " + history.serial + ": record dated " + format_date(r.date) + " after failure date " +
                      format_date(history.failure_date));
    }
    rul.push_back(history.failure_date - r.date);
  }
  return rul;
}

DriveHistory cap_history(const DriveHistory& history, int max_rul) {
  DriveHistory out = history;
  out.records.clear();
  for (const auto& r : history.records) {
    if (history.failure_date - r.date <= max_rul) out.records.push_back(r);
  }
  return out;
}

void forward_fill(DriveHistory& history) {
  for (std::size_t i = 1; i < history.records.size(); ++i) {
    auto& cur = history.records[i].features;
    const auto& prev = history.records[i - 1].features;
    for (std::size_t f = 0; f < cur.size(); ++f) {
      if (is_missing(cur[f])) cur[f] = prev[f];
    }
  }
}

// ---- normalization ----------------------------------------------------------

double NormStats::normalize(std::size_t feature, double value) const {
  if (is_missing(value)) return 0.0;
  return (value - mean[feature]) / stddev[feature];
}

double NormStats::denormalize(std::size_t feature, double value) const {
  return value * stddev[feature] + mean[feature];
}

NormStats compute_norm_stats(std::span<const DriveHistory> histories, std::vector<std::string> columns) {
  const std::size_t nf = columns.size();
  NormStats s;
  s.columns = std::move(columns);
  s.mean.assign(nf, 0.0);
  s.stddev.assign(nf, 1.0);
  std::vector<std::size_t> count(nf, 0);
  std::vector<double> sum(nf, 0.0);
  for (const auto& h : histories)
    for (const auto& r : h.records)
      for (std::size_t f = 0; f < nf; ++f)
        if (!is_missing(r.features[f])) {
          sum[f] += r.features[f];
          ++count[f];
        }
  for (std::size_t f = 0; f < nf; ++f) s.mean[f] = count[f] ? sum[f] / static_cast<double>(count[f]) : 0.0;
  std::vector<double> sq(nf, 0.0);
  for (const auto& h : histories)
    for (const auto& r : h.records)
      for (std::size_t f = 0; f < nf; ++f)
        if (!is_missing(r.features[f])) sq[f] += (r.features[f] - s.mean[f]) * (r.features[f] - s.mean[f]);
  for (std::size_t f = 0; f < nf; ++f) {
    const double sd = count[f] ? std::sqrt(sq[f] / static_cast<double>(count[f])) : 1.0;
    s.stddev[f] = std::max(sd, NormStats::kMinStd);
  }
  return s;
}

// ---- windows ------------------------------------------------------------------

std::vector<WindowSample> make_windows(const DriveHistory& history, std::size_t window, const NormStats& stats) {
  if (window == 0) throw std::invalid_argument("make_windows: window length must be positive");
  const std::size_t d = history.records.size();
  std::vector<WindowSample> out;
  if (d < window) return out;
  const std::vector<int> rul = label_rul(history);
  const std::size_t nf = stats.columns.size();
  out.reserve(d - window + 1);
  for (std::size_t start = 0; start + window <= d; ++start) {
    WindowSample w;
    w.serial = history.serial;
    w.steps = window;
    w.features = nf;
    w.values.resize(window * nf);
    w.targets.resize(window);
    w.day_index.resize(window);
    for (std::size_t t = 0; t < window; ++t) {
      const auto& rec = history.records[start + t];
      if (rec.features.size() != nf) {
        throw DataError("serial " + history.serial + ": record has " + std::to_string(rec.features.size()) +
                        " features, statistics have " + std::to_string(nf));
      }
      for (std::size_t f = 0; f < nf; ++f) {
        w.values[t * nf + f] = static_cast<float>(stats.normalize(f, rec.features[f]));
      }
      w.targets[t] = rul[start + t];
      w.day_index[t] = static_cast<int>(start + t);
    }
    out.push_back(std::move(w));
  }
  return out;
}

// ---- splits ---------------------------------------------------------------------

SplitBoundaries SplitBoundaries::defaults() {
  return {parse_date("2013-01-01"), parse_date("2020-01-01"), parse_date("2021-01-01")};
}

void SplitBoundaries::validate() const {
  if (!(train_begin < val_begin && val_begin < test_begin)) {
    throw std::invalid_argument("split boundaries must be strictly increasing: " + format_date(train_begin) + ", " +
                                format_date(val_begin) + ", " + format_date(test_begin));
  }
}

DatasetSplit split_by_date(std::vector<DriveHistory> histories, const SplitBoundaries& b) {
  b.validate();
  DatasetSplit out;
  for (auto& h : histories) {
    if (h.failure_date < b.train_begin) {
      ++out.dropped;
    } else if (h.failure_date < b.val_begin) {
      out.train.push_back(std::move(h));
    } else if (h.failure_date < b.test_begin) {
      out.val.push_back(std::move(h));
    } else {
      out.test.push_back(std::move(h));
    }
  }
  if (out.train.empty()) spdlog::warn("split: training split is empty");
  if (out.val.empty()) spdlog::warn("split: validation split is empty");
  if (out.test.empty()) spdlog::warn("split: test split is empty");
  return out;
}

// ---- synthetic data ---------------------------------------------------------------

SynthOptions SynthOptions::defaults() {
  SynthOptions o;
  o.first_failure = parse_date("2013-03-01");
  o.last_failure = parse_date("2023-06-30");
  return o;
}

std::vector<std::string> synth_feature_columns(std::size_t features) {
  static constexpr int kIds[] = {1,   3,   4,   5,   7,   9,   10,  12,  183, 184, 187, 188,
                                 189, 190, 191, 192, 193, 194, 197, 198, 199, 240, 241, 242};
  std::vector<std::string> cols;
  for (std::size_t i = 0; i < features; ++i) {
    const int id = i < std::size(kIds) ? kIds[i] : 243 + static_cast<int>(i - std::size(kIds));
    cols.push_back("smart_" + std::to_string(id) + "_raw");
  }
  return cols;
}

std::vector<DriveHistory> synth_generate(const SynthOptions& o) {
  if (o.drives == 0) throw std::invalid_argument("synth: need at least one drive");
  if (o.features == 0) throw std::invalid_argument("synth: need at least one feature");
  if (o.min_days < 2 || o.max_days < o.min_days) throw std::invalid_argument("synth: invalid history length range");
  if (o.last_failure < o.first_failure) throw std::invalid_argument("synth: invalid failure date range");

  std::mt19937_64 rng(o.seed);
  Gaussian g{rng};

  // Per-feature structure shared by all drives of the model.
  const std::size_t informative = std::max<std::size_t>(1, (o.features * 5 + 7) / 8);
  std::vector<double> loading(o.features), base(o.features), unit(o.features), period(o.features),
      phase(o.features);
  for (std::size_t f = 0; f < o.features; ++f) {
    const double sign = g.uniform() < 0.5 ? -1.0 : 1.0;
    loading[f] = f < informative ? sign * (0.6 + 0.8 * g.uniform()) : 0.0;
    base[f] = std::floor(1000.0 * g.uniform());
    unit[f] = std::pow(10.0, std::floor(3.0 * g.uniform()));
    period[f] = 30.0 + 335.0 * g.uniform();
    phase[f] = 2.0 * std::numbers::pi * g.uniform();
  }

  std::vector<DriveHistory> out;
  out.reserve(o.drives);
  const int span = o.last_failure - o.first_failure + 1;
  for (std::size_t i = 0; i < o.drives; ++i) {
    DriveHistory h;
    h.serial = fmt::format("ZS{:06d}", i);
    h.model = o.model;
    const int length = o.min_days + static_cast<int>(g.uniform() * (o.max_days - o.min_days + 1));
    h.failure_date = o.first_failure + static_cast<Day>(g.uniform() * span);

    // Positive, accelerating, noisy decrements normalized so health hits 0 on
    // the last day.
    std::vector<double> wear(length, 0.0);
    double total = 0.0;
    const double accel = 1.0 + 2.0 * g.uniform();
    for (int t = 1; t < length; ++t) {
      const double frac = static_cast<double>(t) / length;
      const double step = (1.0 + accel * frac * frac) * std::max(0.1, 1.0 + 0.3 * g.normal());
      total += step;
      wear[t] = total;
    }
    const double noise = 0.08;
    for (int t = 0; t < length; ++t) {
      const double health = 1.0 - wear[t] / total;
      SmartRecord r;
      r.date = h.failure_date - (length - 1 - t);
      r.serial = h.serial;
      r.model = h.model;
      r.failure = t == length - 1;
      r.features.resize(o.features);
      for (std::size_t f = 0; f < o.features; ++f) {
        const double seasonal = 0.15 * std::sin(2.0 * std::numbers::pi * r.date / period[f] + phase[f]);
        const double latent = loading[f] * (1.0 - health) + seasonal + noise * g.normal();
        r.features[f] = std::round((base[f] + unit[f] * latent) * 1e4) / 1e4;
      }
      h.records.push_back(std::move(r));
    }
    out.push_back(std::move(h));
  }
  return out;
}

void write_backblaze_csv(std::span<const DriveHistory> histories, const std::vector<std::string>& columns,
                         const std::filesystem::path& path) {
  struct Row {
    Day date;
    const SmartRecord* rec;
  };
  std::vector<Row> rows;
  for (const auto& h : histories)
    for (const auto& r : h.records) rows.push_back({r.date, &r});
  std::stable_sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) {
    return a.date != b.date ? a.date < b.date : a.rec->serial < b.rec->serial;
  });

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  std::string line = "date,serial_number,model,capacity_bytes,failure";
  for (const auto& c : columns) line += "," + c;
  out << line << '\n';
  for (const auto& row : rows) {
    const SmartRecord& r = *row.rec;
    line = fmt::format("{},{},{},4000787030016,{}", format_date(r.date), r.serial, r.model, r.failure ? 1 : 0);
    for (double v : r.features) {
      line += is_missing(v) ? std::string(",") : fmt::format(",{:.4f}", v);
    }
    out << line << '\n';
  }
  if (!out) throw DataError("write failed: " + path.string());
}

// ---- prepared datasets ---------------------------------------------------------

PreparedDataset prepare_dataset(std::vector<DriveHistory> histories, const PrepareOptions& options) {
  if (histories.empty()) throw DataError("prepare: no failing drives to prepare");
  if (options.window == 0) throw std::invalid_argument("prepare: window length must be positive");
  if (options.max_rul < 0) throw std::invalid_argument("prepare: max_rul must be non-negative");
  const std::size_t nf = histories.front().records.empty() ? 0 : histories.front().records.front().features.size();
  std::vector<std::string> columns = options.columns;
  if (columns.empty()) {
    for (std::size_t f = 0; f < nf; ++f) columns.push_back("feature_" + std::to_string(f));
  }
  if (columns.size() != nf) {
    throw DataError("prepare: " + std::to_string(columns.size()) + " column names for " + std::to_string(nf) +
                    " features");
  }

  PreparedDataset ds;
  ds.window = options.window;
  ds.max_rul = options.max_rul;
  for (auto& h : histories) h = cap_history(h, options.max_rul);
  DatasetSplit split = split_by_date(std::move(histories), options.boundaries);
  ds.dropped_drives = split.dropped;
  for (auto* part : {&split.train, &split.val, &split.test})
    for (auto& h : *part) forward_fill(h);
  if (split.train.empty()) throw DataError("prepare: no drives failed inside the training period");
  ds.stats = compute_norm_stats(split.train, std::move(columns));

  auto windows_of = [&](const std::vector<DriveHistory>& part, std::vector<WindowSample>& out, std::size_t& drives) {
    for (const auto& h : part) {
      auto w = make_windows(h, options.window, ds.stats);
      if (w.empty()) {
        ++ds.short_drives;
        continue;
      }
      ++drives;
      std::move(w.begin(), w.end(), std::back_inserter(out));
    }
  };
  windows_of(split.train, ds.train, ds.train_drives);
  windows_of(split.val, ds.val, ds.val_drives);
  windows_of(split.test, ds.test, ds.test_drives);
  if (ds.short_drives > 0) {
    spdlog::info("prepare: {} drives have fewer than {} usable records and produce no windows", ds.short_drives,
                 options.window);
  }
  return ds;
}

void write_windows_ndjson(std::span<const WindowSample> windows, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  for (const auto& w : windows) {
    json features = json::array();
    for (std::size_t t = 0; t < w.steps; ++t) {
      features.push_back(std::vector<float>(w.values.begin() + static_cast<std::ptrdiff_t>(t * w.features),
                                            w.values.begin() + static_cast<std::ptrdiff_t>((t + 1) * w.features)));
    }
    json j = {{"serial", w.serial}, {"day_index", w.day_index}, {"targets", w.targets}, {"features", features}};
    out << j.dump() << '\n';
  }
  if (!out) throw DataError("write failed: " + path.string());
}

std::vector<WindowSample> read_windows_ndjson(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::vector<WindowSample> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const json j = json::parse(line);
      WindowSample w;
      w.serial = j.at("serial").get<std::string>();
      w.day_index = j.at("day_index").get<std::vector<int>>();
      w.targets = j.at("targets").get<std::vector<int>>();
      const auto& rows = j.at("features");
      w.steps = rows.size();
      w.features = w.steps ? rows.at(0).size() : 0;
      for (const auto& row : rows) {
        if (row.size() != w.features) throw DataError("ragged feature rows");
        for (const auto& v : row) w.values.push_back(v.get<float>());
      }
      if (w.steps == 0 || w.features == 0 || w.targets.size() != w.steps || w.day_index.size() != w.steps) {
        throw DataError("inconsistent window lengths");
      }
      out.push_back(std::move(w));
    } catch (const json::exception& e) {
      throw DataError(where(path, lineno) + ": " + e.what());
    } catch (const DataError& e) {
      throw DataError(where(path, lineno) + ": " + e.what());
    }
  }
  return out;
}

void write_prepared(const PreparedDataset& ds, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  write_windows_ndjson(ds.train, dir / "train.ndjson");
  write_windows_ndjson(ds.val, dir / "val.ndjson");
  write_windows_ndjson(ds.test, dir / "test.ndjson");
  json side = {{"format_version", 1},
               {"window", ds.window},
               {"max_rul", ds.max_rul},
               {"columns", ds.stats.columns},
               {"mean", ds.stats.mean},
               {"stddev", ds.stats.stddev},
               {"counts",
                {{"train_windows", ds.train.size()},
                 {"val_windows", ds.val.size()},
                 {"test_windows", ds.test.size()},
                 {"train_drives", ds.train_drives},
                 {"val_drives", ds.val_drives},
                 {"test_drives", ds.test_drives},
                 {"short_drives", ds.short_drives},
                 {"dropped_drives", ds.dropped_drives}}}};
  std::ofstream out(dir / "dataset.json", std::ios::trunc);
  if (!out) throw DataError("cannot open " + (dir / "dataset.json").string() + " for writing");
  out << side.dump(2) << '\n';
  if (!out) throw DataError("write failed: " + (dir / "dataset.json").string());
}

PreparedDataset read_prepared_metadata(const std::filesystem::path& dir) {
  const auto path = dir / "dataset.json";
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string() + " (not a prepared dataset directory?)");
  PreparedDataset ds;
  try {
    const json side = json::parse(in);
    if (side.at("format_version").get<int>() != 1) throw DataError("unsupported dataset format version");
    ds.window = side.at("window").get<std::size_t>();
    ds.max_rul = side.at("max_rul").get<int>();
    ds.stats.columns = side.at("columns").get<std::vector<std::string>>();
    ds.stats.mean = side.at("mean").get<std::vector<double>>();
    ds.stats.stddev = side.at("stddev").get<std::vector<double>>();
    const auto& c = side.at("counts");
    ds.train_drives = c.at("train_drives").get<std::size_t>();
    ds.val_drives = c.at("val_drives").get<std::size_t>();
    ds.test_drives = c.at("test_drives").get<std::size_t>();
    ds.short_drives = c.at("short_drives").get<std::size_t>();
    ds.dropped_drives = c.at("dropped_drives").get<std::size_t>();
  } catch (const json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
  if (ds.stats.mean.size() != ds.stats.columns.size() || ds.stats.stddev.size() != ds.stats.columns.size()) {
    throw DataError(path.string() + ": statistics do not match the column list");
  }
  return ds;
}

PreparedDataset read_prepared(const std::filesystem::path& dir) {
  PreparedDataset ds = read_prepared_metadata(dir);
  ds.train = read_windows_ndjson(dir / "train.ndjson");
  ds.val = read_windows_ndjson(dir / "val.ndjson");
  ds.test = read_windows_ndjson(dir / "test.ndjson");
  for (const auto* part : {&ds.train, &ds.val, &ds.test})
    for (const auto& w : *part)
      if (w.steps != ds.window || w.features != ds.stats.columns.size()) {
        throw DataError(dir.string() + ": window " + w.serial + " has shape " + std::to_string(w.steps) + "x" +
                        std::to_string(w.features) + ", expected " + std::to_string(ds.window) + "x" +
                        std::to_string(ds.stats.columns.size()));
      }
  return ds;
}

}  // namespace tfbest::data
