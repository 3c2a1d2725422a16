#pragma once

// S.M.A.R.T. log ingestion, RUL labelling, normalization and windowing.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "tfbest/tensor.hpp"

namespace tfbest::data {

// Calendar day as a count of days since 1970-01-01.
using Day = std::int32_t;

// Parses YYYY-MM-DD; throws DataError on malformed or impossible dates.
Day parse_date(std::string_view text);
std::string format_date(Day day);

inline constexpr double kMissing = std::numeric_limits<double>::quiet_NaN();
inline bool is_missing(double v) { return v != v; }

struct SmartRecord {
  Day date = 0;
  std::string serial;
  std::string model;
  bool failure = false;
  std::vector<double> features;  // kMissing marks an empty cell
};

// One drive's records in ascending date order, ending at its failure.
struct DriveHistory {
  std::string serial;
  std::string model;
  std::vector<SmartRecord> records;
  Day failure_date = 0;
};

struct IngestOptions {
  std::vector<std::string> feature_columns;
  std::string model_filter;  // empty: accept every model
};

struct IngestStats {
  std::size_t rows = 0;
  std::size_t duplicate_rows = 0;
  std::size_t filtered_rows = 0;
  std::size_t healthy_serials = 0;  // serials dropped for never failing
};

// Reads Backblaze-schema CSV files (header required). Rows are grouped by
// serial and sorted by date; duplicate (serial, date) rows keep the first
// occurrence. Serials without a failure record are dropped.
std::vector<DriveHistory> ingest_csv(std::span<const std::filesystem::path> paths, const IngestOptions& options,
                                     IngestStats* stats = nullptr);

// The smart_<id>_raw columns of a CSV header, in header order.
std::vector<std::string> raw_smart_columns(const std::filesystem::path& csv);

// RUL in whole days for every record: failure_date - date.
std::vector<int> label_rul(const DriveHistory& history);

// Keeps the records whose RUL is at most max_rul.
DriveHistory cap_history(const DriveHistory& history, int max_rul);

// Replaces missing cells with the previous record's value where one exists.
void forward_fill(DriveHistory& history);

struct NormStats {
  static constexpr double kMinStd = 1e-6;

  std::vector<std::string> columns;
  std::vector<double> mean;
  std::vector<double> stddev;  // clamped to >= kMinStd

  // Missing values map to the mean, i.e. 0 after normalization.
  double normalize(std::size_t feature, double value) const;
  double denormalize(std::size_t feature, double value) const;
};

// Per-feature mean and population standard deviation over every record of
// the given histories, skipping missing cells.
NormStats compute_norm_stats(std::span<const DriveHistory> histories, std::vector<std::string> columns);

struct WindowSample {
  std::string serial;
  std::size_t steps = 0;
  std::size_t features = 0;
  std::vector<float> values;   // [steps, features] normalized, row-major
  std::vector<int> targets;    // RUL of each step's day
  std::vector<int> day_index;  // position of each step in the drive history

  ad::Tensor<float> tensor() const { return ad::Tensor<float>({steps, features}, values); }
};

// Every length-T window of the history with stride 1: D - T + 1 windows, or
// none when the history is shorter than T.
std::vector<WindowSample> make_windows(const DriveHistory& history, std::size_t window, const NormStats& stats);

// Failure dates in [train_begin, val_begin) go to train, [val_begin,
// test_begin) to validation, and >= test_begin to test.
struct SplitBoundaries {
  Day train_begin = 0;
  Day val_begin = 0;
  Day test_begin = 0;

  // Jan 2013 - Dec 2019 / Jan 2020 - Dec 2020 / Jan 2021 onwards.
  static SplitBoundaries defaults();
  void validate() const;
};

struct DatasetSplit {
  std::vector<DriveHistory> train, val, test;
  std::size_t dropped = 0;  // failed before train_begin
};

DatasetSplit split_by_date(std::vector<DriveHistory> histories, const SplitBoundaries& boundaries);

// ---- synthetic data -------------------------------------------------------

struct SynthOptions {
  std::size_t drives = 200;
  std::size_t features = 16;
  std::uint64_t seed = 0;
  int min_days = 40;
  int max_days = 120;
  Day first_failure = 0;  // defaults() fills a 2013-2023 range
  Day last_failure = 0;
  std::string model = "ST4000DM000";

  static SynthOptions defaults();
};

// Drives whose latent health decays from 1 to 0 with a noisy, accelerating
// rate; the last record is the failure. A subset of features loads on the
// health, every feature carries a seasonal term and noise.
std::vector<DriveHistory> synth_generate(const SynthOptions& options);
std::vector<std::string> synth_feature_columns(std::size_t features);

// Backblaze-style CSV, rows ordered by date then serial.
void write_backblaze_csv(std::span<const DriveHistory> histories, const std::vector<std::string>& columns,
                         const std::filesystem::path& path);

// ---- prepared datasets ----------------------------------------------------

struct PrepareOptions {
  std::size_t window = 30;
  int max_rul = 60;
  SplitBoundaries boundaries = SplitBoundaries::defaults();
  std::vector<std::string> columns;  // feature names; empty: feature_<i>
};

struct PreparedDataset {
  NormStats stats;
  std::size_t window = 30;
  int max_rul = 60;
  std::vector<WindowSample> train, val, test;
  std::size_t train_drives = 0, val_drives = 0, test_drives = 0;
  std::size_t short_drives = 0;  // fewer records than the window length
  std::size_t dropped_drives = 0;
};

// cap -> split -> forward-fill -> train statistics -> windows.
PreparedDataset prepare_dataset(std::vector<DriveHistory> histories, const PrepareOptions& options);

// One JSON object per line: {"serial","day_index","targets","features"}.
void write_windows_ndjson(std::span<const WindowSample> windows, const std::filesystem::path& path);
std::vector<WindowSample> read_windows_ndjson(const std::filesystem::path& path);

// Writes train/val/test NDJSON files and a dataset.json sidecar into dir.
void write_prepared(const PreparedDataset& dataset, const std::filesystem::path& dir);
// Reads the sidecar only (statistics, window length, counts).
PreparedDataset read_prepared_metadata(const std::filesystem::path& dir);
PreparedDataset read_prepared(const std::filesystem::path& dir);

}  // namespace tfbest::data
