#pragma once

// Test RMSE, overlap aggregation and Student-t confidence intervals.

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "tfbest/data.hpp"
#include "tfbest/model.hpp"

namespace tfbest::eval {

// I_x(a, b) by Lentz's continued fraction, with the usual symmetry swap.
double regularized_incomplete_beta(double a, double b, double x);

double student_t_cdf(double t, double df);
// Inverse CDF: bracketing bisection polished by Newton steps. Throws
// std::invalid_argument unless 0 < p < 1 and df > 0.
double student_t_quantile(double p, double df);

struct ConfidenceRow {
  std::string serial;
  int day = 0;  // position in the drive history
  int true_rul = 0;
  std::size_t n = 0;
  double point_estimate = 0.0;
  double std_error = 0.0;  // s / sqrt(n)
  double ci_low = 0.0;
  double ci_high = 0.0;
};

// Sample mean, standard error with the n-1 deviation and the two-sided
// gamma interval mean +- t((1+gamma)/2, n-1) * se. n == 1 gives a
// degenerate interval at the single prediction.
ConfidenceRow confidence_margin(std::span<const double> preds, double gamma = 0.90);

struct DayPredictions {
  std::string serial;
  int day = 0;
  int true_rul = 0;
  std::vector<double> preds;
};

// Groups predictions by (serial, day). Output is ordered by serial, then by
// descending true RUL. Throws DataError on misaligned lengths or when two
// windows disagree on a day's target.
std::vector<DayPredictions> aggregate_overlaps(std::span<const data::WindowSample> windows,
                                               std::span<const std::vector<float>> preds);

struct TracePoint {
  std::string serial;
  int day = 0;
  int true_rul = 0;
  double predicted_rul = 0.0;
};

struct EvalOptions {
  double gamma = 0.90;
  bool clip_at_zero = false;  // clamp reported estimates and bounds at 0
  std::size_t threads = 1;
};

struct EvalResult {
  double test_rmse = 0.0;
  std::size_t n_drives = 0;
  std::size_t n_windows = 0;
  std::vector<ConfidenceRow> rows;    // per drive, descending true RUL
  std::vector<ConfidenceRow> pooled;  // all drives pooled per true RUL; serial "*"
  std::vector<TracePoint> trace;      // point estimate per drive day
};

EvalResult evaluate_predictions(std::span<const data::WindowSample> windows,
                                std::span<const std::vector<float>> preds, const EvalOptions& options = {});
EvalResult evaluate(const TfbestModel<float>& model, std::span<const data::WindowSample> windows,
                    const EvalOptions& options = {});

// Two decimals, never "-0.00".
std::string format_fixed2(double v);

// serial,true_rul,n,point_estimate,std_error,ci_low,ci_high
void emit_report(std::span<const ConfidenceRow> rows, const std::filesystem::path& path);
// serial,day,true_rul,predicted_rul
void emit_trace(std::span<const TracePoint> trace, const std::filesystem::path& path);
// {"test_rmse", "n_drives", "n_windows"}
void emit_summary(const EvalResult& result, const std::filesystem::path& path);

std::vector<ConfidenceRow> read_report(const std::filesystem::path& path);

// Fixed-width text table of report rows, one block per serial.
std::string render_table(std::span<const ConfidenceRow> rows, double gamma = 0.90);

}  // namespace tfbest::eval
