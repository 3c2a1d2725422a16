#include "tfbest/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <stdexcept>

#include <fmt/format.h>

#include "json.hpp"
#include "tfbest/errors.hpp"
#include "tfbest/train.hpp"

namespace tfbest::eval {

namespace {

// Modified Lentz evaluation of the incomplete beta continued fraction.
double beta_fraction(double a, double b, double x) {
  constexpr double kTiny = 1e-300;
  constexpr double kEps = 1e-16;
  const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::abs(d) < kTiny) d = kTiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= 100000; ++m) {
    const double m2 = 2.0 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < kEps) return h;
  }
  throw NumericError(fmt::format("incomplete beta did not converge (a={}, b={}, x={})", a, b, x));
}

// I_x(a,b) with y = 1 - x supplied separately to keep precision near 1.
double incomplete_beta(double a, double b, double x, double y) {
  if (x <= 0.0) return 0.0;
  if (y <= 0.0) return 1.0;
  const double front =
      std::exp(std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) + b * std::log(y));
  if (x < (a + 1.0) / (a + b + 2.0)) return front * beta_fraction(a, b, x) / a;
  return 1.0 - front * beta_fraction(b, a, y) / b;
}

double student_t_pdf(double t, double df) {
  const double logc = std::lgamma((df + 1.0) / 2.0) - std::lgamma(df / 2.0) - 0.5 * std::log(df * std::numbers::pi);
  return std::exp(logc - (df + 1.0) / 2.0 * std::log1p(t * t / df));
}

void check_df(double df) {
  if (!(df > 0.0) || !std::isfinite(df)) throw std::invalid_argument(fmt::format("degrees of freedom {} <= 0", df));
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  return out;
}

}  // namespace

double regularized_incomplete_beta(double a, double b, double x) {
  if (!(a > 0.0 && b > 0.0)) throw std::invalid_argument("incomplete beta needs a, b > 0");
  if (!(x >= 0.0 && x <= 1.0)) throw std::invalid_argument("incomplete beta needs 0 <= x <= 1");
  return incomplete_beta(a, b, x, 1.0 - x);
}

double student_t_cdf(double t, double df) {
  check_df(df);
  if (std::isnan(t)) return t;
  if (std::isinf(t)) return t > 0 ? 1.0 : 0.0;
  const double t2 = t * t;
  const double tail = 0.5 * incomplete_beta(df / 2.0, 0.5, df / (df + t2), t2 / (df + t2));
  return t > 0.0 ? 1.0 - tail : tail;
}

double student_t_quantile(double p, double df) {
  check_df(df);
  if (!(p > 0.0 && p < 1.0)) throw std::invalid_argument(fmt::format("quantile probability {} outside (0, 1)", p));
  if (p == 0.5) return 0.0;
  if (p < 0.5) return -student_t_quantile(1.0 - p, df);

  double lo = 0.0, hi = 1.0;
  while (student_t_cdf(hi, df) < p) {
    lo = hi;
    hi *= 2.0;
    if (!std::isfinite(hi)) throw NumericError("student_t_quantile: no finite bracket");
  }
  for (int i = 0; i < 200 && hi - lo > 1e-10 * std::max(1.0, hi); ++i) {
    const double mid = 0.5 * (lo + hi);
    (student_t_cdf(mid, df) < p ? lo : hi) = mid;
  }
  double t = 0.5 * (lo + hi);
  for (int i = 0; i < 3; ++i) {
    const double step = (student_t_cdf(t, df) - p) / student_t_pdf(t, df);
    const double next = t - step;
    if (!(next >= lo && next <= hi)) break;
    t = next;
  }
  return t;
}

ConfidenceRow confidence_margin(std::span<const double> preds, double gamma) {
  if (preds.empty()) throw std::invalid_argument("confidence_margin: no predictions");
  if (!(gamma > 0.0 && gamma < 1.0)) throw std::invalid_argument("confidence_margin: gamma outside (0, 1)");
  ConfidenceRow row;
  const std::size_t n = preds.size();
  row.n = n;
  // Deviations from the first element keep constant inputs exact.
  const double p0 = preds[0];
  double dsum = 0.0;
  for (double p : preds) dsum += p - p0;
  row.point_estimate = p0 + dsum / static_cast<double>(n);
  if (n == 1) {
    row.ci_low = row.ci_high = row.point_estimate;
    return row;
  }
  double ss = 0.0;
  for (double p : preds) ss += (p - row.point_estimate) * (p - row.point_estimate);
  const double s = std::sqrt(ss / static_cast<double>(n - 1));
  row.std_error = s / std::sqrt(static_cast<double>(n));
  const double half = student_t_quantile((1.0 + gamma) / 2.0, static_cast<double>(n - 1)) * row.std_error;
  row.ci_low = row.point_estimate - half;
  row.ci_high = row.point_estimate + half;
  return row;
}

std::vector<DayPredictions> aggregate_overlaps(std::span<const data::WindowSample> windows,
                                               std::span<const std::vector<float>> preds) {
  if (windows.size() != preds.size()) {
    throw DataError(fmt::format("aggregate_overlaps: {} windows but {} prediction rows", windows.size(), preds.size()));
  }
  std::map<std::pair<std::string, int>, DayPredictions> days;
  for (std::size_t i = 0; i < windows.size(); ++i) {
    const auto& w = windows[i];
    if (preds[i].size() != w.steps || w.targets.size() != w.steps || w.day_index.size() != w.steps) {
      throw DataError(fmt::format("aggregate_overlaps: window {} of {} has misaligned lengths", i, w.serial));
    }
    for (std::size_t t = 0; t < w.steps; ++t) {
      auto [it, inserted] = days.try_emplace({w.serial, w.day_index[t]});
      DayPredictions& d = it->second;
      if (inserted) {
        d.serial = w.serial;
        d.day = w.day_index[t];
        d.true_rul = w.targets[t];
      } else if (d.true_rul != w.targets[t]) {
        throw DataError(fmt::format("serial {} day {}: windows disagree on the target ({} vs {})", w.serial,
                                    d.day, d.true_rul, w.targets[t]));
      }
      d.preds.push_back(preds[i][t]);
    }
  }
  std::vector<DayPredictions> out;
  out.reserve(days.size());
  for (auto& [key, d] : days) {
    // Order-independent: the multiset is sorted so downstream sums do not
    // depend on window order.
    std::sort(d.preds.begin(), d.preds.end());
    out.push_back(std::move(d));
  }
  std::stable_sort(out.begin(), out.end(), [](const DayPredictions& a, const DayPredictions& b) {
    return a.serial != b.serial ? a.serial < b.serial : a.true_rul > b.true_rul;
  });
  return out;
}

EvalResult evaluate_predictions(std::span<const data::WindowSample> windows,
                                std::span<const std::vector<float>> preds, const EvalOptions& options) {
  if (windows.empty()) throw DataError("evaluate: empty test set");
  const auto days = aggregate_overlaps(windows, preds);
  EvalResult r;
  r.n_windows = windows.size();
  double sse = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < windows.size(); ++i)
    for (std::size_t t = 0; t < windows[i].steps; ++t) {
      const double d = static_cast<double>(preds[i][t]) - windows[i].targets[t];
      sse += d * d;
      ++count;
    }
  r.test_rmse = std::sqrt(sse / static_cast<double>(count));

  auto clip = [&](ConfidenceRow& row) {
    if (!options.clip_at_zero) return;
    row.point_estimate = std::max(0.0, row.point_estimate);
    row.ci_low = std::max(0.0, row.ci_low);
    row.ci_high = std::max(0.0, row.ci_high);
  };
  std::map<int, std::vector<double>, std::greater<>> by_rul;
  std::string last_serial;
  for (const auto& d : days) {
    ConfidenceRow row = confidence_margin(d.preds, options.gamma);
    row.serial = d.serial;
    row.day = d.day;
    row.true_rul = d.true_rul;
    r.trace.push_back({d.serial, d.day, d.true_rul, row.point_estimate});
    clip(row);
    r.rows.push_back(std::move(row));
    if (d.serial != last_serial) {
      ++r.n_drives;
      last_serial = d.serial;
    }
    auto& pool = by_rul[d.true_rul];
    pool.insert(pool.end(), d.preds.begin(), d.preds.end());
  }
  for (auto& [rul, pool] : by_rul) {
    std::sort(pool.begin(), pool.end());
    ConfidenceRow row = confidence_margin(pool, options.gamma);
    row.serial = "*";
    row.day = -1;
    row.true_rul = rul;
    clip(row);
    r.pooled.push_back(std::move(row));
  }
  std::sort(r.trace.begin(), r.trace.end(), [](const TracePoint& a, const TracePoint& b) {
    return a.serial != b.serial ? a.serial < b.serial : a.day < b.day;
  });
  return r;
}

EvalResult evaluate(const TfbestModel<float>& model, std::span<const data::WindowSample> windows,
                    const EvalOptions& options) {
  if (windows.empty()) throw DataError("evaluate: empty test set");
  const auto& c = model.config();
  for (const auto& w : windows)
    if (w.steps != c.window || w.features != c.features) {
      throw ConfigMismatchError(fmt::format("checkpoint expects {}x{} windows, dataset has {}x{}", c.window,
                                            c.features, w.steps, w.features));
    }
  const auto preds = predict_windows(model, windows, options.threads);
  return evaluate_predictions(windows, preds, options);
}

std::string format_fixed2(double v) {
  std::string s = fmt::format("{:.2f}", v);
  if (s == "-0.00") s = "0.00";
  return s;
}

void emit_report(std::span<const ConfidenceRow> rows, const std::filesystem::path& path) {
  auto out = open_out(path);
  out << "serial,true_rul,n,point_estimate,std_error,ci_low,ci_high\n";
  for (const auto& r : rows) {
    out << fmt::format("{},{},{},{},{},{},{}\n", r.serial, r.true_rul, r.n, format_fixed2(r.point_estimate),
                       format_fixed2(r.std_error), format_fixed2(r.ci_low), format_fixed2(r.ci_high));
  }
  if (!out) throw DataError("write failed: " + path.string());
}

void emit_trace(std::span<const TracePoint> trace, const std::filesystem::path& path) {
  auto out = open_out(path);
  out << "serial,day,true_rul,predicted_rul\n";
  for (const auto& p : trace) {
    out << fmt::format("{},{},{},{}\n", p.serial, p.day, p.true_rul, format_fixed2(p.predicted_rul));
  }
  if (!out) throw DataError("write failed: " + path.string());
}

void emit_summary(const EvalResult& result, const std::filesystem::path& path) {
  auto out = open_out(path);
  nlohmann::json j = {
      {"test_rmse", result.test_rmse}, {"n_drives", result.n_drives}, {"n_windows", result.n_windows}};
  out << j.dump(2) << '\n';
  if (!out) throw DataError("write failed: " + path.string());
}

std::vector<ConfidenceRow> read_report(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != "serial,true_rul,n,point_estimate,std_error,ci_low,ci_high") {
    throw DataError(path.string() + ": not a confidence report (unexpected header)");
  }
  std::vector<ConfidenceRow> rows;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::size_t start = 0;
    for (std::size_t pos; (pos = line.find(',', start)) != std::string::npos; start = pos + 1) {
      cells.push_back(line.substr(start, pos - start));
    }
    cells.push_back(line.substr(start));
    if (cells.size() != 7) throw DataError(fmt::format("{}:{}: expected 7 fields", path.string(), lineno));
    try {
      ConfidenceRow r;
      r.serial = cells[0];
      r.true_rul = std::stoi(cells[1]);
      r.n = std::stoul(cells[2]);
      r.point_estimate = std::stod(cells[3]);
      r.std_error = std::stod(cells[4]);
      r.ci_low = std::stod(cells[5]);
      r.ci_high = std::stod(cells[6]);
      rows.push_back(std::move(r));
    } catch (const std::logic_error&) {
      throw DataError(fmt::format("{}:{}: malformed number", path.string(), lineno));
    }
  }
  return rows;
}

std::string render_table(std::span<const ConfidenceRow> rows, double gamma) {
  std::string out;
  const std::string ci_title = fmt::format("{:g}% confidence interval", gamma * 100.0);
  std::string serial;
  bool first = true;
  for (const auto& r : rows) {
    if (first || r.serial != serial) {
      serial = r.serial;
      if (!first) out += '\n';
      first = false;
      out += fmt::format("serial {}\n", serial == "*" ? std::string("(pooled)") : serial);
      out += fmt::format("{:>8}  {:>3}  {:>16}  {}\n", "true RUL", "n", "estimate", ci_title);
    }
    const std::string est = fmt::format("{} +- {}", format_fixed2(r.point_estimate), format_fixed2(r.std_error));
    out += fmt::format("{:>8}  {:>3}  {:>16}  ({}, {})\n", r.true_rul, r.n, est, format_fixed2(r.ci_low),
                       format_fixed2(r.ci_high));
  }
  return out;
}

}  // namespace tfbest::eval
