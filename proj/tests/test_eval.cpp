#include <boost/math/distributions/students_t.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <random>

#include "doctest.h"
#include "test_util.hpp"
#include "tfbest/eval.hpp"

using namespace tfbest;
using namespace tfbest::eval;

namespace {

// Windows of one drive with D days; targets D-1..0.
std::vector<data::WindowSample> drive_windows(const std::string& serial, int days, std::size_t t) {
  std::vector<data::WindowSample> out;
  for (int s = 0; s + int(t) <= days; ++s) {
    data::WindowSample w;
    w.serial = serial;
    w.steps = t;
    w.features = 1;
    w.values.assign(t, 0.0f);
    for (int i = 0; i < int(t); ++i) {
      w.day_index.push_back(s + i);
      w.targets.push_back(days - 1 - (s + i));
    }
    out.push_back(w);
  }
  return out;
}

std::vector<std::vector<float>> perfect(const std::vector<data::WindowSample>& ws) {
  std::vector<std::vector<float>> p;
  for (auto& w : ws) p.emplace_back(w.targets.begin(), w.targets.end());
  return p;
}

}  // namespace

TEST_CASE("student t quantiles") {
  CHECK(std::abs(student_t_quantile(0.95, 1) - 6.313752) < 1e-4);
  CHECK(std::abs(student_t_quantile(0.95, 2) - 2.919986) < 1e-4);
  CHECK(std::abs(student_t_quantile(0.95, 10000) - 1.64487) < 1e-3);
  // closed forms
  CHECK(std::abs(student_t_quantile(0.95, 1) - std::tan(M_PI * 0.45)) < 1e-6);
  CHECK(std::abs(student_t_quantile(0.95, 2) - 0.9 / std::sqrt(2 * 0.95 * 0.05)) < 1e-6);
  CHECK(student_t_quantile(0.5, 7) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK_THROWS_AS(student_t_quantile(0.0, 3), std::invalid_argument);
  CHECK_THROWS_AS(student_t_quantile(1.0, 3), std::invalid_argument);
  CHECK_THROWS_AS(student_t_quantile(0.9, 0), std::invalid_argument);
}

TEST_CASE("student t quantiles match Boost.Math across df and p") {
  for (double df : {1.0, 2.0, 3.0, 4.0, 7.0, 12.0, 29.0, 60.0, 250.0, 5000.0}) {
    boost::math::students_t dist(df);
    for (double p : {0.001, 0.025, 0.1, 0.4, 0.6, 0.9, 0.95, 0.995, 0.9999}) {
      CAPTURE(df);
      CAPTURE(p);
      const double want = boost::math::quantile(dist, p);
      CHECK(std::abs(student_t_quantile(p, df) - want) < 1e-6 * std::max(1.0, std::abs(want)));
      CHECK(std::abs(student_t_cdf(want, df) - p) < 1e-9);
    }
  }
}

TEST_CASE("incomplete beta edge values") {
  CHECK(regularized_incomplete_beta(2, 3, 0.0) == 0.0);
  CHECK(regularized_incomplete_beta(2, 3, 1.0) == 1.0);
  // I_x(1,1) = x, I_x(a,1) = x^a
  CHECK(std::abs(regularized_incomplete_beta(1, 1, 0.37) - 0.37) < 1e-12);
  CHECK(std::abs(regularized_incomplete_beta(2.5, 1, 0.6) - std::pow(0.6, 2.5)) < 1e-12);
}

TEST_CASE("confidence margin reproduces the two-prediction example") {
  const std::vector<double> preds = {44.13, 44.71};
  auto row = confidence_margin(preds, 0.90);
  CHECK(row.n == 2);
  CHECK(std::abs(row.point_estimate - 44.42) <= 0.01);
  CHECK(std::abs(row.std_error - 0.29) <= 0.01);
  CHECK(std::abs(row.ci_low - 42.59) <= 0.01);
  CHECK(std::abs(row.ci_high - 46.26) <= 0.01);
  // hand computation: 44.42 +- 6.313752 * 0.29
  CHECK(std::abs(row.ci_high - (44.42 + 6.313752 * 0.29)) < 1e-5);
}

TEST_CASE("three predictions with standard error 0.28") {
  const double s = 0.28 * std::sqrt(3.0);
  const std::vector<double> preds = {43.40 - s, 43.40, 43.40 + s};
  auto row = confidence_margin(preds, 0.90);
  CHECK(std::abs(row.std_error - 0.28) < 1e-12);
  const double half = (row.ci_high - row.ci_low) / 2;
  CHECK(std::abs(half - 0.28 * 2.919986) < 1e-5);
  CHECK(std::abs(half - 0.818) < 1e-3);
}

TEST_CASE("constant and single predictions give degenerate intervals") {
  const std::vector<double> same(5, 17.25);
  auto row = confidence_margin(same);
  CHECK(row.point_estimate == 17.25);
  CHECK(row.std_error == 0.0);
  CHECK(row.ci_low == 17.25);
  CHECK(row.ci_high == 17.25);
  const std::vector<double> one = {3.5};
  auto r1 = confidence_margin(one);
  CHECK(r1.n == 1);
  CHECK(r1.std_error == 0.0);
  CHECK(r1.ci_low == 3.5);
  CHECK(r1.ci_high == 3.5);
}

TEST_CASE("half-width identity and gamma monotonicity") {
  std::mt19937_64 rng(13);
  std::normal_distribution<double> g(30, 4);
  for (std::size_t n = 2; n <= 30; ++n) {
    std::vector<double> p(n);
    for (auto& v : p) v = g(rng);
    auto r90 = confidence_margin(p, 0.90);
    auto r99 = confidence_margin(p, 0.99);
    const double t = student_t_quantile(0.95, double(n - 1));
    CHECK(std::abs((r90.ci_high - r90.point_estimate) - t * r90.std_error) < 1e-9);
    CHECK(std::abs((r90.point_estimate - r90.ci_low) - t * r90.std_error) < 1e-9);
    CHECK(r90.ci_low <= r90.point_estimate);
    CHECK(r90.point_estimate <= r90.ci_high);
    CHECK(r99.ci_low <= r90.ci_low);
    CHECK(r99.ci_high >= r90.ci_high);
  }
}

TEST_CASE("overlap counts for a 61-day drive") {
  auto ws = drive_windows("S", 61, 30);
  auto days = aggregate_overlaps(ws, perfect(ws));
  REQUIRE(days.size() == 61);
  std::map<int, std::size_t> n;
  for (auto& d : days) n[d.true_rul] = d.preds.size();
  CHECK(n[60] == 1);
  CHECK(n[59] == 2);
  CHECK(n[30] == 30);
  CHECK(n[0] == 1);
  CHECK(days.front().true_rul == 60);
  CHECK(days.back().true_rul == 0);

  auto single = drive_windows("S", 30, 30);
  for (auto& d : aggregate_overlaps(single, perfect(single))) CHECK(d.preds.size() == 1);
}

TEST_CASE("overlap aggregation matches brute force and ignores window order") {
  std::mt19937_64 rng(21);
  for (int rep = 0; rep < 50; ++rep) {
    const int d = 30 + int(rng() % 91);
    const std::size_t t = 5 + rng() % 36;
    auto ws = drive_windows("S", d, t);
    std::vector<std::vector<float>> preds;
    for (auto& w : ws) {
      std::vector<float> p;
      for (std::size_t i = 0; i < t; ++i) p.push_back(float(rng() % 1000) / 10.0f);
      preds.push_back(p);
    }
    auto days = aggregate_overlaps(ws, preds);
    std::map<int, std::size_t> brute;
    for (int s = 0; s + int(t) <= d; ++s)
      for (int i = s; i < s + int(t); ++i) ++brute[i];
    std::map<int, std::size_t> got;
    for (auto& x : days) got[x.day] = x.preds.size();
    CHECK(got == brute);

    std::vector<std::size_t> order(ws.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<data::WindowSample> ws2;
    std::vector<std::vector<float>> p2;
    for (auto i : order) {
      ws2.push_back(ws[i]);
      p2.push_back(preds[i]);
    }
    auto days2 = aggregate_overlaps(ws2, p2);
    REQUIRE(days2.size() == days.size());
    for (std::size_t i = 0; i < days.size(); ++i) CHECK(days[i].preds == days2[i].preds);
  }
}

TEST_CASE("aggregation errors") {
  auto ws = drive_windows("S", 12, 5);
  auto p = perfect(ws);
  p[2].pop_back();
  CHECK_THROWS_AS(aggregate_overlaps(ws, p), DataError);
  auto p2 = perfect(ws);
  p2.pop_back();
  CHECK_THROWS_AS(aggregate_overlaps(ws, p2), DataError);
  auto bad = ws;
  bad[1].targets[0] += 1;
  CHECK_THROWS_AS(aggregate_overlaps(bad, perfect(bad)), DataError);
}

TEST_CASE("perfect predictor") {
  auto ws = drive_windows("A", 61, 30);
  auto more = drive_windows("B", 45, 30);
  ws.insert(ws.end(), more.begin(), more.end());
  auto r = evaluate_predictions(ws, perfect(ws));
  CHECK(r.test_rmse == 0.0);
  CHECK(r.n_drives == 2);
  CHECK(r.n_windows == ws.size());
  CHECK(r.rows.size() == 61 + 45);
  for (auto& row : r.rows) {
    CHECK(row.point_estimate == row.true_rul);
    CHECK(row.ci_low == row.true_rul);
    CHECK(row.ci_high == row.true_rul);
  }
  CHECK(r.pooled.size() == 61);
  for (auto& row : r.pooled) CHECK(row.serial == "*");
  CHECK(r.trace.size() == 61 + 45);
}

TEST_CASE("constant predictor RMSE has a closed form") {
  auto ws = drive_windows("A", 61, 30);
  const float c = 21.5f;
  std::vector<std::vector<float>> preds(ws.size(), std::vector<float>(30, c));
  auto r = evaluate_predictions(ws, preds);
  double sse = 0, n = 0;
  for (auto& w : ws)
    for (int k : w.targets) {
      sse += (k - c) * (k - c);
      n += 1;
    }
  CHECK(std::abs(r.test_rmse - std::sqrt(sse / n)) < 1e-9);
}

TEST_CASE("n=1 point estimates equal raw outputs; clip at zero") {
  auto ws = drive_windows("A", 40, 30);
  std::vector<std::vector<float>> preds;
  for (auto& w : ws) {
    std::vector<float> p;
    for (int k : w.targets) p.push_back(float(k) - 3.3f);
    preds.push_back(p);
  }
  auto r = evaluate_predictions(ws, preds);
  for (auto& row : r.rows)
    if (row.n == 1) CHECK(row.point_estimate == double(float(row.true_rul) - 3.3f));
  bool negative = false;
  for (auto& row : r.rows) negative = negative || row.point_estimate < 0;
  CHECK(negative);
  EvalOptions o;
  o.clip_at_zero = true;
  auto c = evaluate_predictions(ws, preds, o);
  for (auto& row : c.rows) {
    CHECK(row.point_estimate >= 0.0);
    CHECK(row.ci_low >= 0.0);
  }
}

TEST_CASE("report formatting and round trip") {
  testutil::TempDir dir("report");
  CHECK(format_fixed2(-0.001) == "0.00");
  CHECK(format_fixed2(2.005) == "2.00");
  CHECK(format_fixed2(-1.5) == "-1.50");

  // unrounded pair behind the two-decimal example
  const std::vector<double> preds = {44.1338, 44.7152};
  auto row = confidence_margin(preds);
  row.serial = "ZS000001";
  row.true_rul = 59;
  auto single = confidence_margin(std::vector<double>{45.13});
  single.serial = "ZS000001";
  single.true_rul = 60;
  std::vector<ConfidenceRow> rows = {single, row};
  emit_report(rows, dir / "r.csv");
  const auto text = testutil::slurp(dir / "r.csv");
  CHECK(text ==
        "serial,true_rul,n,point_estimate,std_error,ci_low,ci_high\n"
        "ZS000001,60,1,45.13,0.00,45.13,45.13\n"
        "ZS000001,59,2,44.42,0.29,42.59,46.26\n");
  auto back = read_report(dir / "r.csv");
  REQUIRE(back.size() == 2);
  CHECK(back[1].n == 2);
  CHECK(back[1].ci_high == 46.26);

  emit_report({}, dir / "empty.csv");
  CHECK(testutil::slurp(dir / "empty.csv") == "serial,true_rul,n,point_estimate,std_error,ci_low,ci_high\n");

  const std::string table = render_table(rows);
  CHECK(table.find("ZS000001") != std::string::npos);
  CHECK(table.find("44.42") != std::string::npos);

  std::vector<TracePoint> trace = {{"A", 3, 7, 6.126}};
  emit_trace(trace, dir / "t.csv");
  CHECK(testutil::slurp(dir / "t.csv") == "serial,day,true_rul,predicted_rul\nA,3,7,6.13\n");
}
