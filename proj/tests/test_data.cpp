#include <Eigen/Dense>

#include <cmath>
#include <fstream>
#include <map>
#include <random>

#include "doctest.h"
#include "test_util.hpp"
#include "tfbest/data.hpp"

using namespace tfbest;
using namespace tfbest::data;

namespace {

void write_text(const std::filesystem::path& p, const std::string& text) {
  std::ofstream f(p, std::ios::binary);
  f << text;
}

DriveHistory make_history(const std::string& serial, Day failure, int days, std::size_t features = 2) {
  DriveHistory h;
  h.serial = serial;
  h.model = "M";
  h.failure_date = failure;
  for (int i = 0; i < days; ++i) {
    SmartRecord r;
    r.date = failure - (days - 1 - i);
    r.serial = serial;
    r.model = "M";
    r.failure = i == days - 1;
    for (std::size_t f = 0; f < features; ++f) r.features.push_back(double(i) * (f + 1) + 0.5 * f);
    h.records.push_back(r);
  }
  return h;
}

NormStats unit_stats(std::size_t features) {
  NormStats s;
  for (std::size_t f = 0; f < features; ++f) {
    s.columns.push_back("f" + std::to_string(f));
    s.mean.push_back(0.0);
    s.stddev.push_back(1.0);
  }
  return s;
}

const char* kHeader = "date,serial_number,model,capacity_bytes,failure,smart_5_raw,smart_9_raw\n";

}  // namespace

TEST_CASE("dates parse and format") {
  CHECK(parse_date("1970-01-01") == 0);
  CHECK(parse_date("2021-03-08") - parse_date("2021-03-01") == 7);
  CHECK(format_date(parse_date("2020-02-29")) == "2020-02-29");
  CHECK_THROWS_AS(parse_date("2021-02-30"), DataError);
  CHECK_THROWS_AS(parse_date("21-3-8"), DataError);
}

TEST_CASE("ingest a Backblaze row") {
  testutil::TempDir dir("ingest");
  write_text(dir / "a.csv", std::string(kHeader) +
                                "2021-03-08,Z305FNVM,ST4000DM000,4000787030016,0,12,3410\n"
                                "2021-03-09,Z305FNVM,ST4000DM000,4000787030016,1,,3434\n"
                                "2021-03-08,HEALTHY1,ST4000DM000,4000787030016,0,0,100\n");
  const std::filesystem::path paths[] = {dir / "a.csv"};
  IngestStats stats;
  auto hs = ingest_csv(paths, {{"smart_5_raw", "smart_9_raw"}, ""}, &stats);
  REQUIRE(hs.size() == 1);
  const auto& h = hs[0];
  CHECK(h.serial == "Z305FNVM");
  CHECK(h.failure_date == parse_date("2021-03-09"));
  REQUIRE(h.records.size() == 2);
  const auto& r = h.records[0];
  CHECK(r.date == parse_date("2021-03-08"));
  CHECK(r.model == "ST4000DM000");
  CHECK_FALSE(r.failure);
  CHECK(r.features == std::vector<double>{12, 3410});
  CHECK(is_missing(h.records[1].features[0]));
  CHECK(stats.healthy_serials == 1);
}

TEST_CASE("ingest: duplicates keep the first row, rows sort by date, model filter") {
  testutil::TempDir dir("dups");
  write_text(dir / "a.csv", std::string(kHeader) +
                                "2021-03-09,S1,A,1,1,5,5\n"
                                "2021-03-08,S1,A,1,0,1,1\n"
                                "2021-03-08,S1,A,1,0,2,2\n"
                                "2021-03-09,S2,B,1,1,7,7\n");
  const std::filesystem::path paths[] = {dir / "a.csv"};
  IngestStats stats;
  auto hs = ingest_csv(paths, {{"smart_5_raw"}, ""}, &stats);
  REQUIRE(hs.size() == 2);
  CHECK(stats.duplicate_rows == 1);
  CHECK(hs[0].records.size() == 2);
  CHECK(hs[0].records[0].features[0] == 1.0);
  CHECK(hs[0].records[1].features[0] == 5.0);

  auto only_b = ingest_csv(paths, {{"smart_5_raw"}, "B"});
  REQUIRE(only_b.size() == 1);
  CHECK(only_b[0].serial == "S2");
}

TEST_CASE("ingest errors") {
  testutil::TempDir dir("bad");
  const std::filesystem::path p[] = {dir / "a.csv"};
  write_text(p[0], "date,serial_number,model,smart_5_raw\n2021-03-08,S,A,1\n");
  CHECK_THROWS_AS(ingest_csv(p, {{"smart_5_raw"}, ""}), DataError);

  write_text(p[0], std::string(kHeader) + "2021-03-08,S,A,1,0,1,1\n");
  CHECK_THROWS_AS(ingest_csv(p, {{"smart_7_raw"}, ""}), DataError);

  write_text(p[0], std::string(kHeader) + "2021-13-08,S,A,1,1,1,1\n");
  try {
    ingest_csv(p, {{"smart_5_raw"}, ""});
    FAIL("expected an error");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find(":2") != std::string::npos);
  }

  write_text(p[0], std::string(kHeader) + "2021-03-08,S,A,1,1,1,1\n2021-03-09,S,A,1,0,1,1\n");
  CHECK_THROWS_AS(ingest_csv(p, {{"smart_5_raw"}, ""}), DataError);

  const std::filesystem::path missing[] = {dir / "nope.csv"};
  CHECK_THROWS_AS(ingest_csv(missing, {{"smart_5_raw"}, ""}), DataError);
}

TEST_CASE("RUL labels") {
  auto h = make_history("S", parse_date("2020-05-01"), 61);
  auto rul = label_rul(h);
  REQUIRE(rul.size() == 61);
  for (int i = 0; i < 61; ++i) CHECK(rul[i] == 60 - i);
  CHECK(rul[59] == 1);
  CHECK(rul[58] == 2);
  CHECK(rul[60] == 0);

  auto bad = h;
  bad.records.back().date += 1;
  CHECK_THROWS_AS(label_rul(bad), DataError);

  // gaps: RUL follows the calendar, not the index
  auto gap = make_history("G", parse_date("2020-05-01"), 4);
  gap.records[0].date -= 3;
  CHECK(label_rul(gap) == std::vector<int>{6, 2, 1, 0});
}

TEST_CASE("history cap keeps the last 61 days") {
  auto h = make_history("S", parse_date("2020-05-01"), 100);
  auto capped = cap_history(h, 60);
  CHECK(capped.records.size() == 61);
  CHECK(label_rul(capped).front() == 60);
}

TEST_CASE("forward fill") {
  auto h = make_history("S", 100, 3, 1);
  h.records[0].features[0] = kMissing;
  h.records[2].features[0] = kMissing;
  forward_fill(h);
  CHECK(is_missing(h.records[0].features[0]));
  CHECK(h.records[2].features[0] == h.records[1].features[0]);
}

TEST_CASE("window counts, targets and overlap") {
  auto h = make_history("S", 1000, 61);
  auto ws = make_windows(h, 30, unit_stats(2));
  CHECK(ws.size() == 32);
  std::map<int, int> seen;
  for (const auto& w : ws) {
    CHECK(w.steps == 30);
    CHECK(w.values.size() == 60);
    for (std::size_t t = 0; t + 1 < 30; ++t) CHECK(w.targets[t + 1] == w.targets[t] - 1);
    for (std::size_t t = 0; t < 30; ++t) {
      CHECK(w.targets[t] == 60 - w.day_index[t]);
      ++seen[w.targets[t]];
    }
  }
  CHECK(seen[59] == 2);
  CHECK(seen[60] == 1);
  CHECK(seen[30] == 30);
  CHECK(make_windows(make_history("S", 1000, 29), 30, unit_stats(2)).empty());
}

TEST_CASE("window counts and overlaps match brute force for random lengths") {
  std::mt19937_64 rng(77);
  for (int rep = 0; rep < 50; ++rep) {
    const int d = 1 + int(rng() % 90);
    const std::size_t t = 1 + rng() % 40;
    auto ws = make_windows(make_history("S", 500, d, 1), t, unit_stats(1));
    std::size_t brute = 0;
    std::map<int, int> brute_cover;
    for (int s = 0; s + int(t) <= d; ++s) {
      ++brute;
      for (int i = s; i < s + int(t); ++i) ++brute_cover[i];
    }
    CHECK(ws.size() == brute);
    std::map<int, int> cover;
    for (const auto& w : ws)
      for (int i : w.day_index) ++cover[i];
    CHECK(cover == brute_cover);
  }
}

TEST_CASE("split by failure date, closed on the left") {
  auto b = SplitBoundaries::defaults();
  std::vector<DriveHistory> hs = {make_history("A", parse_date("2015-06-01"), 5),
                                  make_history("B", parse_date("2020-06-01"), 5),
                                  make_history("C", parse_date("2021-01-01"), 5),
                                  make_history("D", parse_date("2020-01-01"), 5),
                                  make_history("E", parse_date("2010-01-01"), 5)};
  auto s = split_by_date(hs, b);
  REQUIRE(s.train.size() == 1);
  REQUIRE(s.val.size() == 2);
  REQUIRE(s.test.size() == 1);
  CHECK(s.train[0].serial == "A");
  CHECK(s.val[0].serial == "B");
  CHECK(s.val[1].serial == "D");
  CHECK(s.test[0].serial == "C");
  CHECK(s.dropped == 1);

  auto only_train = split_by_date({make_history("A", parse_date("2015-06-01"), 5)}, b);
  CHECK(only_train.val.empty());
  CHECK(only_train.test.empty());

  SplitBoundaries bad = b;
  bad.val_begin = bad.test_begin + 1;
  CHECK_THROWS(split_by_date(hs, bad));
}

TEST_CASE("normalization statistics") {
  std::vector<DriveHistory> hs = {make_history("A", 100, 20, 3), make_history("B", 300, 35, 3)};
  for (auto& r : hs[1].records) r.features[2] = 4.0;  // constant within B only
  auto st = compute_norm_stats(hs, {"a", "b", "c"});
  double n = 0;
  std::vector<double> mean(3, 0), var(3, 0);
  for (auto& h : hs)
    for (auto& r : h.records) {
      n += 1;
      for (int f = 0; f < 3; ++f) mean[f] += st.normalize(f, r.features[f]);
    }
  for (auto& h : hs)
    for (auto& r : h.records)
      for (int f = 0; f < 3; ++f) var[f] += std::pow(st.normalize(f, r.features[f]) - mean[f] / n, 2);
  for (int f = 0; f < 3; ++f) {
    CHECK(std::abs(mean[f] / n) < 1e-6);
    CHECK(std::abs(var[f] / n - 1.0) < 1e-6);
  }
  for (double v : {-3.0, 0.0, 17.5, 1e4})
    for (int f = 0; f < 3; ++f) CHECK(std::abs(st.denormalize(f, st.normalize(f, v)) - v) < 1e-5 * std::max(1.0, std::abs(v)));
  CHECK(st.normalize(0, kMissing) == 0.0);

  std::vector<DriveHistory> flat = {make_history("A", 100, 5, 1)};
  for (auto& r : flat[0].records) r.features[0] = 2.0;
  auto fs = compute_norm_stats(flat, {"x"});
  CHECK(fs.stddev[0] == NormStats::kMinStd);
}

TEST_CASE("synthetic generator: determinism and failure flags") {
  testutil::TempDir dir("synth");
  SynthOptions o = SynthOptions::defaults();
  o.drives = 20;
  o.features = 6;
  o.seed = 4;
  auto a = synth_generate(o);
  auto b = synth_generate(o);
  const auto cols = synth_feature_columns(6);
  write_backblaze_csv(a, cols, dir / "a.csv");
  write_backblaze_csv(b, cols, dir / "b.csv");
  CHECK(testutil::slurp(dir / "a.csv") == testutil::slurp(dir / "b.csv"));
  o.seed = 5;
  write_backblaze_csv(synth_generate(o), cols, dir / "c.csv");
  CHECK(testutil::slurp(dir / "a.csv") != testutil::slurp(dir / "c.csv"));

  for (const auto& h : a) {
    CHECK(h.records.back().failure);
    CHECK(h.records.size() >= 40);
    CHECK(h.records.size() <= 120);
    for (std::size_t i = 0; i + 1 < h.records.size(); ++i) CHECK_FALSE(h.records[i].failure);
  }

  // and the CSV round-trips through ingestion
  const std::filesystem::path p[] = {dir / "a.csv"};
  auto back = ingest_csv(p, {cols, ""});
  CHECK(back.size() == a.size());
}

TEST_CASE("synthetic generator carries a learnable signal") {
  SynthOptions o = SynthOptions::defaults();
  o.drives = 120;
  o.features = 8;
  o.seed = 11;
  auto hs = synth_generate(o);
  std::vector<std::vector<double>> xs;
  std::vector<double> ys;
  std::vector<bool> is_train;
  for (std::size_t d = 0; d < hs.size(); ++d) {
    auto h = cap_history(hs[d], 60);
    auto rul = label_rul(h);
    for (std::size_t i = 0; i < h.records.size(); ++i) {
      xs.push_back(h.records[i].features);
      ys.push_back(rul[i]);
      is_train.push_back(d % 2 == 0);
    }
  }
  const std::size_t f = o.features;
  std::size_t ntr = std::count(is_train.begin(), is_train.end(), true);
  Eigen::MatrixXd a(ntr, f + 1);
  Eigen::VectorXd y(ntr);
  double ymean = 0;
  for (std::size_t i = 0, r = 0; i < xs.size(); ++i) {
    if (!is_train[i]) continue;
    for (std::size_t c = 0; c < f; ++c) a(r, c) = xs[i][c];
    a(r, f) = 1.0;
    y(r) = ys[i];
    ymean += ys[i];
    ++r;
  }
  ymean /= ntr;
  Eigen::VectorXd w = a.colPivHouseholderQr().solve(y);
  double sse = 0, sse_mean = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (is_train[i]) continue;
    double p = w(f);
    for (std::size_t c = 0; c < f; ++c) p += w(c) * xs[i][c];
    sse += (p - ys[i]) * (p - ys[i]);
    sse_mean += (ymean - ys[i]) * (ymean - ys[i]);
  }
  MESSAGE("held-out SSE linear " << sse << " vs mean " << sse_mean);
  CHECK(sse < 0.8 * sse_mean);
}

TEST_CASE("prepared dataset round trip") {
  testutil::TempDir dir("prep");
  SynthOptions o = SynthOptions::defaults();
  o.drives = 30;
  o.features = 4;
  o.seed = 2;
  PrepareOptions po;
  po.window = 10;
  auto ds = prepare_dataset(synth_generate(o), po);
  CHECK_FALSE(ds.train.empty());
  write_prepared(ds, dir.path);
  auto back = read_prepared(dir.path);
  CHECK(back.window == 10);
  CHECK(back.stats.mean == ds.stats.mean);
  CHECK(back.stats.stddev == ds.stats.stddev);
  REQUIRE(back.train.size() == ds.train.size());
  for (std::size_t i = 0; i < ds.train.size(); ++i) {
    CHECK(back.train[i].serial == ds.train[i].serial);
    CHECK(back.train[i].values == ds.train[i].values);
    CHECK(back.train[i].targets == ds.train[i].targets);
    CHECK(back.train[i].day_index == ds.train[i].day_index);
  }
  CHECK(back.test.size() == ds.test.size());
  CHECK(read_prepared_metadata(dir.path).train.empty());
  CHECK_THROWS_AS(read_prepared(dir / "missing"), DataError);
}
