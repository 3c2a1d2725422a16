#include <algorithm>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "test_util.hpp"
#include "tfbest/cli.hpp"

using tfbest::cli::run;

namespace {

struct Outcome {
  int code;
  std::string out, err;
};

Outcome call(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = run(args, out, err);
  return {code, out.str(), err.str()};
}

std::size_t lines(const std::string& s) { return std::count(s.begin(), s.end(), '\n'); }

// synth -> prepare with a short window so the tiny model trains quickly.
void make_dataset(const testutil::TempDir& dir, const std::string& features = "6") {
  REQUIRE(call({"synth", "--out", (dir / "s.csv").string(), "--drives", "12", "--features", features, "--seed", "3"})
              .code == 0);
  REQUIRE(call({"prepare", "--input", (dir / "s.csv").string(), "--out", (dir / ("data" + features)).string(),
                "--window", "8"})
              .code == 0);
}

std::vector<std::string> tiny_train(const testutil::TempDir& dir, const std::string& data, const std::string& out) {
  return {"train", "--data", (dir / data).string(), "--out", (dir / out).string(), "--d-model", "8", "--heads", "2",
          "--d-ff", "8", "--encoder-layers", "1", "--seed", "5"};
}

}  // namespace

TEST_CASE("synth is deterministic") {
  testutil::TempDir dir("cli-synth");
  for (auto name : {"a.csv", "b.csv"}) {
    auto r = call({"synth", "--drives", "50", "--features", "16", "--seed", "7", "--out", (dir / name).string()});
    CHECK(r.code == 0);
  }
  const auto a = testutil::slurp(dir / "a.csv");
  CHECK_FALSE(a.empty());
  CHECK(a == testutil::slurp(dir / "b.csv"));
}

TEST_CASE("train, eval and report end to end") {
  testutil::TempDir dir("cli-train");
  make_dataset(dir);
  auto args = tiny_train(dir, "data6", "m.ckpt");
  args.insert(args.end(), {"--variant", "tfbest", "--epochs", "5"});
  auto r = call(args);
  INFO(r.err);
  REQUIRE(r.code == 0);
  CHECK(std::filesystem::exists(dir / "m.ckpt"));
  const auto report = testutil::slurp(dir / "m.ckpt.report.csv");
  CHECK(lines(report) == 6);
  CHECK(r.err.find("batch") != std::string::npos);  // desk-scale notice

  // idempotent: identical inputs and seed give a byte-identical checkpoint
  auto again = tiny_train(dir, "data6", "m2.ckpt");
  again.insert(again.end(), {"--variant", "tfbest", "--epochs", "5"});
  REQUIRE(call(again).code == 0);
  CHECK(testutil::slurp(dir / "m.ckpt") == testutil::slurp(dir / "m2.ckpt"));

  auto e = call({"eval", "--data", (dir / "data6").string(), "--checkpoint", (dir / "m.ckpt").string(), "--out",
                 (dir / "eval").string()});
  INFO(e.err);
  REQUIRE(e.code == 0);
  for (auto f : {"report.csv", "pooled.csv", "trace.csv", "summary.json"})
    CHECK(std::filesystem::exists(dir / "eval" / f));
  CHECK(testutil::slurp(dir / "eval" / "summary.json").find("test_rmse") != std::string::npos);

  auto rep = call({"report", "--input", (dir / "eval" / "report.csv").string()});
  CHECK(rep.code == 0);
  CHECK_FALSE(rep.out.empty());
}

TEST_CASE("eval against a dataset with a different feature count is a config mismatch") {
  testutil::TempDir dir("cli-mismatch");
  make_dataset(dir, "6");
  make_dataset(dir, "5");
  auto args = tiny_train(dir, "data6", "m.ckpt");
  args.insert(args.end(), {"--epochs", "1"});
  REQUIRE(call(args).code == 0);
  auto e = call({"eval", "--data", (dir / "data5").string(), "--checkpoint", (dir / "m.ckpt").string(), "--out",
                 (dir / "eval").string()});
  CHECK(e.code == 2);
  CHECK(e.err.rfind("error: config-mismatch:", 0) == 0);
  CHECK(lines(e.err) == 1);
}

TEST_CASE("usage and data errors map to exit codes") {
  CHECK(call({}).code == 1);
  CHECK(call({"frobnicate"}).code == 1);
  auto r = call({"synth"});
  CHECK(r.code == 1);
  CHECK(r.err.rfind("error: usage:", 0) == 0);

  testutil::TempDir dir("cli-bad");
  {
    std::ofstream f(dir / "bad.csv");
    f << "date,serial_number,model,failure,smart_5_raw\n2021-99-01,S,M,1,3\n";
  }
  auto p = call({"prepare", "--input", (dir / "bad.csv").string(), "--out", (dir / "d").string()});
  CHECK(p.code == 2);
  CHECK(p.err.rfind("error: data:", 0) == 0);
}

TEST_CASE("help lists defaults") {
  auto h = call({"train", "--help"});
  CHECK(h.code == 0);
  for (auto s : {"--d-model", "64", "--heads", "4", "--encoder-layers", "2", "--decoder-layers", "1", "--dropout",
                 "0.1", "--lr", "0.001", "--epochs", "100", "--batch", "256"})
    CHECK(h.out.find(s) != std::string::npos);
  auto p = call({"prepare", "--help"});
  CHECK(p.out.find("30") != std::string::npos);
  auto g = call({"gradcheck", "--help"});
  CHECK(g.out.find("--eps") != std::string::npos);
}
