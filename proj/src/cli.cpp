#include "tfbest/cli.hpp"

#include <spdlog/sinks/ostream_sink.h>
#include <spdlog/spdlog.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>

#include <fmt/format.h>

#include "CLI11.hpp"
#include "tfbest/checkpoint.hpp"
#include "tfbest/data.hpp"
#include "tfbest/errors.hpp"
#include "tfbest/eval.hpp"
#include "tfbest/gradcheck.hpp"
#include "tfbest/train.hpp"

namespace tfbest::cli {

namespace fs = std::filesystem;

namespace {

// Below this many training windows the default batch of 256 would be most of
// an epoch; a smaller batch is substituted unless --batch is given.
constexpr std::size_t kDeskScaleWindows = 1000;
constexpr std::size_t kDeskScaleBatch = 32;

struct SynthArgs {
  data::SynthOptions synth = data::SynthOptions::defaults();
  std::string out;
};

struct PrepareArgs {
  std::vector<std::string> inputs;
  std::string out;
  std::vector<std::string> columns;
  std::string model_filter;
  std::size_t window = 30;
  int max_rul = 60;
  std::string train_begin = "2013-01-01";
  std::string val_begin = "2020-01-01";
  std::string test_begin = "2021-01-01";
};

struct TrainArgs {
  std::string data;
  std::string out;
  std::string report;
  ModelConfig model;
  std::string variant = "tfbest";
  std::string attention_scale = "head_width";
  TrainConfig train;
};

struct EvalArgs {
  std::string data;
  std::string checkpoint;
  std::string out;
  std::string split = "test";
  eval::EvalOptions options;
};

struct ReportArgs {
  std::string input;
  std::string serial;
  double gamma = 0.90;
};

void ensure_parent(const fs::path& p) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
}

int do_synth(const SynthArgs& a, std::ostream& out) {
  const auto histories = data::synth_generate(a.synth);
  const auto columns = data::synth_feature_columns(a.synth.features);
  ensure_parent(a.out);
  data::write_backblaze_csv(histories, columns, a.out);
  std::size_t rows = 0;
  for (const auto& h : histories) rows += h.records.size();
  out << fmt::format("synth: wrote {} drives, {} rows to {} (seed {})\n", histories.size(), rows, a.out,
                     a.synth.seed);
  return kOk;
}

int do_prepare(const PrepareArgs& a, std::ostream& out) {
  std::vector<fs::path> paths(a.inputs.begin(), a.inputs.end());
  data::IngestOptions ingest;
  ingest.feature_columns = a.columns.empty() ? data::raw_smart_columns(paths.front()) : a.columns;
  ingest.model_filter = a.model_filter;
  if (ingest.feature_columns.empty()) throw DataError(a.inputs.front() + ": no smart_*_raw columns in header");
  data::IngestStats stats;
  auto histories = data::ingest_csv(paths, ingest, &stats);

  data::PrepareOptions opts;
  opts.window = a.window;
  opts.max_rul = a.max_rul;
  opts.columns = ingest.feature_columns;
  opts.boundaries = {data::parse_date(a.train_begin), data::parse_date(a.val_begin), data::parse_date(a.test_begin)};
  const auto ds = data::prepare_dataset(std::move(histories), opts);
  data::write_prepared(ds, a.out);
  out << fmt::format(
      "prepare: {} rows, {} failing drives ({} train / {} val / {} test, {} short, {} before range); "
      "{} / {} / {} windows; {} features -> {}\n",
      stats.rows, ds.train_drives + ds.val_drives + ds.test_drives + ds.short_drives + ds.dropped_drives,
      ds.train_drives, ds.val_drives, ds.test_drives, ds.short_drives, ds.dropped_drives, ds.train.size(),
      ds.val.size(), ds.test.size(), ds.stats.columns.size(), a.out);
  return kOk;
}

int do_train(TrainArgs a, bool batch_given, std::ostream& out) {
  const auto ds = data::read_prepared(a.data);
  if (ds.train.empty()) throw DataError(a.data + ": training split has no windows");
  ModelConfig mc = a.model;
  mc.window = ds.window;
  mc.features = ds.stats.columns.size();
  mc.variant = parse_variant(a.variant);
  mc.attention_scale = parse_attention_scale(a.attention_scale);
  mc.validate();

  TrainConfig tc = a.train;
  if (!batch_given && ds.train.size() < kDeskScaleWindows) {
    spdlog::info("train: {} training windows < {}; using desk-scale batch size {} instead of {}", ds.train.size(),
                 kDeskScaleWindows, kDeskScaleBatch, tc.batch_size);
    tc.batch_size = kDeskScaleBatch;
  }
  const std::uint64_t root = tc.seed;
  const std::uint64_t model_seed = derive_seed(root, "model");
  tc.seed = derive_seed(root, "train");

  TfbestModel<float> model(mc, model_seed);
  model.output_scaling() = fit_output_scaling(ds.train);
  const auto report = fit(model, ds.train, ds.val, tc, [&](const EpochRecord& e) {
    spdlog::info("epoch {:>3}  train_rmse {:.4f}  val_rmse {:.4f}  {:.1f}s", e.epoch, e.train_rmse, e.val_rmse,
                 e.seconds);
  });

  std::map<std::string, std::string> meta = {
      {"seed", std::to_string(root)},
      {"model_seed", std::to_string(model_seed)},
      {"train_seed", std::to_string(tc.seed)},
      {"optimizer", "adam"},
      {"lr", fmt::format("{}", tc.lr)},
      {"beta1", fmt::format("{}", tc.beta1)},
      {"beta2", fmt::format("{}", tc.beta2)},
      {"eps", fmt::format("{}", tc.eps)},
      {"batch_size", std::to_string(tc.batch_size)},
      {"max_epochs", std::to_string(tc.max_epochs)},
      {"epochs_run", std::to_string(report.epochs.size())},
      {"best_epoch", std::to_string(report.best_epoch)},
      {"stop_reason", report.stop_reason},
  };
  ensure_parent(a.out);
  save_checkpoint(model, a.out, meta);
  const std::string report_path = a.report.empty() ? a.out + ".report.csv" : a.report;
  ensure_parent(report_path);
  write_training_report(report, report_path);
  out << fmt::format("train: {} epochs ({}), best epoch {} val_rmse {:.4f}; checkpoint {}, report {}\n",
                     report.epochs.size(), report.stop_reason, report.best_epoch, report.best_val_rmse, a.out,
                     report_path);
  return kOk;
}

int do_eval(const EvalArgs& a, std::ostream& out) {
  const auto meta = data::read_prepared_metadata(a.data);
  CheckpointManifest manifest;
  const auto model = load_checkpoint(a.checkpoint, &manifest);
  if (manifest.config.features != meta.stats.columns.size() || manifest.config.window != meta.window) {
    throw ConfigMismatchError(fmt::format(
        "config mismatch: checkpoint expects window {} with {} features, dataset {} has window {} with {} features",
        manifest.config.window, manifest.config.features, a.data, meta.window, meta.stats.columns.size()));
  }
  const fs::path file = fs::path(a.data) / (a.split + ".ndjson");
  const auto windows = data::read_windows_ndjson(file);
  const auto result = eval::evaluate(model, windows, a.options);
  fs::create_directories(a.out);
  const fs::path dir(a.out);
  eval::emit_report(result.rows, dir / "report.csv");
  eval::emit_report(result.pooled, dir / "pooled.csv");
  eval::emit_trace(result.trace, dir / "trace.csv");
  eval::emit_summary(result, dir / "summary.json");
  out << fmt::format("eval: {} split, {} drives, {} windows, test_rmse {:.4f} -> {}\n", a.split, result.n_drives,
                     result.n_windows, result.test_rmse, a.out);
  return kOk;
}

int do_report(const ReportArgs& a, std::ostream& out) {
  auto rows = eval::read_report(a.input);
  if (!a.serial.empty()) {
    std::erase_if(rows, [&](const eval::ConfidenceRow& r) { return r.serial != a.serial; });
    if (rows.empty()) throw DataError(a.input + ": no rows for serial " + a.serial);
  }
  out << eval::render_table(rows, a.gamma);
  return kOk;
}

int do_gradcheck(const gradcheck::Options& opts, std::ostream& out) {
  const auto results = gradcheck::run_suite(opts);
  bool ok = true;
  for (const auto& r : results) {
    out << fmt::format("{:<28} max_rel_error {:.3e}  coords {:>5}  kink {:>2}  {}  (worst {})\n", r.name,
                       r.max_rel_error, r.coordinates, r.kink_coordinates, r.pass ? "PASS" : "FAIL", r.worst);
    ok = ok && r.pass;
  }
  if (!ok) throw NumericError(fmt::format("gradient check exceeded tolerance {:g}", opts.tolerance));
  return kOk;
}

void configure_logging(std::ostream& err) {
  auto sink = std::make_shared<spdlog::sinks::ostream_sink_mt>(err);
  auto logger = std::make_shared<spdlog::logger>("tfbest", sink);
  logger->set_pattern("[%l] %v");
  spdlog::level::level_enum level = spdlog::level::info;
  if (const char* env = std::getenv("TFBEST_LOG"); env && *env) level = spdlog::level::from_str(env);
  logger->set_level(level);
  spdlog::set_default_logger(logger);
}

std::string one_line(std::string s) {
  for (char& c : s)
    if (c == '\n' || c == '\r') c = ' ';
  return s;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  configure_logging(err);

  CLI::App app{"Remaining-useful-life prediction for hard drives from S.M.A.R.T. logs", "tfbest"};
  app.require_subcommand(1);
  app.option_defaults()->always_capture_default();

  SynthArgs synth;
  auto* s = app.add_subcommand("synth", "Generate a synthetic Backblaze-style CSV of failing drives");
  s->add_option("--out", synth.out, "Output CSV path")->required();
  s->add_option("--drives", synth.synth.drives, "Number of failing drives")->check(CLI::PositiveNumber);
  s->add_option("--features", synth.synth.features, "S.M.A.R.T. feature columns")->check(CLI::PositiveNumber);
  s->add_option("--seed", synth.synth.seed, "Random seed");
  s->add_option("--min-days", synth.synth.min_days, "Shortest history (days)");
  s->add_option("--max-days", synth.synth.max_days, "Longest history (days)");
  s->add_option("--model", synth.synth.model, "Drive model string");

  PrepareArgs prep;
  auto* p = app.add_subcommand("prepare", "Ingest CSVs and write windowed NDJSON splits plus statistics");
  p->add_option("--input", prep.inputs, "Input CSV files")->required()->check(CLI::ExistingFile);
  p->add_option("--out", prep.out, "Output dataset directory")->required();
  p->add_option("--columns", prep.columns, "Feature columns (default: every smart_*_raw column)")->delimiter(',');
  p->add_option("--model-filter", prep.model_filter, "Keep only this drive model");
  p->add_option("--window", prep.window, "Window length T")->check(CLI::PositiveNumber);
  p->add_option("--max-rul", prep.max_rul, "Keep days with RUL <= this")->check(CLI::NonNegativeNumber);
  p->add_option("--train-begin", prep.train_begin, "First failure date of the training split");
  p->add_option("--val-begin", prep.val_begin, "First failure date of the validation split");
  p->add_option("--test-begin", prep.test_begin, "First failure date of the test split");

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "Train a model on a prepared dataset");
  t->add_option("--data", tr.data, "Prepared dataset directory")->required()->check(CLI::ExistingDirectory);
  t->add_option("--out", tr.out, "Checkpoint path")->required();
  t->add_option("--report", tr.report, "Training report CSV (default: <out>.report.csv)");
  t->add_option("--variant", tr.variant, "tfbest | dast | vanilla")
      ->check(CLI::IsMember({"tfbest", "dast", "vanilla"}));
  t->add_option("--d-model", tr.model.d_model, "Model width");
  t->add_option("--heads", tr.model.heads, "Attention heads");
  t->add_option("--encoder-layers", tr.model.encoder_layers, "Encoder layers per encoder");
  t->add_option("--decoder-layers", tr.model.decoder_layers, "Decoder layers");
  t->add_option("--d-ff", tr.model.d_ff, "Feed-forward width");
  t->add_option("--dropout", tr.model.dropout, "Dropout rate");
  t->add_option("--attention-scale", tr.attention_scale, "head_width | model_width")
      ->check(CLI::IsMember({"head_width", "model_width"}));
  t->add_option("--lr", tr.train.lr, "Adam learning rate");
  auto* batch_opt = t->add_option("--batch", tr.train.batch_size,
                                  "Mini-batch size (32 when the training set has < 1000 windows and unset)");
  t->add_option("--epochs", tr.train.max_epochs, "Maximum epochs");
  t->add_option("--beta1", tr.train.beta1, "Adam beta1");
  t->add_option("--beta2", tr.train.beta2, "Adam beta2");
  t->add_option("--eps", tr.train.eps, "Adam epsilon");
  t->add_option("--seed", tr.train.seed, "Root seed for initialization, shuffling and dropout");
  t->add_option("--patience", tr.train.patience, "Early-stopping patience in epochs (0 = off)");
  t->add_option("--clip-norm", tr.train.clip_norm, "Global gradient-norm clip (0 = off)");
  t->add_option("--lr-decay", tr.train.lr_decay, "Per-epoch learning-rate factor (1 = off)");
  t->add_option("--target-val-rmse", tr.train.target_val_rmse, "Stop once val RMSE reaches this (0 = off)");
  t->add_option("--threads", tr.train.threads, "Worker threads")->check(CLI::PositiveNumber);

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "Evaluate a checkpoint: RMSE, confidence report, trace");
  e->add_option("--data", ev.data, "Prepared dataset directory")->required()->check(CLI::ExistingDirectory);
  e->add_option("--checkpoint", ev.checkpoint, "Checkpoint path")->required()->check(CLI::ExistingFile);
  e->add_option("--out", ev.out, "Output directory")->required();
  e->add_option("--split", ev.split, "train | val | test")->check(CLI::IsMember({"train", "val", "test"}));
  e->add_option("--gamma", ev.options.gamma, "Confidence level")->check(CLI::Range(0.0, 1.0));
  e->add_flag("--clip-at-zero", ev.options.clip_at_zero, "Clamp reported estimates and bounds at 0");
  e->add_option("--threads", ev.options.threads, "Worker threads")->check(CLI::PositiveNumber);

  ReportArgs rp;
  auto* r = app.add_subcommand("report", "Render a confidence report CSV as a text table");
  r->add_option("--input", rp.input, "report.csv from eval")->required()->check(CLI::ExistingFile);
  r->add_option("--serial", rp.serial, "Only this serial");
  r->add_option("--gamma", rp.gamma, "Confidence level used by eval (table title)");

  gradcheck::Options gc;
  auto* g = app.add_subcommand("gradcheck", "Finite-difference gradient checks of every layer and model");
  g->add_option("--eps", gc.eps, "Central-difference step");
  g->add_option("--tolerance", gc.tolerance, "Maximum relative error");
  g->add_option("--seed", gc.seed, "Seed for the random instances");
  g->add_option("--floor", gc.floor, "Denominator floor of the relative error");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp& ex) {
    return app.exit(ex, out, err);
  } catch (const CLI::CallForAllHelp& ex) {
    return app.exit(ex, out, err);
  } catch (const CLI::ParseError& ex) {
    err << "error: usage: " << one_line(ex.what()) << '\n';
    return kUsage;
  }

  try {
    if (s->parsed()) {
      if (synth.synth.min_days > synth.synth.max_days) throw UsageError("--min-days exceeds --max-days");
      return do_synth(synth, out);
    }
    if (p->parsed()) return do_prepare(prep, out);
    if (t->parsed()) return do_train(tr, batch_opt->count() > 0, out);
    if (e->parsed()) return do_eval(ev, out);
    if (r->parsed()) return do_report(rp, out);
    if (g->parsed()) return do_gradcheck(gc, out);
  } catch (const UsageError& ex) {
    err << "error: usage: " << one_line(ex.what()) << '\n';
    return kUsage;
  } catch (const std::invalid_argument& ex) {
    err << "error: usage: " << one_line(ex.what()) << '\n';
    return kUsage;
  } catch (const ConfigMismatchError& ex) {
    err << "error: config-mismatch: " << one_line(ex.what()) << '\n';
    return kDataError;
  } catch (const NumericError& ex) {
    err << "error: numeric: " << one_line(ex.what()) << '\n';
    return kNumericError;
  } catch (const Error& ex) {
    err << "error: data: " << one_line(ex.what()) << '\n';
    return kDataError;
  } catch (const fs::filesystem_error& ex) {
    err << "error: data: " << one_line(ex.what()) << '\n';
    return kDataError;
  } catch (const std::exception& ex) {
    err << "error: internal: " << one_line(ex.what()) << '\n';
    return kDataError;
  }
  return kUsage;
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run(args, out, err);
}

}  // namespace tfbest::cli
