#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include "tfbest/checkpoint.hpp"
#include "tfbest/cli.hpp"
#include "tfbest/data.hpp"
#include "tfbest/errors.hpp"
#include "tfbest/eval.hpp"
#include "tfbest/gradcheck.hpp"
#include "tfbest/train.hpp"

namespace py = pybind11;
using namespace tfbest;

namespace {

using Model = TfbestModel<float>;

py::array_t<float> to_array(const std::vector<float>& v, std::vector<py::ssize_t> shape) {
  py::array_t<float> out(shape);
  std::copy(v.begin(), v.end(), out.mutable_data());
  return out;
}

ad::Tensor<float> window_tensor(const py::array_t<float, py::array::c_style | py::array::forcecast>& x) {
  if (x.ndim() != 2) throw ShapeError("window must be a 2-d array [T, F]");
  std::vector<float> data(x.data(), x.data() + x.size());
  return ad::Tensor<float>({static_cast<std::size_t>(x.shape(0)), static_cast<std::size_t>(x.shape(1))},
                           std::move(data));
}

py::dict windows_to_dict(const std::vector<data::WindowSample>& ws, std::size_t steps, std::size_t features) {
  const auto n = static_cast<py::ssize_t>(ws.size());
  const auto t = static_cast<py::ssize_t>(steps), f = static_cast<py::ssize_t>(features);
  py::array_t<float> x({n, t, f});
  py::array_t<int> y({n, t});
  py::array_t<int> day({n, t});
  py::list serials;
  auto xs = x.mutable_unchecked<3>();
  auto ys = y.mutable_unchecked<2>();
  auto ds = day.mutable_unchecked<2>();
  for (py::ssize_t i = 0; i < n; ++i) {
    const auto& w = ws[static_cast<std::size_t>(i)];
    serials.append(w.serial);
    for (py::ssize_t s = 0; s < t; ++s) {
      ys(i, s) = w.targets[static_cast<std::size_t>(s)];
      ds(i, s) = w.day_index[static_cast<std::size_t>(s)];
      for (py::ssize_t k = 0; k < f; ++k) xs(i, s, k) = w.values[static_cast<std::size_t>(s * f + k)];
    }
  }
  py::dict d;
  d["features"] = x;
  d["targets"] = y;
  d["day_index"] = day;
  d["serial"] = serials;
  return d;
}

py::dict row_to_dict(const eval::ConfidenceRow& r) {
  py::dict d;
  d["serial"] = r.serial;
  d["day"] = r.day;
  d["true_rul"] = r.true_rul;
  d["n"] = r.n;
  d["point_estimate"] = r.point_estimate;
  d["std_error"] = r.std_error;
  d["ci_low"] = r.ci_low;
  d["ci_high"] = r.ci_high;
  return d;
}

}  // namespace

PYBIND11_MODULE(_tfbest, m) {
  m.doc() = "Native core of the tfbest package";

  static py::exception<Error> base_error(m, "Error", PyExc_RuntimeError);
  static py::exception<DataError> data_error(m, "DataError", base_error.ptr());
  static py::exception<ConfigMismatchError> mismatch_error(m, "ConfigMismatchError", data_error.ptr());
  static py::exception<ShapeError> shape_error(m, "ShapeError", base_error.ptr());
  static py::exception<NumericError> numeric_error(m, "NumericError", base_error.ptr());
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const ConfigMismatchError& e) {
      py::set_error(mismatch_error, e.what());
    } catch (const DataError& e) {
      py::set_error(data_error, e.what());
    } catch (const ShapeError& e) {
      py::set_error(shape_error, e.what());
    } catch (const NumericError& e) {
      py::set_error(numeric_error, e.what());
    } catch (const Error& e) {
      py::set_error(base_error, e.what());
    }
  });

  // ---- statistics -------------------------------------------------------------------
  m.def("student_t_quantile", &eval::student_t_quantile, py::arg("p"), py::arg("df"));
  m.def("student_t_cdf", &eval::student_t_cdf, py::arg("t"), py::arg("df"));
  m.def(
      "confidence_margin",
      [](const std::vector<double>& preds, double gamma) { return row_to_dict(eval::confidence_margin(preds, gamma)); },
      py::arg("preds"), py::arg("gamma") = 0.90);
  m.def(
      "sinusoidal_pe",
      [](std::size_t length, std::size_t d_model) {
        const auto pe = nn::sinusoidal_pe<double>(length, d_model);
        py::array_t<double> out({static_cast<py::ssize_t>(length), static_cast<py::ssize_t>(d_model)});
        std::copy(pe.data().begin(), pe.data().end(), out.mutable_data());
        return out;
      },
      py::arg("length"), py::arg("d_model"));

  // ---- models ------------------------------------------------------------------------
  py::class_<ModelConfig>(m, "ModelConfig")
      .def(py::init<>())
      .def_readwrite("window", &ModelConfig::window)
      .def_readwrite("features", &ModelConfig::features)
      .def_readwrite("d_model", &ModelConfig::d_model)
      .def_readwrite("heads", &ModelConfig::heads)
      .def_readwrite("encoder_layers", &ModelConfig::encoder_layers)
      .def_readwrite("decoder_layers", &ModelConfig::decoder_layers)
      .def_readwrite("d_ff", &ModelConfig::d_ff)
      .def_readwrite("dropout", &ModelConfig::dropout)
      .def_property(
          "variant", [](const ModelConfig& c) { return to_string(c.variant); },
          [](ModelConfig& c, const std::string& v) { c.variant = parse_variant(v); })
      .def_property(
          "attention_scale", [](const ModelConfig& c) { return to_string(c.attention_scale); },
          [](ModelConfig& c, const std::string& v) { c.attention_scale = parse_attention_scale(v); })
      .def("validate", &ModelConfig::validate)
      .def("__eq__", [](const ModelConfig& a, const ModelConfig& b) { return a == b; })
      .def("__repr__", [](const ModelConfig& c) {
        std::ostringstream os;
        os << "ModelConfig(variant=" << to_string(c.variant) << ", window=" << c.window << ", features=" << c.features
           << ", d_model=" << c.d_model << ", heads=" << c.heads << ")";
        return os.str();
      });

  py::class_<Model>(m, "Model")
      .def(py::init<const ModelConfig&, std::uint64_t>(), py::arg("config"), py::arg("seed") = 0)
      .def_property_readonly("config", &Model::config)
      .def_property(
          "output_shift", [](const Model& mo) { return mo.output_scaling().shift; },
          [](Model& mo, double v) { mo.output_scaling().shift = v; })
      .def_property(
          "output_scale", [](const Model& mo) { return mo.output_scaling().scale; },
          [](Model& mo, double v) { mo.output_scaling().scale = v; })
      .def("parameter_count", py::overload_cast<>(&Model::parameter_count, py::const_))
      .def("parameter_names",
           [](const Model& mo) {
             std::vector<std::string> names;
             for (const auto* p : mo.parameters()) names.push_back(p->name);
             return names;
           })
      .def(
          "parameter",
          [](Model& mo, const std::string& name) {
            auto* p = mo.find_parameter(name);
            if (!p) throw py::key_error(name);
            std::vector<py::ssize_t> shape(p->value.shape().begin(), p->value.shape().end());
            return to_array(p->value.storage(), shape);
          },
          py::arg("name"))
      .def(
          "predict",
          [](const Model& mo, const py::array_t<float, py::array::c_style | py::array::forcecast>& x) {
            const auto out = mo.predict(window_tensor(x));
            return to_array(out, {static_cast<py::ssize_t>(out.size())});
          },
          py::arg("window"), "RUL sequence [T] for one window [T, F], dropout off")
      .def(
          "save",
          [](const Model& mo, const std::filesystem::path& path, const std::map<std::string, std::string>& meta) {
            save_checkpoint(mo, path, meta);
          },
          py::arg("path"), py::arg("metadata") = std::map<std::string, std::string>{})
      .def_static(
          "load", [](const std::filesystem::path& path) { return load_checkpoint(path); }, py::arg("path"));

  m.def("closed_form_parameter_count", [](const ModelConfig& c) { return Model::parameter_count(c); },
        py::arg("config"));

  // ---- data ---------------------------------------------------------------------------
  m.def(
      "synth_csv",
      [](const std::filesystem::path& path, std::size_t drives, std::size_t features, std::uint64_t seed) {
        auto o = data::SynthOptions::defaults();
        o.drives = drives;
        o.features = features;
        o.seed = seed;
        const auto hs = data::synth_generate(o);
        data::write_backblaze_csv(hs, data::synth_feature_columns(features), path);
        return hs.size();
      },
      py::arg("path"), py::arg("drives") = 200, py::arg("features") = 16, py::arg("seed") = 0,
      "Write a synthetic Backblaze-style CSV; returns the drive count");
  m.def(
      "prepare",
      [](const std::vector<std::filesystem::path>& inputs, const std::filesystem::path& out, std::size_t window,
         int max_rul) {
        if (inputs.empty()) throw DataError("prepare: no input files");
        data::IngestOptions ingest;
        ingest.feature_columns = data::raw_smart_columns(inputs.front());
        auto hs = data::ingest_csv(inputs, ingest);
        data::PrepareOptions opts;
        opts.window = window;
        opts.max_rul = max_rul;
        opts.columns = ingest.feature_columns;
        const auto ds = data::prepare_dataset(std::move(hs), opts);
        data::write_prepared(ds, out);
        py::dict d;
        d["train_windows"] = ds.train.size();
        d["val_windows"] = ds.val.size();
        d["test_windows"] = ds.test.size();
        d["features"] = ds.stats.columns.size();
        return d;
      },
      py::arg("inputs"), py::arg("out"), py::arg("window") = 30, py::arg("max_rul") = 60);
  m.def(
      "load_split",
      [](const std::filesystem::path& dir, const std::string& split) {
        const auto meta = data::read_prepared_metadata(dir);
        const auto ws = data::read_windows_ndjson(dir / (split + ".ndjson"));
        return windows_to_dict(ws, meta.window, meta.stats.columns.size());
      },
      py::arg("dir"), py::arg("split") = "train",
      "Windows of one split as arrays: features [N,T,F], targets [N,T], day_index [N,T], serial");

  // ---- training and evaluation ----------------------------------------------------------------
  m.def(
      "fit",
      [](Model& mo, const std::filesystem::path& dir, double lr, std::size_t batch_size, std::size_t epochs,
         std::uint64_t seed, double target_val_rmse) {
        const auto ds = data::read_prepared(dir);
        TrainConfig cfg;
        cfg.lr = lr;
        cfg.batch_size = batch_size;
        cfg.max_epochs = epochs;
        cfg.seed = seed;
        cfg.target_val_rmse = target_val_rmse;
        mo.output_scaling() = fit_output_scaling(ds.train);
        TrainReport rep;
        {
          py::gil_scoped_release release;
          rep = fit(mo, ds.train, ds.val, cfg);
        }
        py::list epochs_out;
        for (const auto& e : rep.epochs) {
          py::dict d;
          d["epoch"] = e.epoch;
          d["train_rmse"] = e.train_rmse;
          d["val_rmse"] = e.val_rmse;
          d["seconds"] = e.seconds;
          epochs_out.append(d);
        }
        return epochs_out;
      },
      py::arg("model"), py::arg("data_dir"), py::arg("lr") = 0.001, py::arg("batch_size") = 256,
      py::arg("epochs") = 100, py::arg("seed") = 0, py::arg("target_val_rmse") = 0.0,
      "Adam training on a prepared dataset; returns one dict per epoch");
  m.def(
      "evaluate",
      [](const Model& mo, const std::filesystem::path& dir, const std::string& split, double gamma) {
        const auto ws = data::read_windows_ndjson(dir / (split + ".ndjson"));
        eval::EvalOptions opts;
        opts.gamma = gamma;
        const auto r = eval::evaluate(mo, ws, opts);
        py::list rows;
        for (const auto& row : r.rows) rows.append(row_to_dict(row));
        py::dict d;
        d["test_rmse"] = r.test_rmse;
        d["n_drives"] = r.n_drives;
        d["n_windows"] = r.n_windows;
        d["rows"] = rows;
        return d;
      },
      py::arg("model"), py::arg("data_dir"), py::arg("split") = "test", py::arg("gamma") = 0.90);
  m.def(
      "gradcheck",
      [](double eps, double tolerance, std::uint64_t seed) {
        gradcheck::Options o;
        o.eps = eps;
        o.tolerance = tolerance;
        o.seed = seed;
        py::list out;
        for (const auto& r : gradcheck::run_suite(o)) {
          py::dict d;
          d["name"] = r.name;
          d["max_rel_error"] = r.max_rel_error;
          d["coordinates"] = r.coordinates;
          d["pass"] = r.pass;
          out.append(d);
        }
        return out;
      },
      py::arg("eps") = 1e-3, py::arg("tolerance") = 1e-4, py::arg("seed") = 1);

  m.def(
      "run_cli",
      [](const std::vector<std::string>& args) {
        std::ostringstream out, err;
        const int code = cli::run(args, out, err);
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"), "Run a CLI subcommand in-process; returns (exit_code, stdout, stderr)");
}
