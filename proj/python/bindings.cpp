#include <pybind11/eigen.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include "misd/augment.hpp"
#include "misd/cli.hpp"
#include "misd/data_io.hpp"
#include "misd/errors.hpp"
#include "misd/gradcheck.hpp"
#include "misd/losses.hpp"
#include "misd/metrics.hpp"
#include "misd/model_io.hpp"
#include "misd/trainer.hpp"

namespace py = pybind11;
using namespace misd;

namespace {

using DoubleArray = py::array_t<double, py::array::c_style | py::array::forcecast>;
using IntArray = py::array_t<long long, py::array::c_style | py::array::forcecast>;

std::vector<double> doubles(const DoubleArray& a) {
  if (a.ndim() != 1) throw ShapeError("expected a 1-d array");
  return {a.data(), a.data() + a.size()};
}

std::vector<int> ints(const IntArray& a) {
  if (a.ndim() != 1) throw ShapeError("expected a 1-d array");
  std::vector<int> out;
  for (py::ssize_t i = 0; i < a.size(); ++i) out.push_back(static_cast<int>(a.data()[i]));
  return out;
}

std::vector<Outcome> outcomes(const DoubleArray& confidence, const py::array_t<bool>& correct) {
  const auto c = doubles(confidence);
  if (correct.ndim() != 1 || static_cast<std::size_t>(correct.size()) != c.size()) {
    throw ShapeError("confidence and correct must be 1-d arrays of equal length");
  }
  std::vector<Outcome> out;
  for (std::size_t i = 0; i < c.size(); ++i) out.push_back({c[i], correct.at(static_cast<py::ssize_t>(i))});
  return out;
}

std::vector<ScoredPrediction> predictions(const DoubleArray& confidence, const IntArray& predicted,
                                          const IntArray& label) {
  const auto c = doubles(confidence);
  const auto p = ints(predicted), l = ints(label);
  if (p.size() != c.size() || l.size() != c.size()) {
    throw ShapeError("confidence, predicted and label must have equal length");
  }
  std::vector<ScoredPrediction> out;
  for (std::size_t i = 0; i < c.size(); ++i) out.push_back({c[i], p[i], l[i]});
  return out;
}

py::dict report_dict(const MisDReport& r) {
  py::dict d;
  auto opt = [](const std::optional<double>& v) -> py::object {
    return v ? py::float_(*v) : py::object(py::none());
  };
  d["count"] = r.count;
  d["correct"] = r.correct;
  d["acc"] = opt(r.acc);
  d["fpr95"] = opt(r.fpr95);
  d["aurc"] = opt(r.aurc);
  d["e_aurc"] = opt(r.e_aurc);
  d["auroc"] = opt(r.auroc);
  d["aupr_s"] = opt(r.aupr_success);
  d["aupr_e"] = opt(r.aupr_error);
  d["notes"] = r.notes;
  return d;
}

py::dict scores_dict(const std::vector<ScoredPrediction>& preds) {
  std::vector<double> conf;
  std::vector<int> pred, label;
  for (const auto& p : preds) {
    conf.push_back(p.confidence);
    pred.push_back(p.predicted);
    label.push_back(p.label);
  }
  py::dict d;
  d["confidence"] = py::array(py::cast(conf));
  d["predicted"] = py::array(py::cast(pred));
  d["label"] = py::array(py::cast(label));
  return d;
}

py::array_t<double> images_array(const ImageDataset& ds) {
  const Image& first = ds.images.at(0);
  py::array_t<double> out({static_cast<py::ssize_t>(ds.size()), static_cast<py::ssize_t>(first.height),
                           static_cast<py::ssize_t>(first.width), static_cast<py::ssize_t>(first.channels)});
  double* dst = out.mutable_data();
  for (const Image& img : ds.images) dst = std::copy(img.pixels.begin(), img.pixels.end(), dst);
  return out;
}

py::dict embeddings_dict(const EmbeddingDataset& ds) {
  py::array_t<double> views({static_cast<py::ssize_t>(ds.count()), static_cast<py::ssize_t>(ds.k),
                             static_cast<py::ssize_t>(ds.dim)});
  double* dst = views.mutable_data();
  for (const auto& v : ds.views) dst = std::copy(v.data(), v.data() + v.size(), dst);
  py::dict d;
  d["views"] = views;
  d["labels"] = py::array(py::cast(ds.labels));
  d["class_names"] = ds.class_names;
  return d;
}

EmbeddingDataset embeddings_from(const DoubleArray& views, const IntArray& labels,
                                 const std::vector<std::string>& class_names) {
  if (views.ndim() != 3) throw ShapeError("views must have shape (count, k, d)");
  EmbeddingDataset ds;
  const auto n = views.shape(0);
  ds.k = static_cast<int>(views.shape(1));
  ds.dim = static_cast<int>(views.shape(2));
  ds.labels = ints(labels);
  ds.class_names = class_names;
  ds.provenance = Provenance::external;
  const double* src = views.data();
  for (py::ssize_t i = 0; i < n * ds.k; ++i, src += ds.dim) {
    ds.views.emplace_back(Eigen::Map<const Eigen::VectorXd>(src, ds.dim));
  }
  return ds;
}

TrainConfig train_config(const py::kwargs& kw) {
  TrainConfig c;
  for (const auto& [key, value] : kw) {
    const auto k = key.cast<std::string>();
    if (k == "shots") c.shots = value.cast<int>();
    else if (k == "epochs") c.epochs = value.cast<int>();
    else if (k == "lr") c.lr = value.cast<double>();
    else if (k == "momentum") c.momentum = value.cast<double>();
    else if (k == "lambda_neg") c.lambda_neg = value.cast<double>();
    else if (k == "lambda_orth") c.lambda_orth = value.cast<double>();
    else if (k == "temperature") c.temperature = value.cast<double>();
    else if (k == "negative_prompts") c.negative_prompts = value.cast<int>();
    else if (k == "crops") c.crops.k = value.cast<int>();
    else if (k == "seed") c.seed = value.cast<std::uint64_t>();
    else if (k == "neg_mode") c.negative_mode = parse_negative_mode(value.cast<std::string>());
    else if (k == "crop_schedule") {
      const auto v = value.cast<std::string>();
      if (v == "adaptive") c.crops.schedule = CropSchedule::adaptive;
      else if (v == "static") c.crops.schedule = CropSchedule::fixed;
      else throw ConfigError("unknown crop schedule '" + v + "'");
    } else if (k == "augment") c.augment = parse_augment_strategy(value.cast<std::string>());
    else throw ConfigError("unknown training option '" + k + "'");
  }
  return c;
}

bool is_embedding_file(const std::filesystem::path& p) { return p.extension() == ".emb"; }

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Few-shot misclassification detection with learned category and negative prompts.";

  auto base = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<ConfigError>(m, "ConfigError", base);
  py::register_exception<DegenerateTaskError>(m, "DegenerateTaskError", base);
  py::register_exception<ShapeError>(m, "ShapeError", base);
  py::register_exception<DataError>(m, "DataError", base);
  py::register_exception<UndefinedSimilarityError>(m, "UndefinedSimilarityError", base);
  py::register_exception<UndefinedMetricError>(m, "UndefinedMetricError", base);
  py::register_exception<FormatError>(m, "FormatError", base);
  py::register_exception<LengthError>(m, "LengthError", base);
  py::register_exception<ParseError>(m, "ParseError", base);
  py::register_exception<CompatibilityError>(m, "CompatibilityError", base);
  py::register_exception<IoError>(m, "IoError", base);

  m.attr("__version__") = std::string(engine_version());

  // Metrics
  m.def("full_report",
        [](const DoubleArray& c, const IntArray& p, const IntArray& l) {
          return report_dict(full_report(predictions(c, p, l)));
        },
        py::arg("confidence"), py::arg("predicted"), py::arg("label"),
        "All seven metrics; undefined ones are None.");
  m.def("binary_report",
        [](const DoubleArray& c, const py::array_t<bool>& ok) {
          return report_dict(binary_report(outcomes(c, ok)));
        },
        py::arg("confidence"), py::arg("correct"));
  m.def("auroc", [](const DoubleArray& c, const py::array_t<bool>& ok) { return auroc(outcomes(c, ok)); },
        py::arg("confidence"), py::arg("correct"), "Fraction in [0, 1]; the reports use percent.");
  m.def("fpr_at_95_tpr",
        [](const DoubleArray& c, const py::array_t<bool>& ok) { return fpr_at_95_tpr(outcomes(c, ok)); },
        py::arg("confidence"), py::arg("correct"));
  m.def("risk_coverage",
        [](const DoubleArray& c, const py::array_t<bool>& ok) {
          const RiskCoverage rc = risk_coverage(outcomes(c, ok));
          py::dict d;
          d["aurc"] = rc.aurc;
          d["aurc_optimal"] = rc.aurc_optimal;
          d["e_aurc"] = rc.e_aurc;
          return d;
        },
        py::arg("confidence"), py::arg("correct"));
  m.def("aupr",
        [](const DoubleArray& c, const py::array_t<bool>& ok, const std::string& polarity) {
          if (polarity != "success" && polarity != "error") {
            throw ConfigError("polarity must be 'success' or 'error'");
          }
          return aupr(outcomes(c, ok), polarity == "success" ? Polarity::success : Polarity::error);
        },
        py::arg("confidence"), py::arg("correct"), py::arg("polarity") = "success");

  // Data
  m.def("gen_synth",
        [](int num_classes, int per_class, std::uint64_t seed) {
          const ImageDataset ds = gen_synth(num_classes, per_class, seed);
          py::dict d;
          d["images"] = images_array(ds);
          d["labels"] = py::array(py::cast(ds.labels));
          d["class_names"] = ds.class_names;
          return d;
        },
        py::arg("num_classes"), py::arg("per_class"), py::arg("seed") = 0);
  m.def("read_embeddings", [](const std::filesystem::path& p) { return embeddings_dict(read_embeddings(p)); },
        py::arg("path"));
  m.def("write_embeddings",
        [](const std::filesystem::path& p, const DoubleArray& views, const IntArray& labels,
           const std::vector<std::string>& names) { write_embeddings(p, embeddings_from(views, labels, names)); },
        py::arg("path"), py::arg("views"), py::arg("labels"), py::arg("class_names"),
        "Writes a MISDEMB1 file from a (count, k, d) array.");
  m.def("read_scores",
        [](const std::filesystem::path& p) {
          const ScoresFile f = read_scores(p);
          if (!f.binary) return scores_dict(f.predictions);
          std::vector<double> conf;
          std::vector<bool> ok;
          for (const auto& o : f.outcomes) {
            conf.push_back(o.confidence);
            ok.push_back(o.correct);
          }
          py::dict d;
          d["confidence"] = py::array(py::cast(conf));
          d["correct"] = py::array(py::cast(ok));
          return d;
        },
        py::arg("path"));
  m.def("write_scores",
        [](const std::filesystem::path& p, const DoubleArray& c, const IntArray& pr, const IntArray& l) {
          write_scores(p, predictions(c, pr, l));
        },
        py::arg("path"), py::arg("confidence"), py::arg("predicted"), py::arg("label"));

  // Training and evaluation
  py::class_<TrainedModel>(m, "Model")
      .def_static("load", &read_model, py::arg("path"))
      .def_static(
          "train",
          [](const std::filesystem::path& images, const py::kwargs& kw) {
            const TrainConfig cfg = train_config(kw);
            const auto backbone = Backbone::create({});
            py::gil_scoped_release release;
            if (is_embedding_file(images)) return train(backbone, shots_from_embeddings(read_embeddings(images), cfg), cfg);
            return train(backbone, shots_from_images(read_images(images), backbone->vision, cfg), cfg);
          },
          py::arg("images"),
          "Trains on a MISDIMG1 file, or a MISDEMB1 (.emb) file of crop embeddings. Keyword options: shots, epochs, lr, momentum, lambda_neg, "
          "lambda_orth, temperature, negative_prompts, crops, crop_schedule, seed, neg_mode, augment.")
      .def("save", [](const TrainedModel& self, const std::filesystem::path& p) { write_model(p, self); },
           py::arg("path"))
      .def_property_readonly("class_names", [](const TrainedModel& self) { return self.bank.class_names; })
      .def_property_readonly("embed_dim", [](const TrainedModel& self) { return self.backbone->config.embed_dim; })
      .def_property_readonly("loss_trace",
                             [](const TrainedModel& self) {
                               py::list out;
                               for (const auto& r : self.trace) {
                                 py::dict d;
                                 d["epoch"] = r.epoch;
                                 d["lr"] = r.lr;
                                 d["ce"] = r.loss.ce;
                                 d["neg"] = r.loss.neg;
                                 d["orth"] = r.loss.orth;
                                 d["total"] = r.loss.total;
                                 out.append(d);
                               }
                               return out;
                             })
      .def("predict",
           [](const TrainedModel& self, const Eigen::MatrixXd& features) {
             std::vector<double> conf;
             std::vector<int> pred;
             for (Eigen::Index i = 0; i < features.rows(); ++i) {
               if (features.cols() != self.backbone->config.embed_dim) {
                 throw CompatibilityError("feature width does not match the model");
               }
               const Prediction p = predict(features.row(i).transpose(), self.category_features,
                                            self.config.temperature);
               conf.push_back(p.confidence);
               pred.push_back(p.predicted);
             }
             return py::make_tuple(py::array(py::cast(conf)), py::array(py::cast(pred)));
           },
           py::arg("features"), "MSP confidence and predicted class for each row of an (n, d) array.")
      .def("evaluate",
           [](const TrainedModel& self, const std::filesystem::path& images) {
             const auto preds = is_embedding_file(images) ? evaluate_embeddings(self, read_embeddings(images))
                                                          : evaluate_images(self, read_images(images));
             py::dict d = scores_dict(preds);
             d["report"] = report_dict(full_report(preds));
             return d;
           },
           py::arg("images"));

  m.def("gradcheck",
        [](int trials, std::uint64_t seed) {
          GradcheckConfig cfg;
          cfg.trials = trials;
          cfg.seed = seed;
          GradcheckResult r;
          {
            py::gil_scoped_release release;
            r = run_gradcheck(cfg);
          }
          py::dict d;
          d["passed"] = r.passed;
          d["trials"] = r.trials;
          d["coordinates"] = r.coordinates;
          d["worst_relative_error"] = r.worst.relative_error;
          d["worst_parameter"] = r.worst.parameter;
          d["worst_term"] = r.worst.term;
          return d;
        },
        py::arg("trials") = 100, py::arg("seed") = 0);

  m.def("cli",
        [](std::vector<std::string> args) {
          args.insert(args.begin(), "misd");
          std::vector<const char*> argv;
          for (const auto& a : args) argv.push_back(a.c_str());
          std::ostringstream out, err;
          int code;
          {
            py::gil_scoped_release release;
            code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
          }
          return py::make_tuple(code, out.str(), err.str());
        },
        py::arg("args"), "Runs a misd subcommand in-process; returns (status, stdout, stderr).");
}
