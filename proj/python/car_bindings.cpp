#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "car/analysis.hpp"
#include "car/cli.hpp"
#include "car/confusion.hpp"
#include "car/data.hpp"
#include "car/error.hpp"
#include "car/experiment.hpp"
#include "car/model.hpp"
#include "car/spectral.hpp"

namespace py = pybind11;
using namespace car;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Matrix to_matrix(const Array& a) {
  if (a.ndim() != 2) throw DimensionError("expected a 2-D array");
  Matrix m(static_cast<std::size_t>(a.shape(0)), static_cast<std::size_t>(a.shape(1)));
  std::copy(a.data(), a.data() + a.size(), m.values().begin());
  return m;
}

Array to_array(const Matrix& m) {
  Array a({m.rows(), m.cols()});
  std::copy(m.values().begin(), m.values().end(), a.mutable_data());
  return a;
}

py::dict dataset_dict(const data::LabeledDataset& ds) {
  py::dict d;
  d["features"] = to_array(ds.features);
  d["labels"] = ds.labels;
  d["k"] = ds.k;
  d["class_counts"] = ds.class_counts;
  return d;
}

data::LabeledDataset dataset_from(const Array& x, const std::vector<int>& y, int k) {
  data::LabeledDataset ds;
  ds.features = to_matrix(x);
  ds.labels = y;
  ds.k = k;
  ds.refresh_statistics();
  return ds;
}

}  // namespace

PYBIND11_MODULE(_carlab, m) {
  m.doc() = "Confusion-aware spectral regularization lab";

  py::register_exception<Error>(m, "CarError", PyExc_RuntimeError);

  m.def(
      "synth",
      [](int k, std::size_t d, std::size_t n_max, double imbalance_factor, double cluster_spread,
         std::uint64_t seed) {
        data::SynthParams p;
        p.k = k;
        p.d = d;
        p.n_max = n_max;
        p.imbalance_factor = imbalance_factor;
        p.cluster_spread = cluster_spread;
        p.seed = seed;
        return dataset_dict(data::synth_longtail_gaussians(p));
      },
      py::arg("k") = 10, py::arg("d") = 2, py::arg("n_max") = 500, py::arg("imbalance_factor") = 100.0,
      py::arg("cluster_spread") = 1.0, py::arg("seed") = 0);

  m.def(
      "longtail_counts",
      [](int k, std::size_t n_max, double imbalance_factor) {
        return data::longtail_profile(k, n_max, imbalance_factor).counts;
      },
      py::arg("k"), py::arg("n_max"), py::arg("imbalance_factor"));

  m.def(
      "power_iteration",
      [](const Array& a, int max_iters, double tol) {
        const auto t = spectral::power_iteration(to_matrix(a), max_iters, tol);
        py::dict d;
        d["sigma"] = t.sigma;
        d["u"] = t.u;
        d["v"] = t.v;
        d["iterations"] = t.iterations;
        d["converged"] = t.converged;
        return d;
      },
      py::arg("a"), py::arg("max_iters") = 100, py::arg("tol") = 1e-9);

  m.def(
      "spectral_norm_grad",
      [](const Array& a) {
        ad::Graph g;
        auto leaf = g.leaf(to_matrix(a));
        auto s = spectral::spectral_norm(leaf);
        const double value = s.item();
        return py::make_tuple(value, to_array(g.backward(s)[leaf]));
      },
      py::arg("a"), "Spectral norm and its gradient u vᵀ.");

  m.def("svd_oracle", [](const Array& a) { return spectral::svd_oracle(to_matrix(a)); }, py::arg("a"));
  m.def("l1_operator_norm", [](const Array& a) { return spectral::l1_operator_norm(to_matrix(a)); },
        py::arg("a"));

  m.def(
      "soft_confusion",
      [](const Array& logits, const std::vector<int>& labels, double gamma, int k) {
        ad::Graph g;
        return to_array(confusion::soft_confusion(g.constant(to_matrix(logits)), labels, gamma, k)
                            .matrix.value());
      },
      py::arg("logits"), py::arg("labels"), py::arg("gamma"), py::arg("k"));

  m.def(
      "hard_margin_confusion",
      [](const Array& logits, const std::vector<int>& labels, double gamma, int k) {
        return to_array(confusion::hard_margin_confusion(to_matrix(logits), labels, gamma, k).entries);
      },
      py::arg("logits"), py::arg("labels"), py::arg("gamma"), py::arg("k"));

  m.def(
      "class_weights",
      [](const std::vector<std::size_t>& counts, double r0) {
        return confusion::class_weights_from_counts(counts, r0).lambdas;
      },
      py::arg("counts"), py::arg("r0") = 0.2);

  m.def(
      "evaluate_predictions",
      [](const std::vector<int>& predictions, const std::vector<int>& labels, int k,
         const std::vector<double>& lambdas) {
        confusion::ClassWeighting w;
        w.lambdas = lambdas;
        return analysis::to_json(analysis::evaluate_predictions(predictions, labels, k, w)).dump();
      },
      py::arg("predictions"), py::arg("labels"), py::arg("k"), py::arg("lambdas"));

  m.def(
      "psi_identity_network",
      [](std::size_t depth, std::size_t width, double b_max) {
        std::vector<model::LayerNorms> norms(depth, {1.0, std::sqrt(static_cast<double>(width))});
        return analysis::psi(norms, b_max, depth, width);
      },
      py::arg("depth"), py::arg("width"), py::arg("b_max") = 1.0);

  m.def("complexity_term", &analysis::complexity_term, py::arg("k"), py::arg("m_min"),
        py::arg("gamma"), py::arg("delta"), py::arg("psi"), py::arg("depth"));

  m.def(
      "run_experiment",
      [](const std::string& spec_json) {
        const auto spec = experiment::spec_from_json(nlohmann::ordered_json::parse(spec_json));
        py::gil_scoped_release release;
        return experiment::run_experiment(spec).summary.dump();
      },
      py::arg("spec_json"), "Trains and evaluates in memory; returns the summary as JSON.");

  m.def(
      "evaluate_model",
      [](const std::string& checkpoint, const Array& x, const std::vector<int>& y, int k, double r0) {
        const auto model = model::load_checkpoint(checkpoint);
        const auto ds = dataset_from(x, y, k);
        const auto w = confusion::class_weights_from_counts(ds.class_counts, r0);
        return analysis::to_json(analysis::evaluate(model, ds, w)).dump();
      },
      py::arg("checkpoint"), py::arg("features"), py::arg("labels"), py::arg("k"), py::arg("r0") = 0.2);

  m.def(
      "main",
      [](const std::vector<std::string>& args) {
        std::ostringstream out, err;
        int code = 0;
        {
          py::gil_scoped_release release;
          code = cli::run(args, out, err);
        }
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"), "Runs the car command line in-process; returns (exit_code, stdout, stderr).");
}
