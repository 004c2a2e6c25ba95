#include "sparse_lab/ensemble.hpp"
#include "sparse_lab/errors.hpp"
#include "sparse_lab/experiments.hpp"
#include "sparse_lab/formalcalc.hpp"
#include "sparse_lab/scmeasure.hpp"
#include "sparse_lab/spectra.hpp"

#include <nlohmann/json.hpp>
#include <pybind11/complex.h>
#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

namespace py = pybind11;
using namespace sparse_lab;

namespace {

MatrixView parse_view(const std::string& view) {
  if (view == "H") return MatrixView::centred;
  if (view == "A") return MatrixView::shifted;
  throw DomainError("view must be 'H' or 'A'");
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Sparse random matrix laboratory";

  py::register_exception<Error>(m, "Error");
  py::register_exception<ConfigError>(m, "ConfigError");
  py::register_exception<ContinuationError>(m, "ContinuationError");

  py::class_<CumulantModel>(m, "CumulantModel")
      .def_property_readonly("N", &CumulantModel::N)
      .def_property_readonly("q", &CumulantModel::q)
      .def_property_readonly("beta", &CumulantModel::beta)
      .def_property_readonly("p", &CumulantModel::p)
      .def_property_readonly("f", &CumulantModel::f)
      .def("kappa", &CumulantModel::kappa)
      .def("sigma", [](const CumulantModel& model) { return compute_Sigma(model).exact; });

  m.def("er_model", [](std::int64_t n, double p, bool loops) { return make_er_model(n, p, ModelOptions{loops, 0}); },
        py::arg("n"), py::arg("p"), py::arg("loops") = true);
  m.def("er_p_for_beta", &er_p_for_beta);
  m.def("rademacher_model", [](std::int64_t n, double q) { return make_rademacher_model(n, q); });
  m.def("custom_model", &make_custom_model, py::arg("n"), py::arg("beta"), py::arg("kappas_from_2"));

  m.def(
      "sample_dense",
      [](const CumulantModel& model, std::uint64_t seed, const std::string& view) {
        return sample(model, seed).dense(parse_view(view));
      },
      py::arg("model"), py::arg("seed"), py::arg("view") = "H");
  m.def("sample_Z", [](const CumulantModel& model, std::uint64_t seed) { return compute_Z(sample(model, seed)); });
  m.def(
      "eigenvalues",
      [](const CumulantModel& model, std::uint64_t seed, const std::string& view) {
        return full_spectrum(sample(model, seed), parse_view(view)).eigenvalues;
      },
      py::arg("model"), py::arg("seed"), py::arg("view") = "H");

  py::class_<SelfConsistentPolynomial>(m, "SelfConsistentPolynomial")
      .def_readonly("beta", &SelfConsistentPolynomial::beta)
      .def_readonly("q", &SelfConsistentPolynomial::q)
      .def_readonly("degree", &SelfConsistentPolynomial::degree)
      .def_readonly("effective_degree", &SelfConsistentPolynomial::effective_degree)
      .def_readonly("a", &SelfConsistentPolynomial::a)
      .def("evaluate", &SelfConsistentPolynomial::evaluate)
      .def("to_json", [](const SelfConsistentPolynomial& p) { return to_json(p).dump(); });
  m.def("build_P0", &build_P0);
  m.def("make_polynomial", &make_polynomial);

  m.def("solve_m", [](const SelfConsistentPolynomial& p, double Z, cplx z) { return solve_m(p, Z, z); },
        py::arg("poly"), py::arg("Z"), py::arg("z"));
  m.def("find_edge", &find_edge);
  py::class_<SpectralMeasure>(m, "SpectralMeasure")
      .def(py::init([](const SelfConsistentPolynomial& p, double Z) { return SpectralMeasure(p, Z); }))
      .def_property_readonly("edge_L", &SpectralMeasure::edge_L)
      .def_property_readonly("mass", &SpectralMeasure::mass)
      .def("cdf", &SpectralMeasure::cdf)
      .def("quantile", &SpectralMeasure::quantile)
      .def("density", [](const SpectralMeasure& s, double E) { return density(s, E); });
  m.def("semicircle_quantile", &semicircle_quantile);

  m.def("ks_test", [](std::vector<double> x) {
    const auto r = ks_test(std::move(x));
    return py::make_tuple(r.statistic, r.p_value);
  });
  m.def("delta_exponent", &delta_exponent);
  m.def(
      "run_experiment",
      [](const std::string& toml_text, int workers) {
        const auto cfg = parse_config(toml_text);
        py::gil_scoped_release release;
        return stats_json(run_experiment(cfg, RunOptions{workers, 1.0}), "").dump();
      },
      py::arg("config_toml"), py::arg("workers") = 1);
}
