#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "pcam/cli.hpp"
#include "pcam/config.hpp"
#include "pcam/numerics.hpp"
#include "pcam/pf_loss.hpp"
#include "pcam/refinement.hpp"
#include "pcam/rollout.hpp"
#include "pcam/synth_data.hpp"

namespace py = pybind11;
using namespace pcam;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Matrix to_matrix(const Array& a) {
  if (a.ndim() != 2) throw py::value_error("expected a 2-d array");
  const auto r = static_cast<std::size_t>(a.shape(0)), c = static_cast<std::size_t>(a.shape(1));
  return Matrix(r, c, std::vector<double>(a.data(), a.data() + r * c));
}

Array to_array(const Matrix& m) {
  Array out({m.rows(), m.cols()});
  std::copy(m.values().begin(), m.values().end(), out.mutable_data());
  return out;
}

PfOptions pf_options(const std::string& sign, const std::string& center) {
  PfOptions o;
  if (sign == "literal") o.sign = PfSign::Literal;
  else if (sign != "pulling") throw py::value_error("sign must be 'pulling' or 'literal'");
  if (center == "normalized") o.center = CenterForm::Normalized;
  else if (center != "literal") throw py::value_error("center must be 'literal' or 'normalized'");
  return o;
}

std::vector<Matrix> to_matrices(const std::vector<Array>& maps) {
  std::vector<Matrix> out;
  for (const auto& m : maps) out.push_back(to_matrix(m));
  return out;
}

}  // namespace

PYBIND11_MODULE(pcam, m) {
  m.doc() = "Attention-guided domain adaptation primitives";

  py::register_exception<ContractError>(m, "ContractError", PyExc_ValueError);
  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);

  py::class_<BoundingBox>(m, "BoundingBox")
      .def_readonly("col_min", &BoundingBox::col_min)
      .def_readonly("col_max", &BoundingBox::col_max)
      .def_readonly("row_min", &BoundingBox::row_min)
      .def_readonly("row_max", &BoundingBox::row_max)
      .def("cells", &BoundingBox::cells)
      .def("__eq__", [](const BoundingBox& a, const BoundingBox& b) { return a == b; })
      .def("__repr__", [](const BoundingBox& b) {
        return "BoundingBox(rows " + std::to_string(b.row_min) + ".." + std::to_string(b.row_max) + ", cols " +
               std::to_string(b.col_min) + ".." + std::to_string(b.col_max) + ")";
      });

  m.def(
      "box_identify",
      [](const Array& grid, double beta) {
        const BoxResult r = box_identify(to_matrix(grid), beta);
        return py::make_tuple(r.box, r.fallback);
      },
      py::arg("grid"), py::arg("beta"), "Bounding box of cells above beta; returns (box, fallback).");

  m.def(
      "box_interpolate",
      [](const Array& grid, const BoundingBox& box, int out_side) {
        const Matrix g = to_matrix(grid);
        if (g.rows() != g.cols()) throw py::value_error("expected a square grid");
        // one channel: cells become rows of a (G*G) x 1 feature matrix
        const Matrix cells(g.size(), 1, std::vector<double>(g.values().begin(), g.values().end()));
        const Matrix out = box_interpolate(cells, static_cast<int>(g.rows()), box, out_side);
        const auto side = static_cast<std::size_t>(out_side);
        return to_array(Matrix(side, side, std::vector<double>(out.values().begin(), out.values().end())));
      },
      py::arg("grid"), py::arg("box"), py::arg("out_side"), "Crops box from a square grid and resamples it.");

  m.def(
      "pf_loss",
      [](const std::vector<Array>& maps, const std::string& sign, const std::string& center) {
        return pf_loss(to_matrices(maps), pf_options(sign, center));
      },
      py::arg("maps"), py::arg("sign") = "pulling", py::arg("center") = "literal");

  m.def(
      "pf_loss_grad",
      [](const std::vector<Array>& maps, const std::string& sign, const std::string& center) {
        std::vector<Array> out;
        for (const auto& g : pf_loss_grad(to_matrices(maps), pf_options(sign, center))) out.push_back(to_array(g));
        return out;
      },
      py::arg("maps"), py::arg("sign") = "pulling", py::arg("center") = "literal");

  m.def(
      "rollout_term",
      [](const Array& source_patches, const Array& target_patches) {
        return to_array(rollout_term(to_matrix(source_patches), to_matrix(target_patches)));
      },
      py::arg("source_patches"), py::arg("target_patches"));

  m.def("pearson_correlation", &pearson_correlation, py::arg("x"), py::arg("y"));
  m.def("config_keys", &config_keys);
  m.def("run_cli", &run_cli, py::arg("args"), py::call_guard<py::gil_scoped_release>(),
        "Runs the command-line front end in-process and returns its exit code.");
}
