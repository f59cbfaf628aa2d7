#include <pybind11/pybind11.h>

#include "mimea/special.hpp"

namespace py = pybind11;

PYBIND11_MODULE(_mimea, m) {
  m.doc() = "Multi-modal entity alignment core";
  m.def("log_beta", &mimea::log_beta, py::arg("a"), py::arg("b"));
  m.def("digamma", &mimea::digamma, py::arg("x"));
}
