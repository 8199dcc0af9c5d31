#include <pybind11/pybind11.h>

namespace picotab {
void bind_core(pybind11::module_& m);
}

PYBIND11_MODULE(_core, m) {
    m.doc() = "picotab: in-context tabular prediction";
    picotab::bind_core(m);
}
