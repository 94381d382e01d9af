#include <pybind11/eigen.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "attnscope/classifier.hpp"
#include "attnscope/encoder.hpp"
#include "attnscope/interchange.hpp"
#include "attnscope/metrics.hpp"
#include "attnscope/patterns.hpp"
#include "attnscope/report.hpp"
#include "attnscope/verify.hpp"

namespace py = pybind11;
using namespace attnscope;

// Structured results cross the boundary as JSON text; the Python package
// turns them into dicts.
namespace {

nlohmann::json parse(const std::string& text) { return text.empty() ? nlohmann::json::object() : nlohmann::json::parse(text); }

py::array_t<float> tensor_to_array(const TensorF32& t) {
  std::vector<py::ssize_t> shape(t.dims.begin(), t.dims.end());
  py::array_t<float> out(shape);
  std::copy(t.data.begin(), t.data.end(), out.mutable_data());
  return out;
}

TensorF32 array_to_tensor(const py::array_t<float, py::array::c_style | py::array::forcecast>& a) {
  std::vector<std::size_t> dims(a.shape(), a.shape() + a.ndim());
  return TensorF32(dims, std::vector<float>(a.data(), a.data() + a.size()));
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "attnscope native core";

  auto base = py::register_exception<Error>(m, "Error");
  py::register_exception<FormatError>(m, "FormatError", base.ptr());
  py::register_exception<PersistenceError>(m, "PersistenceError", base.ptr());
  py::register_exception<ValidationError>(m, "ValidationError", base.ptr());
  py::register_exception<DegenerateInputError>(m, "DegenerateInputError", base.ptr());
  py::register_exception<ShapeError>(m, "ShapeError", base.ptr());
  py::register_exception<VocabularyError>(m, "VocabularyError", base.ptr());
  py::register_exception<UnsupportedError>(m, "UnsupportedError", base.ptr());
  py::register_exception<InvalidPatternError>(m, "InvalidPatternError", base.ptr());

  m.def("read_npy", [](const std::filesystem::path& p) { return tensor_to_array(read_tensor(p)); });
  m.def("write_npy", [](const py::array_t<float, py::array::c_style | py::array::forcecast>& a,
                        const std::filesystem::path& p) { write_tensor(array_to_tensor(a), p); });

  m.def("softmax_rows", &softmax_rows);
  m.def("layer_norm_rows", &layer_norm_rows);
  m.def("cone_index", &cone_index);
  m.def("row_entropy", [](const Matrix& s) {
    const auto e = row_entropy(s);
    return py::make_tuple(e.per_row, e.mean, e.normalized_mean);
  });
  m.def("singular_values", [](const Matrix& y) { return singular_spectrum(y).values; });
  m.def("numeric_rank", &numeric_rank, py::arg("y"), py::arg("rtol") = 1e-9);
  m.def("lilliefors_critical", &lilliefors_critical);
  m.def("lilliefors", [](const std::vector<double>& x) {
    const auto r = lilliefors(x);
    return py::make_tuple(r.statistic, r.critical, r.reject);
  });

  m.def("generate", [](const std::string& spec) { return generate(parse(spec).get<PatternSpec>()); });
  m.def("classify", [](const Matrix& s, const std::string& params) {
    return nlohmann::json(classify(s, parse(params).get<ClassifierParams>())).dump();
  });

  m.def("encode", [](const std::string& config, const std::filesystem::path& out,
                     const std::optional<std::vector<std::string>>& tokens) {
    const EncoderConfig c = config_from_json(parse(config));
    const RunTrace run = tokens ? encode(*tokens, c) : encode_count(c.n, c);
    save_run(run, out);
  }, py::arg("config"), py::arg("out"), py::arg("tokens") = py::none());

  m.def("metrics", [](const std::filesystem::path& run_dir, const std::string& selection,
                      const std::optional<std::filesystem::path>& out) {
    const auto r = compute_metrics(load_run(run_dir), parse_metric_selection(selection));
    if (out) write_metrics(r, *out);
    return to_json(r).dump();
  }, py::arg("run_dir"), py::arg("selection") = "all", py::arg("out") = py::none());

  m.def("verify", [](const std::filesystem::path& run_dir) {
    return to_json(verify_run(load_run(run_dir, {.strict = false})))
        .dump();
  });
}
