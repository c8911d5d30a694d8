#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <map>
#include <sstream>

#include "semfuse/checkpoint.hpp"
#include "semfuse/commands.hpp"
#include "semfuse/errors.hpp"
#include "semfuse/image_io.hpp"
#include "semfuse/instrumentation.hpp"
#include "semfuse/metrics.hpp"
#include "semfuse/pipeline.hpp"
#include "semfuse/prior.hpp"
#include "semfuse/suite.hpp"
#include "semfuse/synthetic.hpp"

namespace py = pybind11;
using namespace semfuse;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

// (H, W) for gray, (H, W, 3) for color.
Image to_image(const Array& a) {
  if (a.ndim() == 2) {
    Image img(a.shape(0), a.shape(1));
    std::copy(a.data(), a.data() + a.size(), img.data.begin());
    return img;
  }
  if (a.ndim() == 3 && a.shape(2) == 3) {
    Image img(a.shape(0), a.shape(1), 3);
    auto v = a.unchecked<3>();
    for (py::ssize_t y = 0; y < a.shape(0); ++y) {
      for (py::ssize_t x = 0; x < a.shape(1); ++x) {
        for (py::ssize_t c = 0; c < 3; ++c) img.at(c, y, x) = v(y, x, c);
      }
    }
    return img;
  }
  throw ContractError("expected an (H, W) or (H, W, 3) array");
}

py::array_t<double> to_array(const Image& img) {
  if (img.channels == 1) {
    py::array_t<double> out({img.height, img.width});
    std::copy(img.data.begin(), img.data.end(), out.mutable_data());
    return out;
  }
  py::array_t<double> out({img.height, img.width, img.channels});
  auto v = out.mutable_unchecked<3>();
  for (std::size_t y = 0; y < img.height; ++y) {
    for (std::size_t x = 0; x < img.width; ++x) {
      for (std::size_t c = 0; c < img.channels; ++c) v(y, x, c) = img.at(c, y, x);
    }
  }
  return out;
}

}  // namespace

PYBIND11_MODULE(_semfuse, m) {
  m.doc() = "C++ core of the semfuse fusion toolkit";

  py::register_exception<ContractError>(m, "ContractError", PyExc_ValueError);
  py::register_exception<NumericalError>(m, "NumericalError", PyExc_ArithmeticError);
  py::register_exception<DimensionError>(m, "DimensionError", PyExc_ValueError);
  py::register_exception<ParseError>(m, "ParseError", PyExc_ValueError);
  py::register_exception<IoError>(m, "IoError", PyExc_OSError);

  m.def("entropy", [](const Array& a) { return metrics::entropy(to_image(a)); }, py::arg("image"));
  m.def("sd", [](const Array& a) { return metrics::sd(to_image(a)); }, py::arg("image"));
  m.def("scd", [](const Array& f, const Array& v, const Array& i) {
    return metrics::scd(to_image(f), to_image(v), to_image(i));
  }, py::arg("fused"), py::arg("vis"), py::arg("ir"));
  m.def("ms_ssim", [](const Array& a, const Array& b) { return metrics::ms_ssim(to_image(a), to_image(b)); },
        py::arg("a"), py::arg("b"));

  m.def("decode_pnm", [](const py::bytes& b) {
    const std::string s = b;
    return to_array(decode_pnm(std::vector<unsigned char>(s.begin(), s.end())));
  }, py::arg("data"));
  m.def("encode_pnm", [](const Array& a) {
    const auto bytes = encode_pnm(to_image(a));
    return py::bytes(reinterpret_cast<const char*>(bytes.data()), bytes.size());
  }, py::arg("image"));

  m.def("synthetic_pairs", [](std::size_t count, std::size_t size, std::uint64_t seed) {
    py::list out;
    for (const auto& p : make_synthetic_pairs(count, size, size, seed)) {
      out.append(py::make_tuple(p.stem, to_array(p.vis), to_array(p.ir)));
    }
    return out;
  }, py::arg("count"), py::arg("size") = 32, py::arg("seed") = 7);

  m.def("otsu_threshold", [](const Array& a) { return prior::otsu_threshold(to_image(a)); }, py::arg("image"));
  m.def("generate_masks", [](const Array& a, std::size_t top_k, std::size_t min_area) {
    const auto set = prior::generate_masks(to_image(a), prior::Modality::Vis, top_k, min_area);
    py::list out;
    for (std::size_t i = 0; i < set.size(); ++i) out.append(to_array(set.mask_image(i)));
    return out;
  }, py::arg("image"), py::arg("top_k") = 3, py::arg("min_area") = 8);

  m.def("fuse", [](const std::string& sub_checkpoint, const Array& vis, const Array& ir) {
    nets::SubNet sub;
    load_checkpoint(sub_checkpoint, sub.parameters(), nets::config_digest(sub.config_string()));
    return to_array(fuse_pair(sub, to_image(vis), to_image(ir)));
  }, py::arg("sub_checkpoint"), py::arg("vis"), py::arg("ir"));

  m.def("parameter_counts", [] {
    const nets::MainNet main;
    const nets::SubNet sub;
    return std::map<std::string, std::size_t>{{"main", nets::param_count(main.parameters())},
                                              {"sub", nets::param_count(sub.parameters())}};
  });

  m.def("gradcheck", [](const std::string& term) {
    suite::SuiteOptions opts;
    opts.term = term;
    const auto r = suite::run_gradient_suite(opts);
    std::map<std::string, double> worst;
    for (const auto& t : r.terms) worst[t.term] = t.worst_rel_error;
    return py::make_tuple(r.passed, worst);
  }, py::arg("term") = "all");

  m.def("run", [](const std::string& command, const std::map<std::string, std::string>& settings) {
    cli::RunConfig config;
    config.command = command;
    for (const auto& [k, v] : settings) cli::apply_setting(config, k, v);
    std::ostringstream out, err;
    const int code = cli::run_command(config, out, err);
    return py::make_tuple(code, out.str(), err.str());
  }, py::arg("command"), py::arg("settings") = std::map<std::string, std::string>{});

  m.def("teacher_path_calls", [] { return instrumentation::teacher_path_calls(); });
}
