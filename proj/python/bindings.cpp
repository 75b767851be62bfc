#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "dittryon/pipeline.hpp"

namespace py = pybind11;
using namespace dittryon;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

// (H, W, C) or (H, W) arrays <-> ImageGrid.
ImageGrid to_image(const Array& a) {
  if (a.ndim() != 2 && a.ndim() != 3) throw DimensionError("image array must be (H, W) or (H, W, C)");
  const std::size_t c = a.ndim() == 3 ? a.shape(2) : 1;
  ImageGrid img(c, a.shape(0), a.shape(1));
  std::copy(a.data(), a.data() + a.size(), img.values.begin());
  return img;
}

Array from_image(const ImageGrid& img) {
  Array out({img.height, img.width, img.channels});
  std::copy(img.values.begin(), img.values.end(), out.mutable_data());
  return out;
}

Tensor to_matrix(const Array& a) {
  if (a.ndim() != 2) throw DimensionError("feature array must be 2-D");
  return Tensor({static_cast<std::size_t>(a.shape(0)), static_cast<std::size_t>(a.shape(1))},
                std::vector<double>(a.data(), a.data() + a.size()));
}

Array from_matrix(const Tensor& t) {
  Array out({t.rows(), t.cols()});
  std::copy(t.values().begin(), t.values().end(), out.mutable_data());
  return out;
}

}  // namespace

PYBIND11_MODULE(_dittryon, m) {
  py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<DimensionError>(m, "DimensionError", PyExc_ValueError);

  py::class_<RunConfig>(m, "RunConfig")
      .def_readonly("seed", &RunConfig::seed)
      .def_readonly("data_n", &RunConfig::data_n)
      .def_readonly("train_steps", &RunConfig::train_steps)
      .def_property_readonly("width", [](const RunConfig& c) { return c.model.width; })
      .def_property_readonly("image_size", [](const RunConfig& c) { return c.model.image_size; });
  m.def("load_config", [](const std::filesystem::path& p) { return load_config(p); });
  m.def("config_hash", [](const RunConfig& c) { return c.hash(); });

  py::class_<LatentCodec>(m, "LatentCodec")
      .def(py::init<std::size_t, std::uint64_t>(), py::arg("patch_size") = 4, py::arg("seed") = 1234)
      .def("encode", [](const LatentCodec& c, const Array& img) { return from_matrix(c.encode(to_image(img)).data); })
      .def("decode", [](const LatentCodec& c, const Array& tokens, std::size_t channels, std::size_t h,
                        std::size_t w) { return from_image(c.decode(LatentTokens{to_matrix(tokens)}, channels, h, w)); });

  m.def("ssim", [](const Array& a, const Array& b) { return ssim(to_image(a), to_image(b)); });
  m.def("frechet_distance", [](const Array& a, const Array& b) { return frechet_distance(to_matrix(a), to_matrix(b)); });
  m.def("kernel_mmd", [](const Array& a, const Array& b) { return kernel_mmd(to_matrix(a), to_matrix(b)); });
  m.def("ordering_holds", &ordering_holds);
  m.def("ablation_variants", [] {
    std::vector<std::string> names;
    for (const auto& [name, flags] : ablation_variants()) names.push_back(name);
    return names;
  });

  m.def("render_garment", [](std::uint64_t seed, std::size_t size) {
    return from_image(render_garment(random_spec(seed, size), size));
  });
  m.def("make_caption", [](std::uint64_t seed, std::size_t size, bool detailed) {
    return make_caption(random_spec(seed, size), detailed ? CaptionDetail::detailed : CaptionDetail::brief);
  });

  m.def("cmd_dataset", [](const RunConfig& c, const std::filesystem::path& out) {
    const auto r = cmd_dataset(c, out);
    return py::make_tuple(r.root, r.hash);
  });
  m.def("cmd_train", [](const RunConfig& c, const std::filesystem::path& out) { return cmd_train(c, out).checkpoint; });
  m.def("cmd_sample", &cmd_sample, py::arg("config"), py::arg("checkpoint"), py::arg("ids"), py::arg("out"),
        py::arg("split") = "test_paired");
  m.def("cmd_eval",
        [](const RunConfig& c, const std::filesystem::path& gen, const std::filesystem::path& ref,
           const std::string& setting, const std::filesystem::path& out) {
          return cmd_eval(c, gen, ref, setting, out).to_json().dump();
        });
}
