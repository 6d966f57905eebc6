#include <pybind11/functional.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "iste/checkpoint.hpp"
#include "iste/coords.hpp"
#include "iste/data.hpp"
#include "iste/evalkit.hpp"
#include "iste/image.hpp"
#include "iste/errors.hpp"
#include "iste/model.hpp"
#include "iste/train.hpp"

namespace py = pybind11;
using namespace iste;

namespace {

using Array = py::array_t<float, py::array::c_style | py::array::forcecast>;

Image to_image(const Array& a) {
    if (a.ndim() != 3 || a.shape(2) != 3) throw ShapeError("expected an (H, W, 3) array");
    const auto h = static_cast<std::size_t>(a.shape(0)), w = static_cast<std::size_t>(a.shape(1));
    return Image({h, w, 3}, std::vector<float>(a.data(), a.data() + h * w * 3));
}

Array to_array(const Image& img) {
    Array out({img.dim(0), img.dim(1), img.dim(2)});
    std::copy(img.vec().begin(), img.vec().end(), out.mutable_data());
    return out;
}

std::vector<Image> to_images(const std::vector<Array>& arrays) {
    std::vector<Image> out;
    for (const auto& a : arrays) out.push_back(to_image(a));
    return out;
}

EvalOptions eval_options(const std::vector<double>& scales, std::uint64_t seed) {
    EvalOptions o;
    o.scales = scales;
    o.seed = seed;
    return o;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Arbitrary-scale implicit super-resolution";

    py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
    py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
    py::register_exception<RangeError>(m, "RangeError", PyExc_ValueError);
    py::register_exception<CheckpointError>(m, "CheckpointError", PyExc_RuntimeError);
    py::register_exception<NonFiniteError>(m, "NonFiniteError", PyExc_ArithmeticError);
    py::register_exception<IoError>(m, "IoError", PyExc_OSError);

    m.attr("MAX_SCALE") = kMaxInferenceScale;

    m.def("load_png", [](const std::filesystem::path& p) { return to_array(load_png(p)); }, py::arg("path"));
    m.def("save_png", [](const Array& a, const std::filesystem::path& p) { save_png(to_image(a), p); }, py::arg("image"),
          py::arg("path"));
    m.def("scaled_extent", &scaled_extent, py::arg("n"), py::arg("scale"));
    m.def("bicubic_upscale", [](const Array& a, double s) { return to_array(bicubic_upscale(to_image(a), s)); },
          py::arg("image"), py::arg("scale"));
    m.def("psnr", [](const Array& p, const Array& g) { return psnr(to_image(p), to_image(g)); }, py::arg("pred"),
          py::arg("gt"));
    m.def("ssim", [](const Array& p, const Array& g) { return ssim(to_image(p), to_image(g)); }, py::arg("pred"),
          py::arg("gt"));

    m.def("synth_corpus", [](std::size_t n, std::size_t size, std::uint64_t seed) {
              std::vector<Array> out;
              for (const auto& img : synth_corpus(n, size, seed)) out.push_back(to_array(img));
              return out;
          }, py::arg("n"), py::arg("size") = 192, py::arg("seed") = 0);
    m.def("make_eval_pair", [](const Array& img, double s, std::uint64_t seed) {
              const EvalPair p = make_eval_pair(to_image(img), s, DegradeConfig{}, seed);
              return py::make_tuple(to_array(p.lr), to_array(p.hr));
          }, py::arg("image"), py::arg("scale"), py::arg("seed") = 0,
          "Crop, downscale and blur; returns (lr, hr).");

    py::class_<IsteModel<float>>(m, "Model")
        .def_static("create", [](const std::string& cfg) { return IsteModel<float>::create(config_from_json(cfg)); },
                    py::arg("config_json") = "{}")
        .def_static("load", &IsteModel<float>::load, py::arg("path"))
        .def("save", &IsteModel<float>::save, py::arg("path"))
        .def_property_readonly("config_json", [](const IsteModel<float>& mdl) { return config_to_json(mdl.config()); })
        .def_property_readonly("parameter_count", [](const IsteModel<float>& mdl) { return mdl.params().count(); })
        .def("predict", [](const IsteModel<float>& mdl, const Array& img, double s) {
                 Image in = to_image(img);
                 Image out;
                 {
                     py::gil_scoped_release release;
                     out = mdl.predict_image(in, s);
                 }
                 return to_array(out);
             }, py::arg("image"), py::arg("scale"));

    m.def("default_train_config", [] { return train_config_to_json(TrainConfig{}); });
    m.def("train", [](const std::string& cfg_json, const std::vector<Array>& images, const std::filesystem::path& out,
                      std::optional<std::function<void(std::size_t, double)>> on_step) {
              const TrainConfig cfg = train_config_from_json(cfg_json);
              const std::vector<Image> corpus = to_images(images);
              std::function<void(const LossRecord&)> cb;
              if (on_step) {
                  cb = [&](const LossRecord& r) {
                      py::gil_scoped_acquire acquire;
                      (*on_step)(r.step, r.loss);
                  };
              }
              std::optional<TrainResult> r;
              {
                  py::gil_scoped_release release;
                  r.emplace(train(cfg, corpus, out, cb));
              }
              std::vector<double> losses;
              for (const auto& rec : r->losses) losses.push_back(rec.loss);
              return py::make_tuple(std::move(r->model), r->checkpoint, losses);
          }, py::arg("config_json"), py::arg("images"), py::arg("out_dir"), py::arg("on_step") = py::none(),
          "Returns (model, checkpoint_path, losses).");
    m.def("evaluate", [](const std::filesystem::path& ckpt, const std::vector<Array>& images,
                         const std::vector<double>& scales, std::uint64_t seed) {
              return evaluate(ckpt, to_images(images), eval_options(scales, seed)).csv();
          }, py::arg("checkpoint"), py::arg("images"), py::arg("scales") = std::vector<double>{2, 3, 4},
          py::arg("seed") = 0, "Report as CSV text: scale,metric,value,n_images,checkpoint_hash.");
    m.def("evaluate_bicubic", [](const std::vector<Array>& images, const std::vector<double>& scales,
                                 std::uint64_t seed) {
              return evaluate_bicubic(to_images(images), eval_options(scales, seed)).csv();
          }, py::arg("images"), py::arg("scales") = std::vector<double>{2, 3, 4}, py::arg("seed") = 0);
    m.def("file_hash", [](const std::filesystem::path& p) { return nn::hash_hex(nn::file_hash(p)); }, py::arg("path"));
}
