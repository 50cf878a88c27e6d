#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cstring>

#include "isda/checkpoint.hpp"
#include "isda/config.hpp"
#include "isda/dataset.hpp"
#include "isda/matching.hpp"
#include "isda/trainer.hpp"

namespace py = pybind11;
using namespace isda;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const Array& a) {
    std::vector<int> shape;
    for (py::ssize_t i = 0; i < a.ndim(); ++i) shape.push_back(static_cast<int>(a.shape(i)));
    std::vector<real> data(a.data(), a.data() + a.size());
    return Tensor::from_data(std::move(shape), std::move(data));
}

py::array from_tensor(const Tensor& t) {
    std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
    py::array_t<double> out(shape);
    std::memcpy(out.mutable_data(), t.data(), sizeof(double) * static_cast<size_t>(t.size()));
    return out;
}

std::vector<std::uint8_t> mask_from_array(const py::array_t<bool, py::array::c_style | py::array::forcecast>& m,
                                          int& h, int& w) {
    if (m.ndim() != 2) throw std::invalid_argument("mask must be 2-D");
    h = static_cast<int>(m.shape(0));
    w = static_cast<int>(m.shape(1));
    std::vector<std::uint8_t> out(static_cast<size_t>(h) * w);
    for (py::ssize_t i = 0; i < m.size(); ++i) out[static_cast<size_t>(i)] = m.data()[i] ? 1 : 0;
    return out;
}

py::array mask_to_array(const std::vector<std::uint8_t>& mask, int h, int w) {
    py::array_t<bool> out({h, w});
    for (size_t i = 0; i < mask.size(); ++i) out.mutable_data()[i] = mask[i] != 0;
    return out;
}

ModelConfig config_from_kwargs(int width, int base_width, int num_queries, int mfr_stride,
                               bool mfr_positions, bool kernel_positions) {
    ModelConfig cfg;
    cfg.width = width;
    cfg.base_width = base_width;
    cfg.num_queries = num_queries;
    cfg.mfr_stride = mfr_stride;
    cfg.mfr_positions = mfr_positions;
    cfg.kernel_positions = kernel_positions;
    cfg.validate();
    return cfg;
}

}  // namespace

PYBIND11_MODULE(_isda, m) {
    m.doc() = "ISDA instance segmentation core";

    m.def(
        "conv2d",
        [](const Array& input, const Array& kernel, int padding, int stride) {
            return from_tensor(conv2d(to_tensor(input), to_tensor(kernel), padding, stride));
        },
        py::arg("input"), py::arg("kernel"), py::arg("padding") = 1, py::arg("stride") = 1);

    m.def(
        "group_norm",
        [](const Array& x, int groups, const Array& gamma, const Array& beta, double eps) {
            return from_tensor(group_norm(to_tensor(x), groups, to_tensor(gamma),
                                          to_tensor(beta), eps));
        },
        py::arg("x"), py::arg("groups"), py::arg("gamma"), py::arg("beta"),
        py::arg("eps") = 1e-5);

    m.def(
        "bilinear_sample",
        [](const Array& value, const Array& points) {
            return from_tensor(bilinear_sample(to_tensor(value), to_tensor(points)));
        },
        py::arg("value"), py::arg("points"));

    m.def(
        "bilinear_upsample2x",
        [](const Array& x) { return from_tensor(bilinear_upsample2x(to_tensor(x))); },
        py::arg("x"));

    m.def(
        "coord_channels", [](int h, int w) { return from_tensor(coord_channels(h, w)); },
        py::arg("h"), py::arg("w"));

    m.def(
        "soft_mask_iou",
        [](const Array& pred, const Array& gt) {
            return soft_mask_iou(to_tensor(pred), to_tensor(gt)).item();
        },
        py::arg("pred"), py::arg("gt"));

    m.def(
        "hungarian",
        [](const Array& cost) {
            if (cost.ndim() != 2) throw std::invalid_argument("cost must be 2-D");
            const int g = static_cast<int>(cost.shape(0)), n = static_cast<int>(cost.shape(1));
            std::vector<std::vector<real>> c(static_cast<size_t>(g),
                                             std::vector<real>(static_cast<size_t>(n)));
            for (int i = 0; i < g; ++i)
                for (int j = 0; j < n; ++j) c[static_cast<size_t>(i)][static_cast<size_t>(j)] = cost.data()[i * n + j];
            const Assignment a = hungarian(c, n);
            return a.pairs;
        },
        py::arg("cost"), "Minimum-cost assignment; returns (row, column) pairs.");

    m.def(
        "rle_encode",
        [](const py::array_t<bool, py::array::c_style | py::array::forcecast>& mask) {
            int h = 0, w = 0;
            auto data = mask_from_array(mask, h, w);
            return rle_encode(data, h, w);
        },
        py::arg("mask"));

    m.def(
        "rle_decode",
        [](const std::string& rle, int h, int w) {
            return mask_to_array(rle_decode(rle, h, w), h, w);
        },
        py::arg("rle"), py::arg("h"), py::arg("w"));

    py::class_<PredictionInstance>(m, "Prediction")
        .def_readonly("class_id", &PredictionInstance::class_id)
        .def_readonly("confidence", &PredictionInstance::confidence)
        .def_property_readonly(
            "mask", [](const PredictionInstance& p) { return mask_to_array(p.mask, p.h, p.w); })
        .def("__repr__", [](const PredictionInstance& p) {
            return "<Prediction class_id=" + std::to_string(p.class_id) +
                   " confidence=" + std::to_string(p.confidence) + ">";
        });

    py::class_<IsdaModel>(m, "Model")
        .def(py::init([](std::uint64_t seed, int width, int base_width, int num_queries,
                         int mfr_stride, bool mfr_positions, bool kernel_positions) {
                 return new IsdaModel(
                     config_from_kwargs(width, base_width, num_queries, mfr_stride,
                                        mfr_positions, kernel_positions),
                     seed);
             }),
             py::arg("seed") = 1, py::arg("width") = 32, py::arg("base_width") = 16,
             py::arg("num_queries") = 16, py::arg("mfr_stride") = 4,
             py::arg("mfr_positions") = true, py::arg("kernel_positions") = true)
        .def("load_checkpoint",
             [](IsdaModel& m2, const std::string& path) { load_checkpoint(path, m2.params()); })
        .def("save_checkpoint",
             [](IsdaModel& m2, const std::string& path) { save_checkpoint(path, m2.params()); })
        .def("num_parameters", [](const IsdaModel& m2) { return m2.params().total_size(); })
        .def(
            "predict",
            [](const IsdaModel& m2, const Array& image, double threshold) {
                return m2.predict(to_tensor(image), threshold);
            },
            py::arg("image"), py::arg("threshold") = 0.5,
            "image: [3,H,W] float array in [0,1], H and W divisible by 32");

    m.def(
        "generate_scene",
        [](std::uint64_t seed, int image_id, int image_size, bool twin) {
            GenConfig gen;
            gen.image_size = image_size;
            gen.twin = twin;
            Scene s = generate_scene(seed, image_id, gen);
            py::array_t<double> img({3, s.h, s.w});
            Tensor t = s.image();
            std::memcpy(img.mutable_data(), t.data(), sizeof(double) * static_cast<size_t>(t.size()));
            py::list instances;
            for (const auto& inst : s.instances) {
                py::dict d;
                d["class_id"] = inst.class_id;
                d["mask"] = mask_to_array(inst.mask, inst.h, inst.w);
                instances.append(std::move(d));
            }
            return py::make_tuple(img, instances);
        },
        py::arg("seed"), py::arg("image_id") = 0, py::arg("image_size") = 64,
        py::arg("twin") = false);

    m.attr("NUM_CLASSES") = kNumClasses;
    m.attr("CLASS_NAMES") = py::make_tuple("circle", "rectangle", "triangle");
}
