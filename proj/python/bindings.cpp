#include <pybind11/functional.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "dsegnet/config.hpp"
#include "dsegnet/error.hpp"
#include "dsegnet/eval.hpp"
#include "dsegnet/explain.hpp"
#include "dsegnet/gradsuite.hpp"
#include "dsegnet/netpbm.hpp"
#include "dsegnet/weights.hpp"

namespace py = pybind11;
using namespace dseg;

namespace {

using Array = py::array_t<float, py::array::c_style | py::array::forcecast>;

// Accepts (h,w), (c,h,w) or (n,c,h,w).
Tensor<float> to_tensor(const Array& a) {
    const auto nd = a.ndim();
    if (nd < 2 || nd > 4) throw DimensionError("expected a 2-, 3- or 4-dimensional array, got " + std::to_string(nd));
    std::size_t dims[4] = {1, 1, 1, 1};
    for (py::ssize_t i = 0; i < nd; ++i) dims[4 - nd + i] = static_cast<std::size_t>(a.shape(i));
    Tensor<float> t(Shape{dims[0], dims[1], dims[2], dims[3]});
    std::copy_n(a.data(), t.numel(), t.ptr());
    return t;
}

Array to_array(const Tensor<float>& t) {
    const Shape s = t.shape();
    Array a({s.n, s.c, s.h, s.w});
    std::copy_n(t.ptr(), t.numel(), a.mutable_data());
    return a;
}

py::dict metrics_dict(const Metrics& m) {
    py::dict d;
    d["dsc"] = m.dsc;
    d["iou"] = m.iou;
    d["recall"] = m.recall;
    d["precision"] = m.precision;
    d["f2"] = m.f2;
    return d;
}

std::vector<SamplePair> pairs_from(const Array& images, const Array& masks) {
    const auto x = to_tensor(images), y = to_tensor(masks);
    const Shape xs = x.shape(), ys = y.shape();
    if (xs.n != ys.n) throw DimensionError("images and masks differ in count");
    std::vector<SamplePair> out(xs.n);
    for (std::size_t i = 0; i < xs.n; ++i) {
        out[i].id = "sample_" + std::to_string(i);
        out[i].image = Tensor<float>(Shape{1, xs.c, xs.h, xs.w});
        out[i].mask = Tensor<float>(Shape{1, ys.c, ys.h, ys.w});
        std::copy_n(x.ptr() + i * out[i].image.numel(), out[i].image.numel(), out[i].image.ptr());
        std::copy_n(y.ptr() + i * out[i].mask.numel(), out[i].mask.numel(), out[i].mask.ptr());
    }
    return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "DilatedSegNet segmentation engine";

    // Later registrations are tried first, so the base class goes first.
    auto base = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
    py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
    py::register_exception<DimensionError>(m, "DimensionError", base.ptr());
    py::register_exception<IoError>(m, "IoError", base.ptr());
    py::register_exception<NumericError>(m, "NumericError", base.ptr());

    py::class_<ModelConfig>(m, "ModelConfig")
        .def(py::init<>())
        .def_static("desk", &ModelConfig::desk)
        .def_static("paper", &ModelConfig::paper)
        .def_static("from_preset", &ModelConfig::from_preset)
        .def_readwrite("input_h", &ModelConfig::input_h)
        .def_readwrite("input_w", &ModelConfig::input_w)
        .def_readwrite("encoder_widths", &ModelConfig::encoder_widths)
        .def_readwrite("decoder_widths", &ModelConfig::decoder_widths)
        .def_readwrite("dcp_channels", &ModelConfig::dcp_channels)
        .def_readwrite("cbam_reduction", &ModelConfig::cbam_reduction)
        .def_readwrite("use_dcp", &ModelConfig::use_dcp)
        .def_readwrite("use_cbam", &ModelConfig::use_cbam)
        .def_readonly("preset", &ModelConfig::preset)
        .def("validate", &ModelConfig::validate);

    py::class_<DilatedSegNet<float>>(m, "Model")
        .def(py::init<const ModelConfig&, std::uint64_t>(), py::arg("config") = ModelConfig::desk(),
             py::arg("seed") = 0)
        .def("predict", [](DilatedSegNet<float>& net, const Array& x) { return to_array(net.predict(to_tensor(x))); },
             py::arg("images"), "Mask probabilities (n,1,h,w) for images (n,3,h,w) in [0,1].")
        .def("heatmap",
             [](DilatedSegNet<float>& net, const Array& x) { return to_array(bottleneck_heatmap(net, to_tensor(x))); },
             py::arg("image"))
        .def("bottleneck", [](const DilatedSegNet<float>& net) { return to_array(net.last_bottleneck()); })
        .def("param_count", [](DilatedSegNet<float>& net) { return count_params(net.registry()); })
        .def("macs", [](DilatedSegNet<float>& net, std::size_t h, std::size_t w) {
            return net.trace(Shape{1, 3, h, w}).tally.total;
        }, py::arg("h"), py::arg("w"))
        .def("save_weights", [](DilatedSegNet<float>& net, const std::string& p) { save_weights(net.registry(), p); })
        .def("load_weights", [](DilatedSegNet<float>& net, const std::string& p) { load_weights(net.registry(), p); })
        .def("train",
             [](DilatedSegNet<float>& net, const Array& xi, const Array& xm, const Array& vi, const Array& vm,
                double lr, std::size_t batch_size, std::size_t epochs, std::uint64_t seed, bool augment) {
                 TrainConfig c;
                 c.lr = lr;
                 c.batch_size = batch_size;
                 c.max_epochs = epochs;
                 c.seed = seed;
                 c.augment = augment;
                 const auto tr = pairs_from(xi, xm), va = pairs_from(vi, vm);
                 History h;
                 {
                     py::gil_scoped_release release;
                     h = train(net, tr, va, c);
                 }
                 py::dict d;
                 d["train_loss"] = h.train_loss;
                 d["val_loss"] = h.val_loss;
                 d["val_dsc"] = h.val_dsc;
                 d["lr"] = h.lr;
                 d["best_epoch"] = h.best_epoch;
                 d["stopped_early"] = h.stopped_early;
                 return d;
             },
             py::arg("train_images"), py::arg("train_masks"), py::arg("val_images"), py::arg("val_masks"),
             py::arg("lr") = 1e-3, py::arg("batch_size") = 16, py::arg("epochs") = 30, py::arg("seed") = 42,
             py::arg("augment") = true);

    m.def("count_macs", [](const ModelConfig& c, std::size_t h, std::size_t w) {
        return count_macs(c, Shape{1, 3, h, w});
    }, py::arg("config"), py::arg("h"), py::arg("w"));

    m.def("synth_sample", [](std::size_t index, std::uint64_t seed, std::size_t h, std::size_t w) {
        SynthConfig c;
        c.seed = seed;
        c.h = h;
        c.w = w;
        c.validate();
        const auto s = synth_sample(c, index);
        return py::make_tuple(s.id, to_array(s.image), to_array(s.mask));
    }, py::arg("index"), py::arg("seed") = 42, py::arg("h") = 64, py::arg("w") = 64);

    m.def("confusion", [](const Array& pred, const Array& gt, double threshold) {
        const auto c = confusion(to_tensor(pred), to_tensor(gt), threshold);
        return py::make_tuple(c.tp, c.fp, c.fn, c.tn);
    }, py::arg("pred"), py::arg("gt"), py::arg("threshold") = 0.5);

    m.def("metrics", [](std::uint64_t tp, std::uint64_t fp, std::uint64_t fn, std::uint64_t tn) {
        return metrics_dict(metrics_from_counts(ConfusionCounts{tp, fp, fn, tn}));
    }, py::arg("tp"), py::arg("fp"), py::arg("fn"), py::arg("tn") = 0);

    m.def("colormap_rgb", [](double v) {
        const auto c = colormap_rgb(v);
        return py::make_tuple(c[0], c[1], c[2]);
    });
    m.def("colormap", [](const Array& heat) { return to_array(colormap(to_tensor(heat))); });
    m.def("overlay", [](const Array& img, const Array& heat, double alpha) {
        return to_array(overlay(to_tensor(img), to_tensor(heat), alpha));
    }, py::arg("image"), py::arg("heat_rgb"), py::arg("alpha") = 0.4);

    m.def("read_ppm", [](const std::string& p) { return to_array(read_ppm(p)); });
    m.def("read_pgm", [](const std::string& p) { return to_array(read_pgm(p)); });
    m.def("write_ppm", [](const Array& a, const std::string& p) { write_ppm(to_tensor(a), p); });
    m.def("write_pgm", [](const Array& a, const std::string& p) { write_pgm(to_tensor(a), p); });

    m.def("grad_suites", [](std::size_t seeds, bool full) {
        SuiteOptions o;
        o.seeds = seeds;
        o.full_network = full;
        py::list out;
        for (const auto& r : run_grad_suites(o)) {
            py::dict d;
            d["name"] = r.name;
            d["passed"] = r.passed;
            d["instances"] = r.instances;
            d["worst_rel"] = r.worst_rel;
            d["pass"] = r.pass();
            out.append(d);
        }
        return out;
    }, py::arg("seeds") = 10, py::arg("full") = false);
}
