// SPDX-License-Identifier: Apache-2.0
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include "cli.hpp"
#include "nhp/gradsuite.hpp"
#include "nhp/trainer.hpp"

namespace py = pybind11;
using namespace nhp;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;
using DoubleArray = py::array_t<double, py::array::c_style | py::array::forcecast>;

FloatArray to_numpy(const Image& img) {
  FloatArray a({img.height, img.width, 3});
  std::copy(img.rgb.begin(), img.rgb.end(), a.mutable_data());
  return a;
}

FloatArray to_numpy(const GrayImage& img) {
  FloatArray a({img.height, img.width});
  std::copy(img.values.begin(), img.values.end(), a.mutable_data());
  return a;
}

Image image_from(const FloatArray& a) {
  if (a.ndim() != 3 || a.shape(2) != 3) throw std::invalid_argument("expected an H x W x 3 array");
  Image img(static_cast<int>(a.shape(1)), static_cast<int>(a.shape(0)));
  std::copy(a.data(), a.data() + a.size(), img.rgb.begin());
  return img;
}

// Trained weights plus their configuration, in either precision.
struct Model {
  TrainConfig config;
  ParamSet<float> params32;
  ParamSet<double> params64;
  bool is64() const { return config.precision == 64; }
};

Model from_checkpoint(Checkpoint ck) { return {ck.config, std::move(ck.params32), std::move(ck.params64)}; }

RunConfig run_config(const std::string& text) { return text.empty() ? RunConfig{} : parse_config(text); }

Model train(const CaptureSet& data, const std::string& config_text, std::optional<int> steps,
            std::optional<std::uint64_t> seed) {
  RunConfig rc = run_config(config_text);
  if (steps) rc.train.steps = *steps;
  if (seed) rc.train.seed = *seed;
  rc.train.validate();
  Model m{rc.train, {}, {}};
  py::gil_scoped_release release;
  if (m.is64()) {
    Trainer<double> tr(rc.train, data, rc.split);
    tr.run(rc.train.steps);
    m.params64 = tr.params().detached();
  } else {
    Trainer<float> tr(rc.train, data, rc.split);
    tr.run(rc.train.steps);
    m.params32 = tr.params().detached();
  }
  return m;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Generalizable human radiance field core";
  m.attr("__version__") = "0.1.0";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<CheckpointError>(m, "CheckpointError", PyExc_RuntimeError);
  py::register_exception<TrainingError>(m, "TrainingError", PyExc_RuntimeError);

  py::class_<CaptureSet>(m, "Dataset")
      .def_property_readonly("subjects", [](const CaptureSet& s) { return s.subjects.size(); })
      .def_property_readonly("frames", [](const CaptureSet& s) { return s.frames; })
      .def_property_readonly("views", &CaptureSet::views)
      .def_property_readonly("resolution", [](const CaptureSet& s) { return s.cameras.front().width; })
      .def("subject_name", [](const CaptureSet& s, int i) { return s.subjects.at(static_cast<std::size_t>(i)).name; })
      .def("image",
           [](const CaptureSet& s, int subject, int view, int t) {
             return to_numpy(s.subjects.at(static_cast<std::size_t>(subject)).images.at(static_cast<std::size_t>(view))
                                 .at(static_cast<std::size_t>(t)));
           },
           py::arg("subject"), py::arg("view"), py::arg("frame"))
      .def("mask",
           [](const CaptureSet& s, int subject, int view, int t) {
             return to_numpy(s.subjects.at(static_cast<std::size_t>(subject)).masks.at(static_cast<std::size_t>(view))
                                 .at(static_cast<std::size_t>(t)));
           },
           py::arg("subject"), py::arg("view"), py::arg("frame"))
      .def("vertices",
           [](const CaptureSet& s, int subject, int t) {
             const auto& v = s.subjects.at(static_cast<std::size_t>(subject)).frames.at(static_cast<std::size_t>(t)).vertices;
             DoubleArray a({static_cast<py::ssize_t>(v.size()), py::ssize_t{3}});
             for (std::size_t i = 0; i < v.size(); ++i)
               for (int k = 0; k < 3; ++k) a.mutable_data()[i * 3 + static_cast<std::size_t>(k)] = v[i][k];
             return a;
           },
           py::arg("subject"), py::arg("frame"))
      .def("write", [](const CaptureSet& s, const std::filesystem::path& dir) { write_dataset(s, dir); }, py::arg("path"));

  m.def(
      "generate",
      [](std::uint64_t seed, int subjects, int frames, int views, int resolution) {
        GenerateOptions o;
        o.seed = seed;
        o.subjects = subjects;
        o.frames = frames;
        o.views = views;
        o.resolution = resolution;
        py::gil_scoped_release release;
        return generate_captures(o);
      },
      py::arg("seed") = 0, py::arg("subjects") = 4, py::arg("frames") = 30, py::arg("views") = 4,
      py::arg("resolution") = 64, "Generate a synthetic multi-view capture set in memory.");
  m.def("read_dataset", &read_dataset, py::arg("path"));

  m.def(
      "composite",
      [](const DoubleArray& sigma, const DoubleArray& colors, const DoubleArray& deltas) {
        if (colors.ndim() != 2 || colors.shape(1) != 3) throw std::invalid_argument("colors must be n x 3");
        std::vector<Vec3> c(static_cast<std::size_t>(colors.shape(0)));
        for (std::size_t i = 0; i < c.size(); ++i) c[i] = Vec3(colors.at(i, 0), colors.at(i, 1), colors.at(i, 2));
        const CompositeResult r = composite(std::span<const double>(sigma.data(), static_cast<std::size_t>(sigma.size())), c,
                                            std::span<const double>(deltas.data(), static_cast<std::size_t>(deltas.size())));
        py::dict out;
        out["rgb"] = std::vector<double>{r.rgb[0], r.rgb[1], r.rgb[2]};
        out["alpha"] = r.alpha;
        out["weights"] = r.weights;
        out["transmittance"] = r.transmittance;
        return out;
      },
      py::arg("sigma"), py::arg("colors"), py::arg("deltas"), "Front-to-back quadrature compositing of one ray.");

  m.def("psnr", [](const FloatArray& a, const FloatArray& b) { return psnr(image_from(a), image_from(b)); });
  m.def("ssim", [](const FloatArray& a, const FloatArray& b) { return ssim(image_from(a), image_from(b)); });

  py::class_<Model>(m, "Model")
      .def_property_readonly("variant", [](const Model& mo) { return mo.config.field.variant_name(); })
      .def_property_readonly("precision", [](const Model& mo) { return mo.config.precision; })
      .def_property_readonly("parameter_names",
                             [](const Model& mo) { return mo.is64() ? mo.params64.names() : mo.params32.names(); })
      .def("parameter",
           [](const Model& mo, const std::string& name) {
             const auto get = [&](const auto& ps) {
               const auto& t = ps.at(name);
               DoubleArray a(std::vector<py::ssize_t>(t.shape().begin(), t.shape().end()));
               std::copy(t.data().begin(), t.data().end(), a.mutable_data());
               return a;
             };
             return mo.is64() ? get(mo.params64) : get(mo.params32);
           })
      .def("save",
           [](const Model& mo, const std::filesystem::path& path) {
             if (mo.is64()) {
               save_checkpoint(path, mo.params64, mo.config);
             } else {
               save_checkpoint(path, mo.params32, mo.config);
             }
           })
      .def(
          "render",
          [](const Model& mo, const CaptureSet& data, int subject, int frame, int view, int threads) {
            RenderResult r;
            {
              py::gil_scoped_release release;
              r = mo.is64() ? render_view(mo.params64, mo.config, data, subject, frame, view, threads)
                            : render_view(mo.params32, mo.config, data, subject, frame, view, threads);
            }
            return py::make_tuple(to_numpy(r.image), to_numpy(r.alpha));
          },
          py::arg("data"), py::arg("subject"), py::arg("frame"), py::arg("view"), py::arg("threads") = 0,
          "Render (image, alpha) for a dataset camera.")
      .def(
          "evaluate",
          [](const Model& mo, const CaptureSet& data, const std::string& protocol, const std::string& config_text,
             int frame_stride, std::vector<int> views) {
            const Split split = run_config(config_text).split;
            EvalOptions opts;
            opts.frame_stride = frame_stride;
            opts.views = std::move(views);
            EvalReport rep;
            {
              py::gil_scoped_release release;
              rep = mo.is64() ? evaluate(mo.params64, mo.config, data, split, parse_protocol(protocol), opts)
                              : evaluate(mo.params32, mo.config, data, split, parse_protocol(protocol), opts);
            }
            py::list rows;
            for (const auto& r : rep.records) {
              py::dict d;
              d["subject"] = r.subject;
              d["frame"] = r.frame;
              d["view"] = r.view;
              d["psnr"] = r.psnr;
              d["ssim"] = r.ssim;
              d["psnr_body"] = r.psnr_body;
              rows.append(d);
            }
            return rows;
          },
          py::arg("data"), py::arg("protocol") = "pose", py::arg("config") = "", py::arg("frame_stride") = 1,
          py::arg("views") = std::vector<int>{});

  m.def("train", &train, py::arg("data"), py::arg("config") = "", py::arg("steps") = py::none(),
        py::arg("seed") = py::none(), "Train from INI config text; returns a Model.");
  m.def("load", [](const std::filesystem::path& p) { return from_checkpoint(load_checkpoint(p)); }, py::arg("path"));

  m.def(
      "gradient_suite",
      [](std::uint64_t seed) {
        std::vector<GradSuiteEntry> entries;
        {
          py::gil_scoped_release release;
          entries = run_gradient_suite(seed);
        }
        py::list out;
        for (const auto& e : entries) {
          py::dict d;
          d["name"] = e.name;
          d["max_rel_error"] = e.max_rel_error;
          d["tolerance"] = e.tolerance;
          d["checked"] = e.checked;
          d["passed"] = e.passed();
          out.append(d);
        }
        return out;
      },
      py::arg("seed") = 0);

  m.def(
      "cli",
      [](const std::vector<std::string>& args) {
        std::vector<std::string> all{"nhp"};
        all.insert(all.end(), args.begin(), args.end());
        std::vector<const char*> argv;
        for (const auto& a : all) argv.push_back(a.c_str());
        std::ostringstream out, err;
        const int code = cli_main(static_cast<int>(argv.size()), argv.data(), out, err);
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"), "Run a CLI command; returns (exit code, stdout, stderr).");
}
