#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include "featimit/backbone.hpp"
#include "featimit/commands.hpp"
#include "featimit/dataset.hpp"
#include "featimit/image.hpp"
#include "featimit/metrics.hpp"
#include "featimit/scale_search.hpp"
#include "featimit/scoring.hpp"
#include "featimit/student.hpp"
#include "featimit/training.hpp"
#include "featimit/error.hpp"

namespace py = pybind11;
using namespace featimit;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

// (C, H, W) array -> (1, C, H, W) tensor. 2-D arrays are treated as C = 1.
Tensor to_tensor(const Array& a) {
  if (a.ndim() != 2 && a.ndim() != 3) throw py::value_error("expected a (C, H, W) or (H, W) array");
  const int c = a.ndim() == 3 ? static_cast<int>(a.shape(0)) : 1;
  const int h = static_cast<int>(a.shape(a.ndim() - 2)), w = static_cast<int>(a.shape(a.ndim() - 1));
  Tensor t(1, c, h, w);
  std::copy(a.data(), a.data() + a.size(), t.data());
  return t;
}

Array from_tensor(const Tensor& t) {
  if (t.n() != 1) throw py::value_error("expected a single sample");
  Array out({t.c(), t.h(), t.w()});
  std::copy(t.data(), t.data() + t.size(), out.mutable_data());
  return out;
}

Array from_map(const ScoreMap& m) {
  Array out({m.height, m.width});
  std::copy(m.data.begin(), m.data.end(), out.mutable_data());
  return out;
}

ScoreMap to_map(const Array& a) {
  if (a.ndim() != 2) throw py::value_error("score maps must be 2-D");
  ScoreMap m(static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)));
  std::copy(a.data(), a.data() + a.size(), m.data.begin());
  return m;
}

Mask to_mask(const py::array& a) {
  const auto b = py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>::ensure(a.attr("astype")("bool"));
  if (!b || b.ndim() != 2) throw py::value_error("masks must be 2-D");
  Mask m(static_cast<int>(b.shape(0)), static_cast<int>(b.shape(1)));
  std::copy(b.data(), b.data() + b.size(), m.data.begin());
  return m;
}

std::vector<ScoreMap> to_maps(const std::vector<Array>& v) {
  std::vector<ScoreMap> out;
  for (const auto& a : v) out.push_back(to_map(a));
  return out;
}

std::vector<Mask> to_masks(const std::vector<py::array>& v) {
  std::vector<Mask> out;
  for (const auto& a : v) out.push_back(to_mask(a));
  return out;
}

const char* kind_name(ErrorKind k) {
  switch (k) {
    case ErrorKind::contract: return "contract";
    case ErrorKind::config: return "config";
    case ErrorKind::shape: return "shape";
    case ErrorKind::load: return "load";
    case ErrorKind::io: return "io";
    case ErrorKind::layout: return "layout";
    case ErrorKind::integrity: return "integrity";
    case ErrorKind::checkpoint: return "checkpoint";
    case ErrorKind::numerical: return "numerical";
  }
  return "unknown";
}

FeatureMap feature(const Array& a, int level) { return {to_tensor(a), level, FeatureSource::teacher}; }

}  // namespace

PYBIND11_MODULE(_featimit, m) {
  m.doc() = "Multi-scale teacher-student anomaly localization";

  // Raised for every library error; `kind` names the error category and
  // `exit_code` is the matching command line exit status.
  static PyObject* error_type = PyErr_NewException("featimit.FeatimitError", PyExc_RuntimeError, nullptr);
  m.add_object("FeatimitError", py::handle(error_type).inc_ref());
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      py::object exc = py::handle(error_type)(e.what());
      exc.attr("kind") = kind_name(e.kind());
      exc.attr("exit_code") = exit_code_for(e.kind());
      PyErr_SetObject(error_type, exc.ptr());
    }
  });

  py::class_<TeacherNetwork>(m, "Teacher")
      .def_property_readonly("architecture", [](const TeacherNetwork& t) { return to_string(t.architecture()); })
      .def_property_readonly("level_count", &TeacherNetwork::level_count)
      .def_property_readonly("deepest_stride", &TeacherNetwork::deepest_stride)
      .def("checksum", &TeacherNetwork::checksum)
      .def("extract_features",
           [](const TeacherNetwork& t, const Array& image) {
             std::vector<Array> out;
             for (const auto& f : extract_features(t, to_tensor(image))) out.push_back(from_tensor(f.data));
             return out;
           },
           py::arg("image"), "Teacher features of a (3, H, W) image in [0, 1], levels 1..L.")
      .def("save", [](const TeacherNetwork& t, const std::filesystem::path& p) { save_teacher(t, p); });

  m.def("make_toy_teacher", &make_toy_teacher, py::arg("seed") = 0);
  m.def("load_teacher",
        [](const std::string& arch, const std::string& source) { return load_teacher(parse_architecture(arch), source); },
        py::arg("architecture"), py::arg("weights"));

  py::class_<ScaleBank>(m, "ScaleBank")
      .def_property_readonly("scale", &ScaleBank::scale)
      .def_property_readonly("levels", &ScaleBank::levels)
      .def("checksum", &ScaleBank::checksum)
      .def("copy_teacher_level",
           [](ScaleBank& b, const TeacherNetwork& t, int level) { b.block(level).net() = t.level_module(level); })
      .def("student_features", [](const ScaleBank& b, const TeacherNetwork& t, const Array& image) {
        const auto tf = extract_features(t, to_tensor(image));
        std::vector<Array> out;
        for (const auto& f : student_forward(b, tf)) out.push_back(from_tensor(f.data));
        return out;
      });

  m.def("init_student_bank", &init_student_bank, py::arg("teacher"), py::arg("scale"), py::arg("seed") = 0,
        py::arg("levels") = std::vector<int>{});
  m.def("save_bank", [](const ScaleBank& b, const std::filesystem::path& p) { save_bank(b, p); });
  m.def("load_bank", [](const std::filesystem::path& p, const TeacherNetwork& t) { return load_bank(p, t); });

  m.def(
      "fit",
      [](ScaleBank& bank, const TeacherNetwork& teacher, const std::vector<Array>& images, double learning_rate,
         double momentum, int batch_size, int epochs, std::uint64_t seed) {
        std::vector<Tensor> ims;
        for (const auto& a : images) ims.push_back(to_tensor(a));
        TrainConfig c;
        c.learning_rate = learning_rate;
        c.momentum = momentum;
        c.batch_size = batch_size;
        c.epochs = epochs;
        c.seed = seed;
        py::gil_scoped_release release;
        const TrainState s = fit(bank, teacher, ims, c);
        py::gil_scoped_acquire acquire;
        py::dict d;
        d["initial_loss"] = s.initial_loss;
        d["final_loss"] = s.final_loss;
        d["best_epoch"] = s.best_epoch;
        d["epochs"] = s.epoch;
        return d;
      },
      py::arg("bank"), py::arg("teacher"), py::arg("images"), py::arg("learning_rate") = 0.5,
      py::arg("momentum") = 0.9, py::arg("batch_size") = 16, py::arg("epochs") = 600, py::arg("seed") = 0);

  m.def(
      "layer_loss",
      [](const Array& t, const Array& s, double eps) { return layer_loss(feature(t, 2), feature(s, 2), eps); },
      py::arg("teacher"), py::arg("student"), py::arg("epsilon") = 1e-12);
  m.def(
      "layer_loss_gradient",
      [](const Array& t, const Array& s, double eps) {
        const LossGradient g = layer_loss_gradient(to_tensor(t), to_tensor(s), eps);
        return py::make_tuple(g.loss, from_tensor(g.grad));
      },
      py::arg("teacher"), py::arg("student"), py::arg("epsilon") = 1e-12);

  m.def(
      "resize_bilinear",
      [](const Array& a, int h, int w) {
        Array out = from_tensor(resize_bilinear(to_tensor(a), h, w));
        if (a.ndim() == 2) return Array(out.reshape({h, w}));
        return out;
      },
      py::arg("array"), py::arg("height"), py::arg("width"));

  m.def(
      "multi_scale_score",
      [](const std::vector<ScaleBank>& banks, const TeacherNetwork& t, const Array& image, int size,
         std::optional<std::vector<double>> weights, const std::string& fusion) {
        const FusionOrder order = fusion == "per_scale" ? FusionOrder::per_scale : FusionOrder::flat;
        std::optional<WeightVector> w;
        if (weights) {
          w.emplace();
          w->values = *weights;
          for (const auto& b : banks)
            for (int l : b.levels()) w->block_ids.push_back({b.scale(), l});
        }
        return from_map(multi_scale_score(banks, t, to_tensor(image), {size, size}, w ? &*w : nullptr, 1e-12, order));
      },
      py::arg("banks"), py::arg("teacher"), py::arg("image"), py::arg("size") = 256, py::arg("weights") = py::none(),
      py::arg("fusion") = "flat");

  m.def(
      "softmax_weights",
      [](const std::vector<double>& logits) {
        WeightLogits l = uniform_logits(std::vector<BlockId>(logits.size()));
        l.values = logits;
        return softmax_weights(l).values;
      },
      py::arg("logits"));
  m.def(
      "prune_top_k",
      [](const std::vector<double>& logits, int k) {
        std::vector<BlockId> ids;
        for (std::size_t i = 0; i < logits.size(); ++i) ids.push_back({0, static_cast<int>(i)});
        WeightLogits l = uniform_logits(ids);
        l.values = logits;
        const PruneResult r = prune_top_k(l, k);
        return py::make_tuple(r.kept_mask, r.weights.values);
      },
      py::arg("logits"), py::arg("k"));
  m.def(
      "search_weights",
      [](const std::vector<std::vector<Array>>& maps, const std::vector<py::array>& masks, int iterations,
         double learning_rate) {
        ValidationCache c;
        for (const auto& per : maps) c.maps.push_back(to_maps(per));
        c.masks = to_masks(masks);
        if (!c.maps.empty())
          for (std::size_t b = 0; b < c.maps.front().size(); ++b) c.block_ids.push_back({0, static_cast<int>(b)});
        const WeightLogits r = search_weights(c, uniform_logits(c.block_ids), {iterations, learning_rate});
        return py::make_tuple(r.values, r.loss_trace);
      },
      py::arg("maps"), py::arg("masks"), py::arg("iterations") = 500, py::arg("learning_rate") = 0.1,
      "Per-image lists of block score maps and masks; returns (logits, loss trace).");

  m.def(
      "auroc",
      [](const std::vector<double>& scores, const std::vector<int>& labels) {
        std::vector<std::uint8_t> l(labels.begin(), labels.end());
        return auroc(scores, l);
      },
      py::arg("scores"), py::arg("labels"));
  m.def(
      "aupro",
      [](const std::vector<Array>& maps, const std::vector<py::array>& masks, double fpr_limit) {
        return aupro(to_maps(maps), to_masks(masks), {fpr_limit, 5000});
      },
      py::arg("maps"), py::arg("masks"), py::arg("fpr_limit") = 0.3);
  m.def(
      "connected_components",
      [](const py::array& mask) {
        const Components cc = connected_components(to_mask(mask));
        py::array_t<int> labels({static_cast<py::ssize_t>(mask.shape(0)), static_cast<py::ssize_t>(mask.shape(1))});
        std::copy(cc.labels.begin(), cc.labels.end(), labels.mutable_data());
        return py::make_tuple(cc.count, labels);
      },
      py::arg("mask"));

  m.def(
      "generate_synthetic_fixture",
      [](const std::filesystem::path& root, int n_normal, int n_anomalous, int n_test_good, int image_size,
         std::uint64_t seed, const std::string& category) {
        FixtureOptions o;
        o.n_normal = n_normal;
        o.n_anomalous = n_anomalous;
        o.n_test_good = n_test_good;
        o.image_size = image_size;
        o.seed = seed;
        o.category = category;
        const SplitCounts c = generate_synthetic_fixture(root, o).counts();
        return py::make_tuple(c.train, c.test);
      },
      py::arg("root"), py::arg("n_normal") = 16, py::arg("n_anomalous") = 8, py::arg("n_test_good") = 0,
      py::arg("image_size") = 64, py::arg("seed") = 0, py::arg("category") = "synthetic");

  m.def(
      "load_image", [](const std::filesystem::path& p) { return from_tensor(load_image(p)); }, py::arg("path"));

  m.def(
      "run_cli",
      [](std::vector<std::string> args) {
        args.insert(args.begin(), "featimit");
        std::vector<const char*> argv;
        for (const auto& a : args) argv.push_back(a.c_str());
        std::ostringstream out, err;
        int code = 0;
        {
          py::gil_scoped_release release;
          code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
        }
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"), "Runs the command line tool in-process; returns (exit code, stdout, stderr).");
}
