#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <cstring>
#include <iostream>

#include "diffpad/cli.hpp"
#include "diffpad/config.hpp"
#include "diffpad/diffusion.hpp"
#include "diffpad/error.hpp"
#include "diffpad/eval.hpp"
#include "diffpad/io.hpp"
#include "diffpad/pad.hpp"
#include "diffpad/similarity.hpp"

namespace py = pybind11;
using namespace diffpad;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

// (H, W) or (C, H, W) float array in [0, 1].
Image to_image(const Array& a) {
  Shape s;
  if (a.ndim() == 2) {
    s = {1, static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1))};
  } else if (a.ndim() == 3) {
    s = {static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)), static_cast<int>(a.shape(2))};
  } else {
    throw py::value_error("expected a 2-D or 3-D array");
  }
  return Image(s, std::vector<double>(a.data(), a.data() + a.size()));
}

Array to_array(const Image& img) {
  Array out({img.channels(), img.height(), img.width()});
  std::memcpy(out.mutable_data(), img.data().data(), img.size() * sizeof(double));
  return out;
}

RunConfig config_from(const py::object& path) {
  return path.is_none() ? RunConfig{} : load_config(path.cast<std::filesystem::path>());
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Diffusion-based presentation attack detection";

  static py::exception<Error> error(m, "DiffpadError");
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      py::object exc = py::reinterpret_borrow<py::object>(error)(py::str(e.what()));
      exc.attr("code") = py::str(std::string(to_string(e.code())));
      PyErr_SetObject(error.ptr(), exc.ptr());
    }
  });

  m.def("load_image", [](const std::filesystem::path& p) { return to_array(load_image(p)); });
  m.def("save_image", [](const Array& a, const std::filesystem::path& p) { save_image(to_image(a), p); });

  m.def("mse", [](const Array& a, const Array& b) { return mse(to_image(a), to_image(b)); });
  m.def("ssim", [](const Array& a, const Array& b) { return ssim(to_image(a), to_image(b)); });

  py::class_<FeatureExtractor>(m, "FeatureExtractor")
      .def_static(
          "fixed_random",
          [](std::uint64_t seed, int in_channels) {
            return build_feature_extractor(FeatureSource::fixed_random(seed, in_channels));
          },
          py::arg("seed") = 7, py::arg("in_channels") = 1)
      .def_property_readonly("source", &FeatureExtractor::source)
      .def("pooled_features", [](const FeatureExtractor& f, const Array& a) { return f.pooled_features(to_image(a)); });
  m.def("lpips", [](const Array& a, const Array& b, const FeatureExtractor& f) {
    return lpips(to_image(a), to_image(b), f);
  });

  py::class_<NoiseSchedule>(m, "NoiseSchedule")
      .def_property_readonly("steps", &NoiseSchedule::steps)
      .def_property_readonly("betas", &NoiseSchedule::betas)
      .def_property_readonly("alphas_bar", &NoiseSchedule::alphas_bar)
      .def("alpha_bar", &NoiseSchedule::alpha_bar);
  m.def("make_linear_schedule", &make_linear_schedule, py::arg("steps"), py::arg("beta_start"), py::arg("beta_end"));
  m.def("default_truncation", &default_truncation);
  m.def("forward_marginal", [](const Array& x0, int t, const Array& noise, const NoiseSchedule& s) {
    return to_array(forward_marginal(to_image(x0), t, to_image(noise), s));
  });

  m.def("calibrate_threshold", [](const std::vector<double>& att, double target) {
    return calibrate_threshold(att, target);
  });
  m.def(
      "bpcer_at_apcer",
      [](const std::vector<double>& bona, const std::vector<double>& att, double target) {
        const OperatingPoint op = bpcer_at_apcer(bona, att, target);
        return py::make_tuple(op.bpcer, op.threshold);
      },
      py::arg("bona_scores"), py::arg("attack_scores"), py::arg("target_apcer") = 10.0);
  m.def("fid", &fid);

  m.def(
      "dump_config", [](const py::object& path) { return format_config(config_from(path)); },
      py::arg("path") = py::none());
  m.def(
      "config_digest", [](const py::object& path) { return config_digest(config_from(path)); },
      py::arg("path") = py::none());

  m.def("load_scores", [](const std::filesystem::path& p) {
    py::list out;
    for (const PadScore& s : load_scores(p)) {
      py::object label = py::none();
      if (s.label) label = py::str(*s.label == Label::kBonafide ? "bonafide" : "attack");
      out.append(py::make_tuple(s.sample_id, label, s.pai_type, s.score));
    }
    return out;
  });

  // Thin wrappers over the CLI commands; `config` is an INI path or None.
  m.def("synth", [](const py::object& config, const std::filesystem::path& out) {
    return cmd_synth(config_from(config), out);
  });
  m.def("train", [](const py::object& config, const std::filesystem::path& manifest,
                    const std::filesystem::path& out) { return cmd_train(config_from(config), manifest, out); });
  m.def("score", [](const py::object& config, const std::filesystem::path& ckpt,
                    const std::filesystem::path& manifest, const std::filesystem::path& out) {
    return cmd_score(config_from(config), ckpt, manifest, out);
  });
  m.def("evaluate", [](const py::object& config, const std::vector<std::filesystem::path>& scores,
                       const std::filesystem::path& out_prefix) {
    return cmd_eval(config_from(config), scores, out_prefix).json_path;
  });
  m.def("fid_groups", [](const py::object& config, const std::filesystem::path& ckpt,
                         const std::filesystem::path& manifest) {
    return cmd_fid(config_from(config), ckpt, manifest, {});
  });
  m.def("set_quiet", [](bool quiet) { set_progress_stream(quiet ? nullptr : &std::cerr); });
}
