#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include "nehad/error.hpp"
#include "nehad/helmholtz.hpp"
#include "nehad/physics.hpp"
#include "nehad/pipeline.hpp"
#include "nehad/stream.hpp"

namespace py = pybind11;
using namespace nehad;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Array image_to_array(const ImageBuffer& img) {
  Array out({img.height, img.width, 3});
  std::copy(img.rgb.begin(), img.rgb.end(), out.mutable_data());
  return out;
}

ImageBuffer array_to_image(const Array& a) {
  if (a.ndim() != 3 || a.shape(2) != 3) throw ShapeError("image arrays must be (height, width, 3)");
  ImageBuffer img(static_cast<int>(a.shape(1)), static_cast<int>(a.shape(0)));
  std::copy(a.data(), a.data() + a.size(), img.rgb.begin());
  return img;
}

Array field_to_array(const GridField& f) {
  const auto n = static_cast<py::ssize_t>(f.n);
  Array out({n, n, n, py::ssize_t{3}});
  double* p = out.mutable_data();
  for (const Vec3& v : f.values) {
    for (double x : v) *p++ = x;
  }
  return out;
}

// Arrays are indexed [k, j, i, component], matching the grid storage order.
GridField array_to_field(const Array& a) {
  if (a.ndim() != 4 || a.shape(3) != 3 || a.shape(0) != a.shape(1) || a.shape(1) != a.shape(2)) {
    throw ShapeError("field arrays must be (n, n, n, 3)");
  }
  GridField f(static_cast<std::size_t>(a.shape(0)));
  const double* p = a.data();
  for (Vec3& v : f.values) {
    for (double& x : v) x = *p++;
  }
  return f;
}

Vec3 vec3(const std::vector<double>& v) {
  if (v.size() != 3) throw ShapeError("expected 3 values");
  return {v[0], v[1], v[2]};
}

Quat quat(const std::vector<double>& v) {
  if (v.size() != 4) throw ShapeError("expected 4 values");
  return {v[0], v[1], v[2], v[3]};
}

py::dict scene_arrays(const Scene& s) {
  const auto n = static_cast<py::ssize_t>(s.size());
  Array mu({n, py::ssize_t{3}}), scale({n, py::ssize_t{3}}), rot({n, py::ssize_t{4}}), opacity(n),
      color({n, py::ssize_t{3}});
  for (std::size_t i = 0; i < s.size(); ++i) {
    const GaussianPrimitive& g = s.primitives[i];
    for (std::size_t k = 0; k < 3; ++k) {
      mu.mutable_at(i, k) = g.mu[k];
      scale.mutable_at(i, k) = g.log_scale[k];
      color.mutable_at(i, k) = g.color[k];
    }
    for (std::size_t k = 0; k < 4; ++k) rot.mutable_at(i, k) = g.rot[k];
    opacity.mutable_at(i) = g.opacity_logit;
  }
  py::dict d;
  d["mu"] = mu;
  d["log_scale"] = scale;
  d["rot"] = rot;
  d["opacity_logit"] = opacity;
  d["color"] = color;
  return d;
}

TrainConfig config_from(const py::dict& overrides, bool toy) {
  TrainConfig c = toy ? toy_config() : TrainConfig{};
  for (const auto& [k, v] : overrides) c.set(py::str(k), py::str(v));
  c.validate();
  return c;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Hamiltonian deformation fields for dynamic Gaussian splatting";

  // Translators run newest first, so the base class goes first.
  py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
  py::register_exception<FormatError>(m, "FormatError", PyExc_ValueError);
  py::register_exception<NonFiniteError>(m, "NonFiniteError", PyExc_FloatingPointError);

  py::class_<Scene>(m, "Scene")
      .def(py::init<>())
      .def_static("load", [](const std::filesystem::path& p) { return load_ply(p); })
      .def("save", [](const Scene& s, const std::filesystem::path& p) { save_ply(s, p); })
      .def("__len__", &Scene::size)
      .def("arrays", &scene_arrays, "Per-primitive attributes as numpy arrays");

  py::class_<Camera>(m, "Camera")
      .def_static("centered", &Camera::centered, py::arg("width"), py::arg("height"), py::arg("focal"),
                  py::arg("distance"))
      .def_readonly("width", &Camera::width)
      .def_readonly("height", &Camera::height);

  m.def("render", [](const Scene& s, const Camera& c) { return image_to_array(rasterize(s, c)); },
        py::arg("scene"), py::arg("camera"), "Rasterize over a white background; returns (H, W, 3)");
  m.def("psnr", [](const Array& a, const Array& b) { return psnr(array_to_image(a), array_to_image(b)); });
  m.def("ssim", [](const Array& a, const Array& b) { return ssim(array_to_image(a), array_to_image(b)); });

  m.def("synth",
        [](const std::string& kind, std::size_t frames, std::size_t gaussians, int resolution, std::uint64_t seed) {
          const SynthResult s = synth_scene(parse_synth_kind(kind), frames, gaussians, resolution, seed);
          py::list images, times;
          for (const Frame& f : s.dataset.frames) {
            images.append(image_to_array(f.image));
            times.append(f.t);
          }
          py::dict d;
          d["images"] = images;
          d["times"] = times;
          d["is_static"] = s.is_static;
          d["energy"] = s.energy;
          d["gt"] = s.gt_canonical;
          d["init"] = *s.dataset.init;
          return d;
        },
        py::arg("kind"), py::arg("frames"), py::arg("gaussians"), py::arg("resolution"), py::arg("seed") = 0);
  m.def("synth_to_dir",
        [](const std::string& kind, std::size_t frames, std::size_t gaussians, int resolution, std::uint64_t seed,
           const std::filesystem::path& dir) {
          save_dataset(synth_scene(parse_synth_kind(kind), frames, gaussians, resolution, seed).dataset, dir);
        },
        py::arg("kind"), py::arg("frames"), py::arg("gaussians"), py::arg("resolution"), py::arg("seed"),
        py::arg("out_dir"));

  m.def("config_text",
        [](const py::dict& overrides, bool toy) { return config_from(overrides, toy).to_text(); },
        py::arg("overrides") = py::dict(), py::arg("toy") = false, "Resolved key=value config text");
  m.def("train",
        [](const std::filesystem::path& data, const std::filesystem::path& out, const py::dict& overrides, bool toy) {
          const TrainConfig cfg = config_from(overrides, toy);
          const FrameDataset ds = load_dataset(data);
          TrainResult r;
          {
            py::gil_scoped_release release;
            r = train(cfg, ds);
          }
          save_checkpoint(r.checkpoint, out);
          return r.losses;
        },
        py::arg("data"), py::arg("out"), py::arg("overrides") = py::dict(), py::arg("toy") = true,
        "Trains on a dataset directory, writes the checkpoint and returns per-iteration losses");
  m.def("evaluate",
        [](const std::filesystem::path& ckpt, const std::filesystem::path& data) {
          const EvalTable t = eval(load_checkpoint(ckpt), load_dataset(data));
          std::ostringstream csv;
          write_eval_csv(t, csv);
          py::dict d;
          d["mean_psnr"] = t.mean_psnr;
          d["mean_ssim"] = t.mean_ssim;
          d["csv"] = csv.str();
          return d;
        },
        py::arg("checkpoint"), py::arg("data"));

  m.def("helmholtz",
        [](const Array& field) {
          const HelmholtzParts p = decompose(array_to_field(field));
          return py::make_tuple(field_to_array(p.conservative), field_to_array(p.solenoidal),
                                std::vector<double>(p.mean.begin(), p.mean.end()));
        },
        py::arg("field"), "Split an (n, n, n, 3) periodic field into (curl-free, divergence-free, mean)");

  m.def("verlet_position",
        [](const std::vector<double>& mu, const std::vector<double>& v, const std::vector<double>& f, double dt) {
          const Vec3 r = verlet_position(vec3(mu), vec3(v), vec3(f), dt);
          return std::vector<double>(r.begin(), r.end());
        },
        py::arg("mu"), py::arg("velocity"), py::arg("force"), py::arg("dt"));
  m.def("clamp_rotation",
        [](const std::vector<double>& q, double phi_max) {
          const Quat r = clamp_rotation(quat(q), phi_max);
          return std::vector<double>(r.begin(), r.end());
        },
        py::arg("q"), py::arg("phi_max"));
  m.def("rotation_angle", [](const std::vector<double>& q) { return rotation_angle(quat(q)); });

  m.def("mip_level",
        [](const std::vector<double>& s) {
          const auto l = mip_level(vec3(s), MipSelectConfig{});
          return std::vector<double>(l.begin(), l.end());
        },
        py::arg("scale"), "Anisotropy-aware mip levels (x, y, z, dominant)");
}
