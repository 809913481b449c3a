#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "geomatch/checkpoint.hpp"
#include "geomatch/errors.hpp"
#include "geomatch/evaluation.hpp"
#include "geomatch/matching.hpp"
#include "geomatch/pipeline.hpp"
#include "geomatch/resampler.hpp"
#include "geomatch/synthgen.hpp"
#include "geomatch/transforms.hpp"

namespace py = pybind11;
using namespace geomatch;

namespace {

using Array = py::array_t<Scalar, py::array::c_style | py::array::forcecast>;

Image image_from_array(const Array& a) {
  if (a.ndim() != 2 && a.ndim() != 3) throw InvalidArgument("image must be H x W or H x W x C");
  const int h = static_cast<int>(a.shape(0)), w = static_cast<int>(a.shape(1));
  const int c = a.ndim() == 3 ? static_cast<int>(a.shape(2)) : 1;
  Image img(h, w, c);
  std::copy(a.data(), a.data() + a.size(), img.pixels.begin());
  return img;
}

Array image_to_array(const Image& img) {
  Array out({img.height, img.width, img.channels});
  std::copy(img.pixels.begin(), img.pixels.end(), out.mutable_data());
  return out;
}

Tensor tensor_from_array(const Array& a) {
  Shape shape(a.shape(), a.shape() + a.ndim());
  return Tensor(shape, std::vector<Scalar>(a.data(), a.data() + a.size()));
}

Array tensor_to_array(const Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  Array out(shape);
  std::copy(t.values().begin(), t.values().end(), out.mutable_data());
  return out;
}

TransformParams make_theta(const std::string& kind, const std::vector<Scalar>& theta) {
  return from_vector(parse_transform_kind(kind), theta);
}

py::tuple theta_tuple(const TransformParams& t) {
  return py::make_tuple(to_string(kind_of(t)), to_vector(t));
}

std::vector<Point> points_from_array(const Array& a) {
  if (a.ndim() != 2 || a.shape(1) != 2) throw InvalidArgument("points must be an N x 2 array");
  std::vector<Point> out(static_cast<std::size_t>(a.shape(0)));
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = {a.at(i, 0), a.at(i, 1)};
  return out;
}

Array points_to_array(const std::vector<Point>& pts) {
  Array out({static_cast<py::ssize_t>(pts.size()), py::ssize_t{2}});
  for (std::size_t i = 0; i < pts.size(); ++i) {
    out.mutable_at(i, 0) = pts[i].x;
    out.mutable_at(i, 1) = pts[i].y;
  }
  return out;
}

}  // namespace

PYBIND11_MODULE(_geomatch, m) {
  m.doc() = "Geometric matching CNN toolkit";

  py::register_exception<InvalidArgument>(m, "InvalidArgument", PyExc_ValueError);
  py::register_exception<IoError>(m, "IoError", PyExc_OSError);
  py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);
  py::register_exception<EstimationError>(m, "EstimationError", PyExc_RuntimeError);
  py::register_exception<UndefinedMetric>(m, "UndefinedMetric", PyExc_ValueError);
  py::register_exception<GenerationError>(m, "GenerationError", PyExc_RuntimeError);

  m.def("read_png", [](const std::filesystem::path& p) { return image_to_array(read_png(p)); }, py::arg("path"),
        "H x W x C float image in [0, 1].");
  m.def("write_png", [](const std::filesystem::path& p, const Array& a) { write_png(p, image_from_array(a)); },
        py::arg("path"), py::arg("image"));

  m.def("correlate",
        [](const Array& fa, const Array& fb) {
          return tensor_to_array(correlate(tensor_from_array(fa), tensor_from_array(fb)));
        },
        py::arg("features_a"), py::arg("features_b"),
        "h x w x d maps -> h x w x (h*w); channel k is A's position (k % h, k // h).");
  m.def("normalize_correspondences",
        [](const Array& c) { return tensor_to_array(normalize_correspondences(tensor_from_array(c))); },
        py::arg("correlation"));

  m.def("identity", [](const std::string& kind) { return to_vector(identity_transform(parse_transform_kind(kind))); },
        py::arg("kind"));
  m.def("apply_transform",
        [](const std::string& kind, const std::vector<Scalar>& theta, const Array& points) {
          const auto t = make_theta(kind, theta);
          auto pts = points_from_array(points);
          for (auto& p : pts) p = apply_transform(t, p);
          return points_to_array(pts);
        },
        py::arg("kind"), py::arg("theta"), py::arg("points"));
  m.def("grid_loss",
        [](const std::string& kind, const std::vector<Scalar>& estimate, const std::vector<Scalar>& truth,
           const std::string& truth_kind) {
          return grid_loss(make_theta(kind, estimate), make_theta(truth_kind.empty() ? kind : truth_kind, truth));
        },
        py::arg("kind"), py::arg("estimate"), py::arg("truth"), py::arg("truth_kind") = "");
  m.def("warp",
        [](const Array& image, const std::string& kind, const std::vector<Scalar>& theta, int out_h, int out_w) {
          const Image img = image_from_array(image);
          return image_to_array(warp(img, make_theta(kind, theta), out_h > 0 ? out_h : img.height,
                                     out_w > 0 ? out_w : img.width));
        },
        py::arg("image"), py::arg("kind"), py::arg("theta"), py::arg("out_height") = 0, py::arg("out_width") = 0,
        "Inverse-samples image A: output pixel p reads A at theta(p).");

  m.def("render_procedural_source",
        [](std::uint64_t seed, int size) { return image_to_array(render_procedural_source(seed, size)); },
        py::arg("seed"), py::arg("size") = 96);
  m.def("generate_pair",
        [](const Array& source, const std::string& kind, std::uint64_t seed, int crop_size) {
          SynthConfig cfg;
          cfg.crop_size = crop_size;
          const auto p = generate_pair(image_from_array(source), parse_transform_kind(kind), SamplingRanges{}, seed, cfg);
          py::dict d;
          d["image_a"] = image_to_array(p.image_a);
          d["image_b"] = image_to_array(p.image_b);
          d["kind"] = to_string(kind_of(p.theta_gt));
          d["theta"] = to_vector(p.theta_gt);
          return d;
        },
        py::arg("source"), py::arg("kind") = "affine", py::arg("seed") = 0, py::arg("crop_size") = 64);

  m.def("pck",
        [](const Array& pred, const Array& target, Scalar bbox_h, Scalar bbox_w, Scalar alpha) {
          return pck(points_from_array(pred), points_from_array(target), bbox_h, bbox_w, alpha);
        },
        py::arg("predicted"), py::arg("target"), py::arg("bbox_height"), py::arg("bbox_width"),
        py::arg("alpha") = 0.1);
  m.def("ransac_affine",
        [](const Array& points_b, const Array& points_a, int iterations, Scalar inlier_tol, bool range_filter,
           std::uint64_t seed) {
          const auto b = points_from_array(points_b), a = points_from_array(points_a);
          if (a.size() != b.size()) throw InvalidArgument("point arrays differ in length");
          std::vector<Correspondence> matches;
          for (std::size_t i = 0; i < a.size(); ++i) matches.push_back({b[i], a[i]});
          RansacConfig cfg;
          cfg.iterations = iterations;
          cfg.inlier_tol = inlier_tol;
          cfg.range_filter = range_filter;
          cfg.seed = seed;
          const auto r = ransac_affine(matches, cfg);
          return py::make_tuple(to_vector(r.theta), r.inliers);
        },
        py::arg("points_b"), py::arg("points_a"), py::arg("iterations") = 1000, py::arg("inlier_tol") = 0.05,
        py::arg("range_filter") = true, py::arg("seed") = 0,
        "Affine theta mapping points_b onto points_a, plus inlier indices.");

  py::class_<GeometryEstimator>(m, "Model")
      .def(py::init([](const std::string& kind, std::uint64_t seed) {
             return GeometryEstimator(ModelConfig::desk(parse_transform_kind(kind)), seed);
           }),
           py::arg("kind") = "affine", py::arg("seed") = 0, "Untrained desk-scale model (predicts the identity).")
      .def_static("load", [](const std::filesystem::path& p) { return load_model(p); }, py::arg("path"))
      .def("save", [](const GeometryEstimator& g, const std::filesystem::path& p) { save_checkpoint(p, snapshot_model(g)); },
           py::arg("path"))
      .def_property_readonly("kind", [](const GeometryEstimator& g) { return to_string(g.config().kind); })
      .def_property_readonly("input_size", [](const GeometryEstimator& g) { return g.config().features.input_size; })
      .def("estimate",
           [](GeometryEstimator& g, const Array& a, const Array& b) {
             return theta_tuple(g.estimate(image_from_array(a), image_from_array(b)));
           },
           py::arg("image_a"), py::arg("image_b"), "(kind, theta) mapping B coordinates into A.")
      .def("features",
           [](const GeometryEstimator& g, const Array& image) {
             const int n = g.config().features.input_size;
             const Tensor f = g.extract_features(to_tensor(resize(image_from_array(image), n, n)));
             const Shape s = f.shape();
             return tensor_to_array(reshape(f, {s[1], s[2], s[3]}));
           },
           py::arg("image"));

  m.def("estimate_two_stage",
        [](GeometryEstimator& affine, GeometryEstimator& tps, const Array& a, const Array& b) {
          const auto r = estimate_two_stage(affine, tps, image_from_array(a), image_from_array(b));
          return py::make_tuple(to_vector(r.affine), to_vector(r.composed));
        },
        py::arg("affine"), py::arg("tps"), py::arg("image_a"), py::arg("image_b"),
        "(affine theta, composed spline theta).");
}
