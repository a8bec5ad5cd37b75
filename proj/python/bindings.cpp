#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <optional>

#include "pnd/boxes.hpp"
#include "pnd/checkpoint.hpp"
#include "pnd/config.hpp"
#include "pnd/error.hpp"
#include "pnd/froc.hpp"
#include "pnd/gradcheck_suite.hpp"
#include "pnd/losses.hpp"
#include "pnd/metaimage.hpp"
#include "pnd/phantom.hpp"
#include "pnd/pipeline.hpp"
#include "pnd/records.hpp"
#include "pnd/rng.hpp"

namespace py = pybind11;
using namespace pnd;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;

py::array_t<float> to_numpy(const Volume& v) {
  py::array_t<float> out({v.dims[0], v.dims[1], v.dims[2]});
  std::copy(v.data.begin(), v.data.end(), out.mutable_data());
  return out;
}

Volume from_numpy(const FloatArray& a, const Vec3& spacing, const Vec3& origin) {
  if (a.ndim() != 3) throw ShapeError("volume array must be 3-D (z, y, x)");
  Volume v({static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)), static_cast<int>(a.shape(2))}, spacing, origin);
  std::copy(a.data(), a.data() + a.size(), v.data.begin());
  v.validate();
  return v;
}

}  // namespace

PYBIND11_MODULE(pnd, m) {
  m.doc() = "Two-stage pulmonary nodule detection: phantoms, box ops, losses, FROC and detection.";

  static py::exception<Error> base(m, "Error", PyExc_RuntimeError);
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      py::set_error(base, e.what());
    }
  });

  py::class_<BBox3D>(m, "BBox3D")
      .def(py::init([](Vec3 center, Vec3 size) { return BBox3D{center, size}; }), py::arg("center"), py::arg("size"))
      .def_readwrite("center", &BBox3D::center)
      .def_readwrite("size", &BBox3D::size)
      .def("volume", &BBox3D::volume)
      .def("__repr__", [](const BBox3D& b) {
        return "BBox3D(center=(" + std::to_string(b.center[0]) + ", " + std::to_string(b.center[1]) + ", " +
               std::to_string(b.center[2]) + "), size=(" + std::to_string(b.size[0]) + ", " +
               std::to_string(b.size[1]) + ", " + std::to_string(b.size[2]) + "))";
      });

  m.def("iou_3d", &iou_3d, py::arg("a"), py::arg("b"));
  m.def("encode_box", &encode_box, py::arg("gt"), py::arg("anchor"));
  m.def("decode_box", &decode_box, py::arg("anchor"), py::arg("deltas"));
  m.def(
      "nms_3d",
      [](const std::vector<BBox3D>& boxes, const std::vector<double>& scores, double iou_threshold, std::size_t max_keep) {
        if (boxes.size() != scores.size()) throw InputError("boxes and scores differ in length");
        std::vector<Proposal> props;
        for (std::size_t i = 0; i < boxes.size(); ++i) props.push_back({boxes[i], scores[i]});
        return nms_3d_indices(props, iou_threshold, max_keep);
      },
      py::arg("boxes"), py::arg("scores"), py::arg("iou_threshold"), py::arg("max_keep") = 200,
      "Indices kept by greedy 3-D NMS, in selection order.");

  m.def(
      "focal_loss",
      [](double g_t, double eta, double zeta) {
        const LossValue l = focal_loss(g_t, FocalLossConfig{eta, zeta});
        return py::make_tuple(l.loss, l.grad);
      },
      py::arg("g_t"), py::arg("eta") = 1.0, py::arg("zeta") = 2.0, "(loss, d loss / d g_t)");
  m.def(
      "smooth_l1",
      [](double pred, double target, double beta) {
        const LossValue l = smooth_l1(pred, target, beta);
        return py::make_tuple(l.loss, l.grad);
      },
      py::arg("pred"), py::arg("target"), py::arg("beta") = 1.0 / 9.0);
  m.def(
      "average_precision",
      [](const std::vector<double>& scores, const std::vector<int>& labels) { return average_precision(scores, labels); },
      py::arg("scores"), py::arg("labels"));

  py::class_<Annotation>(m, "Annotation")
      .def(py::init([](std::string id, Vec3 c, double d) { return Annotation{std::move(id), c, d}; }), py::arg("scan_id"),
           py::arg("center_world"), py::arg("diameter_mm"))
      .def_readwrite("scan_id", &Annotation::scan_id)
      .def_readwrite("center_world", &Annotation::center_world)
      .def_readwrite("diameter_mm", &Annotation::diameter_mm);
  py::class_<Candidate>(m, "Candidate")
      .def(py::init([](std::string id, Vec3 c, double p) { return Candidate{std::move(id), c, p}; }), py::arg("scan_id"),
           py::arg("center_world"), py::arg("probability"))
      .def_readwrite("scan_id", &Candidate::scan_id)
      .def_readwrite("center_world", &Candidate::center_world)
      .def_readwrite("probability", &Candidate::probability);

  m.def("read_annotations_csv", [](const std::string& t) { return read_annotations_csv(t); }, py::arg("text"));
  m.def("read_candidates_csv", [](const std::string& t) { return read_candidates_csv(t); }, py::arg("text"));
  m.def("write_annotations_csv", &write_annotations_csv, py::arg("annotations"));
  m.def("write_candidates_csv", &write_candidates_csv, py::arg("candidates"));

  m.def(
      "froc",
      [](const std::vector<Candidate>& candidates, const std::vector<Annotation>& annotations, int n_scans) {
        const MatchResult match = match_candidates(candidates, annotations);
        const FrocCurve curve = froc_curve(match, n_scans);
        const RecallReport recall = recall_report(match);
        py::list points;
        for (const auto& p : curve.points) points.append(py::make_tuple(p.fp_per_scan, p.sensitivity));
        py::dict d;
        d["points"] = points;
        d["operating_points"] = std::vector<double>(kFrocOperatingPoints.begin(), kFrocOperatingPoints.end());
        d["operating_sensitivities"] =
            std::vector<double>(curve.operating_sensitivities.begin(), curve.operating_sensitivities.end());
        d["mean_sensitivity"] = curve.mean_sensitivity;
        d["recall"] = recall.recall;
        d["candidate_count"] = recall.candidate_count;
        d["svg"] = render_froc_svg(curve, "FROC");
        return d;
      },
      py::arg("candidates"), py::arg("annotations"), py::arg("n_scans"),
      "FROC curve, the seven operating sensitivities, their mean, recall and an SVG plot.");

  m.def(
      "generate_phantom",
      [](std::array<int, 3> dims, double spacing, int nodule_count, double diameter_lo, double diameter_hi,
         double contrast, double noise_sigma, std::uint64_t seed, const std::string& scan_id) {
        PhantomConfig c;
        c.dims = dims;
        c.spacing = {spacing, spacing, spacing};
        c.nodule_count = nodule_count;
        c.diameter_lo_mm = diameter_lo;
        c.diameter_hi_mm = diameter_hi;
        c.contrast = contrast;
        c.noise_sigma = noise_sigma;
        c.seed = seed;
        Phantom p = generate_phantom(c, scan_id);
        return py::make_tuple(to_numpy(p.volume), p.annotations);
      },
      py::arg("dims") = std::array<int, 3>{96, 96, 96}, py::arg("spacing") = 0.7, py::arg("nodule_count") = 1,
      py::arg("diameter_lo") = 6.0, py::arg("diameter_hi") = 20.0, py::arg("contrast") = 0.5,
      py::arg("noise_sigma") = 0.05, py::arg("seed") = 42, py::arg("scan_id") = "scan_000",
      "(volume array (z, y, x), annotations) with origin at 0.");

  m.def(
      "read_metaimage",
      [](const std::string& path) {
        LoadedVolume lv = read_metaimage(path);
        return py::make_tuple(to_numpy(lv.volume), lv.volume.spacing, lv.volume.origin);
      },
      py::arg("path"), "(volume, spacing, origin), all (z, y, x); raw intensities.");
  m.def(
      "write_metaimage",
      [](const std::string& path, const FloatArray& a, Vec3 spacing, Vec3 origin) {
        write_metaimage(path, from_numpy(a, spacing, origin), ElementType::MetFloat);
      },
      py::arg("path"), py::arg("volume"), py::arg("spacing"), py::arg("origin") = Vec3{0, 0, 0});

  m.def(
      "detect",
      [](const FloatArray& a, Vec3 spacing, Vec3 origin, const std::string& rpn_path,
         std::optional<std::string> fpr_path, std::optional<double> threshold, std::optional<std::string> config_path,
         const std::string& scan_id) {
        const Volume v = from_numpy(a, spacing, origin);
        // Tiling and crop settings come from the run config; the network shape from the checkpoint.
        const RunConfig cfg = config_path ? load_run_config(*config_path) : RunConfig{};
        RpnModel rpn = rpn_from_checkpoint(load_checkpoint(rpn_path));
        RpnConfig rc = cfg.stage1;
        rc.feature_stride = rpn.feature_stride();
        rc.anchor_scales = rpn.anchor_scales();
        std::optional<FprModel> fpr;
        if (fpr_path) fpr.emplace(fpr_from_checkpoint(load_checkpoint(*fpr_path)));
        const double cut = threshold.value_or(cfg.stage2.threshold);
        py::gil_scoped_release release;
        return detect_candidates(v, scan_id, rpn, rc, fpr ? &*fpr : nullptr, cfg.stage2, cut);
      },
      py::arg("volume"), py::arg("spacing"), py::arg("origin"), py::arg("rpn"), py::arg("fpr") = std::nullopt,
      py::arg("threshold") = std::nullopt, py::arg("config") = std::nullopt, py::arg("scan_id") = "scan",
      "Candidates for a normalized volume. `config` is a run config file as used by the pnd tool.");

  m.def(
      "init_checkpoint",
      [](const std::string& path, int stage, std::optional<std::string> config_path, std::uint64_t seed) {
        const RunConfig cfg = config_path ? load_run_config(*config_path) : RunConfig{};
        if (stage == 1) {
          RpnModel model(cfg.stage1);
          model.init(seed);
          save_checkpoint(path, make_checkpoint(model));
        } else if (stage == 2) {
          FprModel model(cfg.stage2);
          model.init(seed);
          save_checkpoint(path, make_checkpoint(model));
        } else {
          throw ConfigError("stage must be 1 or 2");
        }
      },
      py::arg("path"), py::arg("stage"), py::arg("config") = std::nullopt, py::arg("seed") = 42,
      "Writes a freshly initialized (untrained) stage-1 or stage-2 checkpoint.");

  m.def(
      "gradcheck",
      [](std::uint64_t seed) {
        std::vector<std::pair<std::string, double>> out;
        for (const auto& r : run_gradcheck_suite(seed)) out.emplace_back(r.component, r.max_rel_error);
        return out;
      },
      py::arg("seed") = 42, "[(component, max relative error)] from the central-difference suite.");

  m.def("derive_seed", py::overload_cast<std::uint64_t, std::string_view>(&derive_seed), py::arg("base"),
        py::arg("label"));
}
