#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cstring>

#include "dyra/core.hpp"
#include "dyra/harness.hpp"
#include "dyra/imaging.hpp"
#include "dyra/ingest.hpp"
#include "dyra/losses.hpp"
#include "dyra/predictor.hpp"
#include "dyra/sched.hpp"

namespace py = pybind11;
using namespace dyra;

namespace {

StageMode stage_mode_from(const std::string& text) {
  if (text == "one_stage") return StageMode::OneStage;
  if (text == "two_stage") return StageMode::TwoStage;
  throw std::invalid_argument("stage_mode must be 'one_stage' or 'two_stage'");
}

// batch: [(phi, [(r_prime, scale_index), ...]), ...]
double pareto_from_lists(
    const std::vector<std::pair<double, std::vector<std::pair<double, int>>>>& batch,
    double tau) {
  std::vector<ImageScaleCase> cases;
  cases.reserve(batch.size());
  for (const auto& [phi, boxes] : batch) {
    ImageScaleCase image;
    image.phi = phi;
    for (const auto& [r_prime, index] : boxes) {
      image.boxes.push_back(ScaledBox{r_prime, index});
    }
    cases.push_back(std::move(image));
  }
  return pareto_scale_loss(cases, ScaleSet(), tau);
}

py::array_t<std::uint8_t> rescale_array(const py::array_t<std::uint8_t>& array, double phi,
                                        int threads) {
  const py::buffer_info info = array.request();
  if (info.ndim != 2 && !(info.ndim == 3 && info.shape[2] == 3)) {
    throw std::invalid_argument("expected a (H, W) or (H, W, 3) uint8 array");
  }
  RasterImage img(static_cast<int>(info.shape[1]), static_cast<int>(info.shape[0]),
                  info.ndim == 2 ? 1 : 3);
  const auto contiguous = py::array_t<std::uint8_t, py::array::c_style>::ensure(array);
  std::memcpy(img.samples.data(), contiguous.data(), img.samples.size());
  const RasterImage out = rescale(img, phi, threads);
  std::vector<py::ssize_t> shape = {out.height, out.width};
  if (info.ndim == 3) shape.push_back(3);
  py::array_t<std::uint8_t> result(shape);
  std::memcpy(result.mutable_data(), out.samples.data(), out.samples.size());
  return result;
}

}  // namespace

PYBIND11_MODULE(_dyra, m) {
  m.doc() = "adaptive-resolution scale-factor toolkit";

  py::class_<SizeRange>(m, "SizeRange")
      .def(py::init<double, double>(), py::arg("lower"), py::arg("upper"))
      .def_readonly("lower", &SizeRange::lower)
      .def_readonly("upper", &SizeRange::upper)
      .def("midpoint", &SizeRange::midpoint);

  py::class_<BalanceState>(m, "BalanceState")
      .def(py::init<>())
      .def(py::init<double, double, double, double, double>(), py::arg("gamma"),
           py::arg("s_ap_small"), py::arg("s_ap_large"), py::arg("m_lower"),
           py::arg("m_upper"))
      .def_readwrite("gamma", &BalanceState::gamma)
      .def_readonly("s_ap_small", &BalanceState::s_ap_small)
      .def_readonly("s_ap_large", &BalanceState::s_ap_large)
      .def_readonly("m_lower", &BalanceState::m_lower)
      .def_readonly("m_upper", &BalanceState::m_upper)
      .def("range", &BalanceState::range)
      .def("s_ap_mean", &BalanceState::s_ap_mean)
      .def("group_boundary", &BalanceState::group_boundary);

  py::class_<ScalerConfig>(m, "ScalerConfig")
      .def(py::init<>())
      .def(py::init<double>(), py::arg("tau"))
      .def_readwrite("tau", &ScalerConfig::tau)
      .def_readwrite("conv_layers", &ScalerConfig::conv_layers)
      .def_readwrite("encoder_blocks", &ScalerConfig::encoder_blocks)
      .def_readwrite("hidden_dim", &ScalerConfig::hidden_dim)
      .def_readwrite("tokens", &ScalerConfig::tokens)
      .def_readwrite("stem_channels", &ScalerConfig::stem_channels)
      .def_readwrite("thumbnail_side", &ScalerConfig::thumbnail_side)
      .def("min_scale", &ScalerConfig::min_scale)
      .def("max_scale", &ScalerConfig::max_scale);

  m.def("saturated_sigmoid", &saturated_sigmoid, py::arg("x"), py::arg("range"));
  m.def(
      "size_ratio",
      [](double area, const SizeRange& range) {
        const double w = std::sqrt(area);
        const SizeRatio ratio = size_ratio(BoxRecord(0, w, area / w), range);
        return std::make_pair(ratio.r, ratio.r_prime);
      },
      py::arg("area"), py::arg("range"), "returns (r, r_prime) for a box area");
  m.def(
      "bound_scale",
      [](double raw, double tau) { return bound_scale(raw, ScalerConfig(tau)); },
      py::arg("raw"), py::arg("tau") = 2.0);
  m.def(
      "assign_scale",
      [](double area, const std::vector<double>& scales) {
        return assign_scale_area(area, scales.empty() ? ScaleSet() : ScaleSet(scales));
      },
      py::arg("area"), py::arg("scales") = std::vector<double>{});

  m.def("scale_loss",
        py::overload_cast<double, double, double>(&scale_loss), py::arg("r_prime"),
        py::arg("phi"), py::arg("tau") = 2.0);
  m.def("pareto_scale_loss", &pareto_from_lists, py::arg("batch"), py::arg("tau") = 2.0,
        "batch is a list of (phi, [(r_prime, scale_index), ...])");
  m.def("f_norm", &f_norm, py::arg("pair"));
  m.def("f_sub", &f_sub, py::arg("pair"));
  m.def("min_max_plus_one", &min_max_plus_one, py::arg("losses"));

  m.def(
      "balance_loss_after_avg",
      [](double mean_down, double mean_up, std::size_t n_down, std::size_t n_up,
         const BalanceState& state) {
        GroupSplit split;
        split.loc_down = mean_down * static_cast<double>(n_down);
        split.loc_up = mean_up * static_cast<double>(n_up);
        split.n_down = n_down;
        split.n_up = n_up;
        const BalanceResult r = balance_loss_after_avg(split, state);
        return py::make_tuple(r.loss, r.target, r.updated);
      },
      py::arg("mean_down"), py::arg("mean_up"), py::arg("n_down") = 1, py::arg("n_up") = 1,
      py::arg("state") = BalanceState(), "returns (loss, target, updated)");
  m.def(
      "balance_loss_before_avg",
      [](const std::vector<std::pair<double, bool>>& boxes, const BalanceState& state) {
        std::vector<TaggedBoxLoss> tagged;
        tagged.reserve(boxes.size());
        for (const auto& [loss, in_down] : boxes) {
          tagged.push_back(TaggedBoxLoss{loss, in_down});
        }
        const BalanceResult r = balance_loss_before_avg(tagged, state);
        return py::make_tuple(r.loss, r.target, r.updated);
      },
      py::arg("boxes"), py::arg("state") = BalanceState(),
      "boxes is a list of (loc_loss, in_down_group)");

  m.def(
      "two_stage_compose",
      [](const std::vector<double>& bal, const std::vector<double>& loc) {
        return two_stage_compose(bal, loc);
      },
      py::arg("bal"), py::arg("loc"));
  m.def(
      "total_loss",
      [](double cls, const std::vector<double>& loc, double ps,
         const std::vector<double>& bal, const std::string& mode) {
        return total_loss(TotalLossParts{cls, loc, ps, bal}, stage_mode_from(mode));
      },
      py::arg("cls"), py::arg("loc"), py::arg("ps"), py::arg("bal"),
      py::arg("mode") = "one_stage");

  py::class_<ConstCosineSchedule>(m, "ConstCosineSchedule")
      .def(py::init<double, std::int64_t, std::int64_t, double>(), py::arg("base_lr"),
           py::arg("total_steps"), py::arg("switch_step"), py::arg("final_lr") = 0.0)
      .def_readonly("base_lr", &ConstCosineSchedule::base_lr)
      .def_readonly("total_steps", &ConstCosineSchedule::total_steps)
      .def_readonly("switch_step", &ConstCosineSchedule::switch_step)
      .def_readonly("final_lr", &ConstCosineSchedule::final_lr);
  m.def("lr_at", &lr_at, py::arg("step"), py::arg("schedule"));

  py::class_<SurrogateDetector>(m, "SurrogateDetector")
      .def(py::init<double, double>(), py::arg("s_opt"), py::arg("k"))
      .def_readonly("s_opt", &SurrogateDetector::s_opt)
      .def_readonly("k", &SurrogateDetector::k)
      .def("loss", &SurrogateDetector::loss, py::arg("area"), py::arg("phi"));

  m.def(
      "gamma_equilibrium",
      [](double gamma_init, double group_loss, int steps, double lr) {
        BalanceState state;
        state.gamma = gamma_init;
        return gamma_equilibrium(equal_loss_splits(group_loss), state, steps, lr);
      },
      py::arg("gamma_init"), py::arg("group_loss") = 0.4, py::arg("steps") = 2000,
      py::arg("lr") = 0.005, "gamma trace under equal per-group losses");

  py::class_<PredictorParams>(m, "PredictorParams")
      .def_property_readonly("size", &PredictorParams::size)
      .def("all_finite", &PredictorParams::all_finite);
  m.def(
      "predictor_init",
      [](std::uint64_t seed, const ScalerConfig& cfg, const std::string& mode) {
        return predictor_init(seed, cfg,
                              mode == "thumbnail" ? InputMode::Thumbnail
                                                  : InputMode::Features);
      },
      py::arg("seed"), py::arg("config") = ScalerConfig(), py::arg("mode") = "features");
  m.def(
      "predictor_eval",
      [](const PredictorParams& params, const std::vector<double>& input,
         const ScalerConfig& cfg) { return predictor_eval(params, input, cfg); },
      py::arg("params"), py::arg("input"), py::arg("config") = ScalerConfig());
  m.def("save_checkpoint", &save_checkpoint, py::arg("params"), py::arg("path"));
  m.def("load_checkpoint", &load_checkpoint, py::arg("path"));
  m.def(
      "image_features",
      [](const std::vector<std::pair<double, double>>& boxes) {
        std::vector<BoxRecord> records;
        records.reserve(boxes.size());
        for (const auto& [w, h] : boxes) records.emplace_back(0, w, h);
        const auto f = image_features(records);
        return std::vector<double>(f.begin(), f.end());
      },
      py::arg("boxes"), "boxes is a list of (width, height)");

  m.def(
      "annotation_stats_json",
      [](const std::string& path, double gamma) {
        BalanceState state;
        state.gamma = gamma;
        return stats_to_json(dataset_stats(parse_annotations(path), state));
      },
      py::arg("path"), py::arg("gamma") = 6.8);

  m.def("rescale", &rescale_array, py::arg("image"), py::arg("phi"), py::arg("threads") = 1,
        "bilinear rescale of a uint8 (H, W[, 3]) array");

  m.attr("__version__") = "0.1.0";
}
