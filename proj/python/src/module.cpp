#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "nienie/error.hpp"
#include "nienie/guidance.hpp"
#include "nienie/model.hpp"
#include "nienie/rhythm.hpp"
#include "nienie/session.hpp"
#include "nienie/stress.hpp"
#include "nienie/windowing.hpp"

namespace py = pybind11;
using namespace nienie;

namespace {

std::shared_ptr<const StressModel> shared_model(const StressModel& m) { return std::make_shared<StressModel>(m); }

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "NieNie rhythm engine core";

  py::register_exception<Error>(m, "NieNieError", PyExc_RuntimeError);

  m.def("window_count", &windowing::window_count, py::arg("series_len"), py::arg("window_len") = windowing::kWindowLen,
        py::arg("step") = windowing::kStep);

  py::class_<StressModel>(m, "StressModel")
      .def_static("load", &load_model, py::arg("path"))
      .def("save", [](const StressModel& self, const std::string& path) { save_model(self, path); }, py::arg("path"))
      .def("predict_proba", &StressModel::predict_proba, py::arg("window"),
           "Class probabilities [baseline, stress, amusement] for a raw 40x3 window.");

  m.def("logistic", &stress::logistic);
  m.def("adjusted_score", [](double raw, double mean, double std, double k) {
    stress::CalibrationProfile p;
    p.baseline_mean = mean;
    p.baseline_std = std;
    p.k_sensitivity = k;
    return stress::adjusted_score(raw, p);
  }, py::arg("raw"), py::arg("mean"), py::arg("std"), py::arg("k") = 1.0);

  py::class_<rhythm::RhythmPattern>(m, "RhythmPattern")
      .def(py::init<>())
      .def_readwrite("cycle_period_ms", &rhythm::RhythmPattern::cycle_period_ms)
      .def_readwrite("squeeze_fraction", &rhythm::RhythmPattern::squeeze_fraction)
      .def_readwrite("reps", &rhythm::RhythmPattern::reps)
      .def_property_readonly("squeeze_window_ms", &rhythm::RhythmPattern::squeeze_window_ms)
      .def_property_readonly("duration_ms", &rhythm::RhythmPattern::duration_ms)
      .def("beats", [](const rhythm::RhythmPattern& p) {
        std::vector<std::pair<std::int64_t, std::int64_t>> out;
        for (const auto& b : p.beats()) out.emplace_back(b.squeeze_ms, b.release_ms);
        return out;
      });
  m.def("generate_pattern", &rhythm::generate_pattern, py::arg("smoothed_stress"));

  m.def("plan_ramp", [](const rhythm::RhythmPattern& initial, const std::string& preset, std::int64_t start_ms) {
    auto policy = rhythm::ramp_policy_for(preset);
    if (!policy) throw py::value_error("unknown ramp preset '" + preset + "'");
    std::vector<std::tuple<std::int64_t, std::int64_t, int>> blocks;
    for (const auto& b : rhythm::plan_ramp(initial, *policy, start_ms).blocks)
      blocks.emplace_back(b.start_ms, b.pattern.cycle_period_ms, b.pattern.reps);
    return blocks;
  }, py::arg("initial"), py::arg("preset") = "standard", py::arg("start_ms") = 0,
     "Ramp blocks as (start_ms, period_ms, reps).");

  m.def("detect_squeeze_events", [](const std::vector<std::pair<std::int64_t, double>>& stream) {
    std::vector<rhythm::SqueezeSample> samples;
    for (const auto& [t, v] : stream) samples.push_back({t, v});
    std::vector<std::tuple<std::int64_t, double, std::int64_t>> out;
    for (const auto& e : rhythm::detect_squeeze_events(samples)) out.emplace_back(e.onset_ms, e.peak_intensity, e.release_ms);
    return out;
  }, py::arg("stream"), "Events as (onset_ms, peak_intensity, release_ms).");

  m.def("match_onsets", [](const std::vector<std::int64_t>& beats, const std::vector<std::int64_t>& onsets,
                           std::int64_t tol) {
    const auto r = rhythm::match_onsets(beats, onsets, tol).report;
    return py::dict(py::arg("beats_total") = r.beats_total, py::arg("beats_hit") = r.beats_hit,
                    py::arg("mean_abs_timing_error_ms") = r.mean_abs_timing_error_ms,
                    py::arg("sync_score") = r.sync_score);
  }, py::arg("beats"), py::arg("onsets"), py::arg("tolerance_ms") = 250);

  m.def("select_tone", [](double sync, double trend) {
    guidance::GuidanceContext ctx;
    ctx.sync_score_recent = sync;
    ctx.stress_trend = trend;
    return std::string(guidance::to_string(guidance::select_tone(ctx)));
  }, py::arg("sync_score"), py::arg("stress_trend"));
  m.def("sanitize", [](const std::string& raw) { return guidance::sanitize(raw); }, py::arg("raw"));

  // Session helpers exchange JSON text; the Python wrapper decodes it.
  m.def("_simulate", [](const std::string& model_path, std::uint64_t seed, double skill, const std::string& config_json) {
    auto model = shared_model(load_model(model_path));
    session::SessionConfig cfg = session::SessionConfig::from_json(session::Json::parse(config_json));
    cfg.seed = seed;
    cfg.session_id = "sim-" + std::to_string(seed);
    session::SimulatedUser user;
    user.skill = skill;
    py::gil_scoped_release release;
    return session::run_simulated(cfg, model, user).to_jsonl();
  }, py::arg("model_path"), py::arg("seed"), py::arg("skill"), py::arg("config_json"));
  m.def("_summarize", [](const std::string& jsonl) {
    return session::evaluate_session(session::EventLog::from_jsonl(jsonl)).to_json().dump();
  }, py::arg("jsonl"));
  m.def("_replay", [](const std::string& jsonl, const std::string& model_path) {
    auto model = shared_model(load_model(model_path));
    return session::replay(session::EventLog::from_jsonl(jsonl), model).to_jsonl();
  }, py::arg("jsonl"), py::arg("model_path"));
}
