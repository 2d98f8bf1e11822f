// Python bindings for the main pipeline operations: plant construction and
// simulation, PI tuning, dataset generation, identification baselines, and
// trained-regressor inference.

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "metatune/dataset.hpp"
#include "metatune/eval.hpp"
#include "metatune/loopshape.hpp"
#include "metatune/lti.hpp"
#include "metatune/sysid.hpp"
#include "metatune/train.hpp"
#include "metatune/vehicle.hpp"

namespace py = pybind11;
using namespace metatune;

namespace {

IoRecord make_record(std::vector<double> u, std::vector<double> y, double Ts) {
  IoRecord rec;
  rec.u = std::move(u);
  rec.y = std::move(y);
  rec.Ts = Ts;
  rec.validate();
  return rec;
}

py::dict tune_dict(double mu_s, double m_delta) {
  const VehicleParams vp;
  const ShapingTargets targets;
  const PlantRealization plant = build_plant(vp, {mu_s, m_delta});
  const ControllerParams phi = tune_pi(plant, targets);
  const DesignCheck check = verify_design(plant, phi, targets);
  py::dict d;
  d["kp"] = phi.kp;
  d["Ti"] = phi.Ti;
  d["phase_margin_deg"] = check.report.phase_margin_deg;
  d["gain_crossover_hz"] = check.report.gain_crossover_hz;
  d["stable"] = check.report.closed_loop_stable;
  return d;
}

}  // namespace

PYBIND11_MODULE(_metatune, m) {
  m.doc() = "Digital-twin controller-tuning pipeline (C++ core)";
  m.attr("DATASET_FORMAT") = kDatasetFormatVersion;
  m.attr("MODEL_FORMAT") = kModelFormatVersion;
  m.attr("REPORT_FORMAT") = kReportFormatVersion;

  m.def("tune", &tune_dict, py::arg("mu_s") = 1.0, py::arg("m_delta") = 0.0,
        "Loop-shaping PI tuning for one vehicle realization; returns gains and margins.");

  m.def(
      "simulate_plant",
      [](double mu_s, double m_delta, std::vector<double> u) {
        const PlantRealization plant = build_plant(VehicleParams{}, {mu_s, m_delta});
        return simulate(plant.sys, u);
      },
      py::arg("mu_s"), py::arg("m_delta"), py::arg("u"),
      "Yaw-rate response of the realization to a steer sequence (zero initial state).");

  m.def("prbs", &prbs, py::arg("n"), py::arg("amplitude"), py::arg("seed"),
        py::arg("order") = 11, "Pseudo-random binary excitation of +/- amplitude.");

  m.def(
      "generate",
      [](const std::string& manifest_json, int threads) {
        const DatasetManifest man = DatasetManifest::from_json(manifest_json);
        const DatasetTable table = generate(man, nullptr, threads);
        py::list rows;
        for (const auto& r : table.rows) {
          py::dict d;
          d["i"] = r.index;
          d["split"] = r.split;
          d["mu_s"] = r.theta.mu_s;
          d["m_delta"] = r.theta.m_delta;
          d["kp"] = r.phi.kp;
          d["Ti"] = r.phi.Ti;
          d["u"] = r.record.u;
          d["y"] = r.record.y;
          rows.append(std::move(d));
        }
        return rows;
      },
      py::arg("manifest_json"), py::arg("threads") = 1,
      "Materialize a dataset manifest (JSON text) into labeled scenario rows.");

  m.def(
      "gb_identify",
      [](std::vector<double> u, std::vector<double> y, double Ts) {
        const IoRecord rec = make_record(std::move(u), std::move(y), Ts);
        const GbResult r = gb_identify(rec, VehicleParams{});
        py::dict d;
        d["mu_s"] = r.theta.mu_s;
        d["m_delta"] = r.theta.m_delta;
        d["cost"] = r.cost;
        d["iters"] = r.iters;
        d["converged"] = r.converged;
        return d;
      },
      py::arg("u"), py::arg("y"), py::arg("Ts") = 0.02,
      "Gray-box identification of (mu_s, m_delta) from one record.");

  m.def(
      "bb_identify",
      [](std::vector<double> u, std::vector<double> y, double Ts) {
        const IoRecord rec = make_record(std::move(u), std::move(y), Ts);
        const BbResult r = bb_identify(rec);
        py::dict d;
        d["kind"] = r.model.kind_name();
        d["order"] = r.order;
        d["a"] = r.model.a;
        d["b"] = r.model.b;
        d["c"] = r.model.c;
        d["f"] = r.model.f;
        d["fit_percent"] = r.fit_percent;
        return d;
      },
      py::arg("u"), py::arg("y"), py::arg("Ts") = 0.02,
      "Black-box polynomial identification (ARX/ARMAX/OE with order selection).");

  m.def(
      "tune_from_black_box",
      [](std::vector<double> u, std::vector<double> y, double Ts) {
        const IoRecord rec = make_record(std::move(u), std::move(y), Ts);
        const BbResult r = bb_identify(rec);
        const ControllerParams phi = tune_from_model(r.model, ShapingTargets{});
        py::dict d;
        d["kp"] = phi.kp;
        d["Ti"] = phi.Ti;
        return d;
      },
      py::arg("u"), py::arg("y"), py::arg("Ts") = 0.02,
      "Identify a black-box model and tune a PI controller for it.");

  m.def(
      "vrft",
      [](std::vector<double> u, std::vector<double> y, double Ts, double crossover_hz) {
        const IoRecord rec = make_record(std::move(u), std::move(y), Ts);
        const VrftResult r = vrft(rec, ReferenceModel::from_bandwidth(crossover_hz, Ts));
        py::dict d;
        d["kp"] = r.phi.kp;
        d["Ti"] = r.phi.Ti;
        d["valid"] = r.valid;
        return d;
      },
      py::arg("u"), py::arg("y"), py::arg("Ts") = 0.02, py::arg("crossover_hz") = 3.5,
      "Virtual-reference direct controller estimation from one record.");

  m.def(
      "relative_rms",
      [](std::vector<double> truth, std::vector<double> est) {
        const RelRms r = relative_rms(truth, est);
        py::dict d;
        d["rms_pct"] = r.rms_pct;
        d["used"] = r.used;
        d["excluded"] = r.excluded;
        return d;
      },
      py::arg("truth"), py::arg("est"),
      "Relative rms of (1 - truth/estimate) in percent; bad estimates excluded.");

  py::class_<RegressorModel>(m, "Model", "Trained neural controller-parameter regressor")
      .def_static("load", &RegressorModel::load, py::arg("path"))
      .def_property_readonly("kind", [](const RegressorModel& mdl) { return mdl.kind; })
      .def_property_readonly("record_length",
                             [](const RegressorModel& mdl) { return mdl.record_length(); })
      .def(
          "predict",
          [](RegressorModel& mdl, std::vector<double> u, std::vector<double> y, double Ts) {
            const IoRecord rec = make_record(std::move(u), std::move(y), Ts);
            const PredictResult r = predict(mdl, rec);
            py::dict d;
            d["kp"] = r.phi.kp;
            d["Ti"] = r.phi.Ti;
            d["clamped"] = r.clamped;
            return d;
          },
          py::arg("u"), py::arg("y"), py::arg("Ts") = 0.02);
}
