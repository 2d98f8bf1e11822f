#include "metatune/loopshape.hpp"

#include <cmath>
#include <cstdio>
#include <numbers>

namespace metatune {

namespace {

constexpr double kDeg = 180.0 / std::numbers::pi;
// Feasible window for the required controller phase, degrees.
constexpr double kPhaseLo = -89.0, kPhaseHi = -0.5;
constexpr double kPmTolDeg = 0.5;
constexpr double kWcRelTol = 0.01;

double wrap_deg(double a) {
  a = std::fmod(a, 360.0);
  if (a <= -180.0) a += 360.0;
  if (a > 180.0) a -= 360.0;
  return a;
}

// Required controller phase at w for the phase-margin target, degrees.
double required_phase(const RationalTf& plant, double w, double pm_deg) {
  const double plant_phase = std::arg(plant.at_omega(w)) * kDeg;
  return wrap_deg(-180.0 + pm_deg - plant_phase);
}

// Closed-form design at crossover w: Ti from the prewarped phase condition,
// kp from the magnitude condition.
ControllerParams solve_at(const RationalTf& plant, double w, double phi_c_deg, PiForm form) {
  const double Ts = plant.Ts;
  const double wp = prewarp(w, Ts);
  const double t = std::tan(-phi_c_deg / kDeg);
  const double Ti = (form == PiForm::integrator) ? 1.0 / (wp * t) : t / wp;
  const RationalTf c_unit = tustin_pi(1.0, Ti, Ts, form);
  const double kp = 1.0 / (std::abs(plant.at_omega(w)) * std::abs(c_unit.at_omega(w)));
  return {kp, Ti};
}

MarginReport loop_margins(const RationalTf& plant, const ControllerParams& phi, PiForm form) {
  return margins(tustin_pi(phi.kp, phi.Ti, plant.Ts, form) * plant);
}

}  // namespace

void ShapingTargets::validate(double nyquist_hz) const {
  if (!(phase_margin_deg > 0.0) || !(phase_margin_deg < 180.0))
    throw std::invalid_argument("ShapingTargets: phase margin must be in (0, 180) deg");
  if (!(crossover_hz > 0.0) || !(crossover_hz < nyquist_hz))
    throw std::invalid_argument("ShapingTargets: crossover must be below Nyquist");
}

ControllerParams tune_pi(const RationalTf& plant, const ShapingTargets& targets, PiForm form) {
  targets.validate(plant.nyquist() / (2.0 * std::numbers::pi));
  const double wc = 2.0 * std::numbers::pi * targets.crossover_hz;

  const double phi_c = required_phase(plant, wc, targets.phase_margin_deg);
  if (phi_c > kPhaseLo && phi_c <= kPhaseHi) {
    const ControllerParams phi = solve_at(plant, wc, phi_c, form);
    const MarginReport rep = loop_margins(plant, phi, form);
    if (rep.margin_defined &&
        std::abs(rep.phase_margin_deg - targets.phase_margin_deg) <= kPmTolDeg &&
        std::abs(rep.gain_crossover_hz - targets.crossover_hz) <=
            kWcRelTol * targets.crossover_hz &&
        rep.closed_loop_stable)
      return phi;
    char msg[160];
    std::snprintf(msg, sizeof(msg),
                  "tune_pi: verification failed at the exact solve "
                  "(phase margin %.3f deg, crossover %.4f Hz)",
                  rep.phase_margin_deg, rep.gain_crossover_hz);
    throw TuningError(msg, rep, true);
  }

  // No exact solution at wc; sweep upward for the first frequency where a
  // PI can supply the required phase, then design there (crossover >= target).
  const double w_top = std::min(10.0 * wc, 0.99 * plant.nyquist());
  const auto sweep = log_grid(wc, w_top, 200);
  for (double w : sweep) {
    const double p = required_phase(plant, w, targets.phase_margin_deg);
    if (!(p > kPhaseLo && p <= kPhaseHi)) continue;
    const ControllerParams phi = solve_at(plant, w, p, form);
    const MarginReport rep = loop_margins(plant, phi, form);
    if (rep.margin_defined &&
        rep.phase_margin_deg >= targets.phase_margin_deg - kPmTolDeg &&
        rep.gain_crossover_hz >= (1.0 - kWcRelTol) * targets.crossover_hz &&
        rep.closed_loop_stable)
      return phi;
  }
  char msg[200];
  std::snprintf(msg, sizeof(msg),
                "tune_pi: infeasible targets (required controller phase %.2f deg at the "
                "target crossover; sweep to %.2f rad/s found no feasible design)",
                phi_c, w_top);
  throw TuningError(msg);
}

ControllerParams tune_pi(const PlantRealization& plant, const ShapingTargets& targets,
                         PiForm form) {
  return tune_pi(ss_to_tf(plant.sys), targets, form);
}

DesignCheck verify_design(const RationalTf& plant, const ControllerParams& phi,
                          const ShapingTargets& targets, PiForm form) {
  DesignCheck chk;
  chk.report = loop_margins(plant, phi, form);
  if (chk.report.margin_defined) {
    chk.phase_margin_ok = chk.report.phase_margin_deg >= targets.phase_margin_deg - kPmTolDeg;
    chk.crossover_ok =
        chk.report.gain_crossover_hz >= (1.0 - kWcRelTol) * targets.crossover_hz;
  }
  return chk;
}

DesignCheck verify_design(const PlantRealization& plant, const ControllerParams& phi,
                          const ShapingTargets& targets, PiForm form) {
  return verify_design(ss_to_tf(plant.sys), phi, targets, form);
}

}  // namespace metatune
