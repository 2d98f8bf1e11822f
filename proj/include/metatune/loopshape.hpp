#pragma once

#include <stdexcept>
#include <string>

#include "metatune/lti.hpp"
#include "metatune/vehicle.hpp"

namespace metatune {

/// PI tuning knobs phi = (kp, Ti).
struct ControllerParams {
  double kp = 0.0;
  double Ti = 0.0;  // integral time, s
};

/// Loop-shaping targets: phase margin and gain-crossover frequency.
struct ShapingTargets {
  double phase_margin_deg = 80.0;
  double crossover_hz = 3.5;

  void validate(double nyquist_hz) const;
};

/// Thrown when no PI meets the targets, or when post-solve verification fails;
/// carries the margins achieved by the rejected design when available.
class TuningError : public std::runtime_error {
 public:
  TuningError(const std::string& what, MarginReport achieved = {}, bool has_achieved = false)
      : std::runtime_error(what), achieved_(achieved), has_achieved_(has_achieved) {}

  bool has_achieved() const { return has_achieved_; }
  const MarginReport& achieved() const { return achieved_; }

 private:
  MarginReport achieved_;
  bool has_achieved_;
};

/// verify_design output: measured margins plus satisfaction flags at the
/// 0.5 deg / 1 % tolerances.
struct DesignCheck {
  MarginReport report;
  bool phase_margin_ok = false;
  bool crossover_ok = false;
  bool satisfied() const { return phase_margin_ok && crossover_ok && report.closed_loop_stable; }
};

/// Loop-shaping rule: phase condition solved in closed form through the
/// bilinear prewarp identity, gain condition by magnitude scaling, then a
/// margins() verification pass. A sweep over [wc, 10 wc] covers plants whose
/// phase lag at the target crossover is too small for an exact PI solution.
ControllerParams tune_pi(const RationalTf& plant, const ShapingTargets& targets,
                         PiForm form = PiForm::integrator);
ControllerParams tune_pi(const PlantRealization& plant, const ShapingTargets& targets,
                         PiForm form = PiForm::integrator);

DesignCheck verify_design(const RationalTf& plant, const ControllerParams& phi,
                          const ShapingTargets& targets, PiForm form = PiForm::integrator);
DesignCheck verify_design(const PlantRealization& plant, const ControllerParams& phi,
                          const ShapingTargets& targets, PiForm form = PiForm::integrator);

}  // namespace metatune
