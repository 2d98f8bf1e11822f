#pragma once

#include <string>
#include <vector>

#include "metatune/levmar.hpp"
#include "metatune/loopshape.hpp"
#include "metatune/lti.hpp"
#include "metatune/vehicle.hpp"

namespace metatune {

/// Gray-box identification: fit the physical uncertainty parameters by
/// simulation-error minimization over the prior box.
struct GbResult {
  UncertaintySample theta;
  double cost = 0.0;      // sum of squared output errors at the solution
  double grad_norm = 0.0;
  int iters = 0;
  bool converged = false; // gradient-tolerance stop (vs iteration/damping cap)
  bool at_bound = false;  // solution pinned to the prior support boundary
};

GbResult gb_identify(const IoRecord& rec, const VehicleParams& vp,
                     UncertaintySample theta0 = {0.7, 150.0},
                     const LevMarOptions& opt = {});

/// Input-output polynomial models, unit delay, monic denominators.
/// Coefficient vectors store (a_1..a_na) etc. of
///   A(q) y = B(q) u + C(q) e          (ARX: C = 1; ARMAX: general C)
///   y = B(q)/F(q) u + e               (OE)
/// with A(q) = 1 + a_1 q^-1 + ... and B(q) = b_1 q^-nk + ...
enum class PolyKind { arx, armax, oe };

struct PolyModel {
  PolyKind kind = PolyKind::arx;
  int na = 0, nb = 0, nc = 0, nf = 0, nk = 1;
  std::vector<double> a, b, c, f;
  double Ts = 0.0;

  std::string kind_name() const;
  /// Deterministic part as a z-domain transfer function (B/A or B/F).
  RationalTf tf() const;
  /// All denominator roots strictly inside the unit circle?
  bool stable() const;
};

/// Noise-free simulation of the deterministic part, zero initial conditions.
std::vector<double> simulate_poly(const PolyModel& m, std::span<const double> u);

/// ARX least squares at fixed orders; rows start once all regressors exist.
PolyModel fit_arx(std::span<const double> u, std::span<const double> y, int na, int nb, int nk,
                  double Ts);
/// ARMAX by pseudo-linear regression (extended least squares), ARX-initialized.
PolyModel fit_armax(std::span<const double> u, std::span<const double> y, int na, int nb, int nc,
                    int nk, double Ts, int max_iters = 20);
/// Output-error by damped Gauss-Newton from an ARX initializer; unstable
/// candidate steps are rejected so the returned model is always stable.
PolyModel fit_oe(std::span<const double> u, std::span<const double> y, const PolyModel& arx_init,
                 int max_iters = 50);

/// One-step-ahead prediction loss of an ARX model on [from, to).
double arx_prediction_loss(const PolyModel& m, std::span<const double> u,
                           std::span<const double> y, size_t from);

struct BbResult {
  PolyModel model;
  int order = 0;            // selected na = nb
  double order_loss = 0.0;  // one-step validation loss at the selected order
  double sim_loss = 0.0;    // validation simulation MSE of the winning model
  double fit_percent = 0.0; // NRMSE fit of the winner on the validation span
};

/// Black-box workflow: 70/30 split, ARX order scan (na = nb in 1..5, nk = 1)
/// by one-step validation loss, then ARX/ARMAX/OE at that order compared by
/// validation simulation error.
BbResult bb_identify(const IoRecord& rec);

/// Loop-shaping on an identified model (delegates to tune_pi).
ControllerParams tune_from_model(const PolyModel& m, const ShapingTargets& targets,
                                 PiForm form = PiForm::integrator);
ControllerParams tune_from_model(const PlantRealization& m, const ShapingTargets& targets,
                                 PiForm form = PiForm::integrator);

/// First-order unit-DC-gain target closed loop M_r = (1-a)/(z-a) with the
/// pole placed at the crossover target, a = exp(-2 pi fc Ts).
struct ReferenceModel {
  double a = 0.0;
  double Ts = 0.0;

  static ReferenceModel from_bandwidth(double fc_hz, double Ts);
  RationalTf tf() const;
};

struct VrftResult {
  ControllerParams phi;
  double theta1 = 0.0, theta2 = 0.0;  // C = theta1 + theta2 * B_I(z)
  bool valid = false;                 // both thetas strictly positive
};

/// Virtual reference feedback tuning with prefilter L = M_r (1 - M_r) and the
/// PI basis {1, Tustin integrator}; kp = theta1, Ti = theta1 / theta2.
VrftResult vrft(const IoRecord& rec, const ReferenceModel& mr);

}  // namespace metatune
