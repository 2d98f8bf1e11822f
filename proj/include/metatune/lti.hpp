#pragma once

#include <complex>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Dense>

namespace metatune {

/// Discrete-time SISO state-space model y_k = C x_k + D u_k,
/// x_{k+1} = A x_k + B u_k, at sampling time Ts.
struct StateSpace {
  Eigen::MatrixXd A;
  Eigen::VectorXd B;
  Eigen::RowVectorXd C;
  double D = 0.0;
  double Ts = 0.0;

  StateSpace() = default;
  StateSpace(Eigen::MatrixXd A_, Eigen::VectorXd B_, Eigen::RowVectorXd C_,
             double D_, double Ts_);

  int order() const { return static_cast<int>(A.rows()); }
  double nyquist() const;  // pi / Ts, rad/s
};

/// Rational transfer function in z, coefficients in descending powers.
/// Leading denominator coefficient must be nonzero and deg(num) <= deg(den).
struct RationalTf {
  std::vector<double> num;
  std::vector<double> den;
  double Ts = 0.0;

  RationalTf() = default;
  RationalTf(std::vector<double> num_, std::vector<double> den_, double Ts_);

  std::complex<double> eval(std::complex<double> z) const;
  std::complex<double> at_omega(double w) const;  // z = e^{j w Ts}
  double nyquist() const;

  /// Series connection (this * other); sampling times must match.
  RationalTf operator*(const RationalTf& other) const;
};

/// Sampled frequency response on a strictly increasing grid below Nyquist.
struct FreqResponse {
  std::vector<double> grid;  // rad/s
  std::vector<std::complex<double>> values;
};

struct MarginReport {
  bool margin_defined = false;
  double phase_margin_deg = 0.0;    // valid only if margin_defined
  double gain_crossover_hz = 0.0;   // valid only if margin_defined
  int crossover_count = 0;
  bool closed_loop_stable = false;
};

/// Linear simulation from initial state x0 (defaults to rest).
std::vector<double> simulate(const StateSpace& sys, std::span<const double> u,
                             const Eigen::VectorXd& x0);
std::vector<double> simulate(const StateSpace& sys, std::span<const double> u);

FreqResponse freq_response(const StateSpace& sys, std::span<const double> grid);
FreqResponse freq_response(const RationalTf& tf, std::span<const double> grid);

double dc_gain(const StateSpace& sys);

/// Characteristic polynomial and transfer-function conversion via the
/// Leverrier-Faddeev recursion (exact at the small orders used here).
RationalTf ss_to_tf(const StateSpace& sys);

enum class PiForm {
  integrator,  // Tustin image of kp (1 + 1/(Ti s)); pole exactly at z = 1
  as_printed,  // kp/(1+2Ti/Ts) * (z+1)/(z + (Ts-2Ti)/(Ts+2Ti))
};

/// Discrete PI controller at gain kp and integral time Ti.
RationalTf tustin_pi(double kp, double Ti, double Ts, PiForm form = PiForm::integrator);

/// Bilinear prewarp: discrete frequency w maps to (2/Ts) tan(w Ts / 2) on the
/// continuous prototype.
double prewarp(double w, double Ts);

/// Log-spaced grid of n points on [lo, hi].
std::vector<double> log_grid(double lo, double hi, int n);

struct MarginOptions {
  int grid_points = 2000;
  double w_min = 1e-2;
  double nyquist_fraction = 0.99;  // search up to this fraction of pi/Ts
  double bisect_rel_tol = 1e-9;
};

/// Gain/phase margin analysis of the open loop L. The phase margin is taken at
/// the highest-frequency |L| = 1 crossing; closed-loop stability comes from
/// the roots of den(L) + num(L).
MarginReport margins(const RationalTf& loop, const MarginOptions& opt = {});

/// Roots of a polynomial (descending coefficients) via the companion matrix.
std::vector<std::complex<double>> poly_roots(std::span<const double> coeffs);

/// All closed-loop poles of L/(1+L) strictly inside the unit circle?
bool closed_loop_stable(const RationalTf& loop);

}  // namespace metatune
