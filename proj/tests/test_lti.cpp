#include <doctest.h>

#include <cmath>
#include <complex>
#include <numbers>
#include <vector>

#include "checks.hpp"
#include "metatune/lti.hpp"
#include "metatune/loopshape.hpp"
#include "metatune/vehicle.hpp"

using namespace metatune;
using doctest::Approx;

namespace {

StateSpace scalar_lag(double a, double Ts = 0.02) {
  Eigen::MatrixXd A(1, 1);
  A << a;
  Eigen::VectorXd B(1);
  B << 1.0;
  Eigen::RowVectorXd C(1);
  C << 1.0;
  return StateSpace(A, B, C, 0.0, Ts);
}

}  // namespace

TEST_CASE("simulate: zero input from rest stays at zero") {
  const StateSpace sys = build_plant(VehicleParams{}, {1.0, 0.0}).sys;
  const std::vector<double> u(100, 0.0);
  for (double y : simulate(sys, u)) CHECK(y == 0.0);
}

TEST_CASE("simulate: scalar lag impulse response is 0, 1, a, a^2, ...") {
  const StateSpace sys = scalar_lag(0.5);
  std::vector<double> u(6, 0.0);
  u[0] = 1.0;
  const auto y = simulate(sys, u);
  const std::vector<double> expect{0.0, 1.0, 0.5, 0.25, 0.125, 0.0625};
  REQUIRE(y.size() == expect.size());
  for (size_t k = 0; k < y.size(); ++k) CHECK(y[k] == Approx(expect[k]).epsilon(1e-15));
}

TEST_CASE("simulate matches the plain state recursion on the vehicle model") {
  const StateSpace sys = build_plant(VehicleParams{}, {0.8, 200.0}).sys;
  const auto u = prbs(300, 0.05, 42);
  const auto y = simulate(sys, u);

  Eigen::VectorXd x = Eigen::VectorXd::Zero(sys.order());
  for (size_t k = 0; k < u.size(); ++k) {
    const double yk = sys.C * x + sys.D * u[k];
    CHECK(std::abs(y[k] - yk) < 1e-12);
    x = sys.A * x + sys.B * u[k];
  }
}

TEST_CASE("simulate is linear in the input") {
  const StateSpace sys = build_plant(VehicleParams{}, {0.6, 50.0}).sys;
  const auto u1 = prbs(200, 0.05, 1);
  const auto u2 = prbs(200, 0.03, 2);
  std::vector<double> mix(200);
  for (int k = 0; k < 200; ++k) mix[k] = 2.0 * u1[k] - 3.0 * u2[k];
  const auto y1 = simulate(sys, u1);
  const auto y2 = simulate(sys, u2);
  const auto ym = simulate(sys, mix);
  for (int k = 0; k < 200; ++k)
    CHECK(std::abs(ym[k] - (2.0 * y1[k] - 3.0 * y2[k])) < 1e-10);
}

TEST_CASE("simulate: initial-state response is C A^k x0") {
  const StateSpace sys = scalar_lag(0.25);
  Eigen::VectorXd x0(1);
  x0 << 2.0;
  const std::vector<double> u(5, 0.0);
  const auto y = simulate(sys, u, x0);
  double expect = 2.0;
  for (double yk : y) {
    CHECK(yk == Approx(expect).epsilon(1e-15));
    expect *= 0.25;
  }
}

TEST_CASE("dc_gain equals C (I - A)^-1 B + D and the low-frequency response limit") {
  const StateSpace sys = build_plant(VehicleParams{}, {1.0, 0.0}).sys;
  const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(sys.order(), sys.order());
  const double hand = (sys.C * (I - sys.A).inverse() * sys.B)(0, 0) + sys.D;
  CHECK(dc_gain(sys) == Approx(hand).epsilon(1e-12));

  const std::vector<double> w{1e-7};
  const auto fr = freq_response(sys, w);
  CHECK(std::abs(fr.values[0] - std::complex<double>(dc_gain(sys), 0.0)) <
        1e-5 * std::abs(dc_gain(sys)));
}

TEST_CASE("transfer function evaluation: 1/(z-0.5) at the quarter sample rate") {
  const double Ts = 0.02;
  const RationalTf H({1.0}, {1.0, -0.5}, Ts);
  // z = e^{j pi/2} = j, so H = 1/(j - 0.5) = (-0.5 - j)/1.25.
  const auto got = H.at_omega(std::numbers::pi / (2.0 * Ts));
  const std::complex<double> expect(-0.4, -0.8);
  CHECK(std::abs(got - expect) < 1e-12);
}

TEST_CASE("state-space and transfer-function frequency responses agree") {
  const StateSpace sys = build_plant(VehicleParams{}, {0.9, 130.0}).sys;
  const RationalTf tf = ss_to_tf(sys);
  const auto grid = log_grid(1e-2, 0.98 * sys.nyquist(), 400);
  const auto fs = freq_response(sys, grid);
  const auto ft = freq_response(tf, grid);
  for (size_t i = 0; i < grid.size(); ++i)
    CHECK(std::abs(fs.values[i] - ft.values[i]) < 1e-9);
}

TEST_CASE("ss_to_tf: scalar lag gives 1/(z - a)") {
  const RationalTf tf = ss_to_tf(scalar_lag(0.5));
  for (double w : {0.3, 5.0, 40.0}) {
    const auto z = std::polar(1.0, w * tf.Ts);
    CHECK(std::abs(tf.eval(z) - 1.0 / (z - 0.5)) < 1e-12);
  }
}

TEST_CASE("bilinear prewarp identity") {
  CHECK(checks::prewarp_identity_err() < 1e-10);
  // Low frequency: prewarped and raw frequencies coincide to second order.
  CHECK(prewarp(1e-3, 0.02) == Approx(1e-3).epsilon(1e-9));
}

TEST_CASE("discrete PI, integrator form: pole exactly at z = 1") {
  const RationalTf C = tustin_pi(0.4, 0.08, 0.02, PiForm::integrator);
  double at_one = 0.0;
  for (double c : C.den) at_one = at_one * 1.0 + c;
  CHECK(at_one == 0.0);  // exact cancellation, not approximate

  bool has_unit_root = false;
  for (const auto& r : poly_roots(C.den))
    if (std::abs(r - std::complex<double>(1.0, 0.0)) < 1e-12) has_unit_root = true;
  CHECK(has_unit_root);
}

TEST_CASE("discrete PI, finite-gain form: unit DC gain factor equals kp") {
  const double kp = 0.37;
  const RationalTf C = tustin_pi(kp, 0.11, 0.02, PiForm::as_printed);
  CHECK(std::abs(C.eval({1.0, 0.0}) - kp) <= 1e-14 * kp);
}

TEST_CASE("discrete PI degenerates to a pure gain as Ti grows") {
  const RationalTf C = tustin_pi(2.0, 1e12, 0.02, PiForm::integrator);
  for (double w : log_grid(1e-2, 0.98 * C.nyquist(), 50))
    CHECK(std::abs(C.at_omega(w) - 2.0) < 1e-9 * 2.0);
}

TEST_CASE("margins: a pure gain below unity never crosses |L| = 1") {
  const RationalTf L({0.5}, {1.0}, 0.02);
  const MarginReport rep = margins(L);
  CHECK(!rep.margin_defined);
  CHECK(rep.crossover_count == 0);
  CHECK(rep.closed_loop_stable);
}

TEST_CASE("margins: a pure delay reports a self-consistent margin") {
  // L = 1/z is all-pass with phase -w Ts, so at the reported crossover the
  // phase margin must equal 180 deg minus the crossover frequency in degrees.
  const double Ts = 0.02;
  const RationalTf L({1.0}, {1.0, 0.0}, Ts);
  const MarginReport rep = margins(L);
  REQUIRE(rep.margin_defined);
  const double w = 2.0 * std::numbers::pi * rep.gain_crossover_hz;
  CHECK(rep.phase_margin_deg ==
        Approx(180.0 - w * Ts * 180.0 / std::numbers::pi).epsilon(1e-9));
  // The closed loop z + 1 has its pole on the unit circle: not strictly stable.
  CHECK(!rep.closed_loop_stable);

  // Scaling the delay below unit gain removes every crossover.
  const MarginReport none = margins(RationalTf({0.5}, {1.0, 0.0}, Ts));
  CHECK(!none.margin_defined);
}

TEST_CASE("margins are stable under grid refinement") {
  const VehicleParams vp;
  const PlantRealization plant = build_plant(vp, {1.0, 0.0});
  const ControllerParams phi = tune_pi(plant, ShapingTargets{});
  const RationalTf L = tustin_pi(phi.kp, phi.Ti, vp.Ts) * ss_to_tf(plant.sys);

  MarginOptions coarse, fine;
  fine.grid_points = 2 * coarse.grid_points;
  const MarginReport a = margins(L, coarse);
  const MarginReport b = margins(L, fine);
  REQUIRE(a.margin_defined);
  REQUIRE(b.margin_defined);
  CHECK(std::abs(a.phase_margin_deg - b.phase_margin_deg) < 0.01);
  CHECK(a.crossover_count == b.crossover_count);
}

TEST_CASE("poly_roots: factored quadratics and complex pairs") {
  const auto r1 = poly_roots(std::vector<double>{1.0, -3.0, 2.0});  // (z-1)(z-2)
  REQUIRE(r1.size() == 2);
  double lo = std::min(r1[0].real(), r1[1].real());
  double hi = std::max(r1[0].real(), r1[1].real());
  CHECK(lo == Approx(1.0).epsilon(1e-10));
  CHECK(hi == Approx(2.0).epsilon(1e-10));
  CHECK(std::abs(r1[0].imag()) < 1e-12);

  const auto r2 = poly_roots(std::vector<double>{1.0, 0.0, 1.0});  // z^2 + 1
  REQUIRE(r2.size() == 2);
  CHECK(std::abs(std::abs(r2[0].imag()) - 1.0) < 1e-12);
  CHECK(std::abs(r2[0].real()) < 1e-12);
}

TEST_CASE("log_grid covers the requested range monotonically") {
  const auto g = log_grid(1e-2, 10.0, 500);
  REQUIRE(g.size() == 500);
  CHECK(g.front() == Approx(1e-2).epsilon(1e-12));
  CHECK(g.back() == Approx(10.0).epsilon(1e-12));
  for (size_t i = 1; i < g.size(); ++i) CHECK(g[i] > g[i - 1]);
}

TEST_CASE("model validation rejects malformed systems") {
  Eigen::MatrixXd A(2, 2);
  A.setZero();
  Eigen::VectorXd B(1);  // wrong length
  B << 1.0;
  Eigen::RowVectorXd C(2);
  C.setZero();
  CHECK_THROWS_AS(StateSpace(A, B, C, 0.0, 0.02), std::invalid_argument);
  CHECK_THROWS_AS(RationalTf({1.0}, {0.0, 1.0}, 0.02), std::invalid_argument);
  CHECK_THROWS_AS(RationalTf({1.0, 0.0, 0.0}, {1.0, 0.5}, 0.02), std::invalid_argument);
}

TEST_CASE("transfer-function product multiplies responses") {
  const RationalTf a({1.0}, {1.0, -0.5}, 0.02);
  const RationalTf b({2.0, 0.0}, {1.0, 0.25}, 0.02);
  const RationalTf ab = a * b;
  for (double w : {0.5, 3.0, 60.0}) {
    const auto z = std::polar(1.0, w * 0.02);
    CHECK(std::abs(ab.eval(z) - a.eval(z) * b.eval(z)) < 1e-12);
  }
}
