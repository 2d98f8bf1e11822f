#include "metatune/lti.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace metatune {

namespace {

void require(bool cond, const char* msg) {
  if (!cond) throw std::invalid_argument(msg);
}

bool all_finite(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

}  // namespace

StateSpace::StateSpace(Eigen::MatrixXd A_, Eigen::VectorXd B_, Eigen::RowVectorXd C_,
                       double D_, double Ts_)
    : A(std::move(A_)), B(std::move(B_)), C(std::move(C_)), D(D_), Ts(Ts_) {
  require(A.rows() == A.cols(), "StateSpace: A must be square");
  require(B.rows() == A.rows(), "StateSpace: B dimension mismatch");
  require(C.cols() == A.cols(), "StateSpace: C dimension mismatch");
  require(Ts > 0.0, "StateSpace: Ts must be positive");
  require(A.allFinite() && B.allFinite() && C.allFinite() && std::isfinite(D),
          "StateSpace: non-finite entries");
}

double StateSpace::nyquist() const { return std::numbers::pi / Ts; }

RationalTf::RationalTf(std::vector<double> num_, std::vector<double> den_, double Ts_)
    : num(std::move(num_)), den(std::move(den_)), Ts(Ts_) {
  require(!den.empty() && den.front() != 0.0,
          "RationalTf: leading denominator coefficient must be nonzero");
  require(!num.empty(), "RationalTf: empty numerator");
  require(num.size() <= den.size(), "RationalTf: deg(num) must not exceed deg(den)");
  require(Ts > 0.0, "RationalTf: Ts must be positive");
  require(all_finite(num) && all_finite(den), "RationalTf: non-finite coefficients");
}

std::complex<double> RationalTf::eval(std::complex<double> z) const {
  std::complex<double> n = 0.0, d = 0.0;
  for (double c : num) n = n * z + c;
  for (double c : den) d = d * z + c;
  return n / d;
}

std::complex<double> RationalTf::at_omega(double w) const {
  return eval(std::polar(1.0, w * Ts));
}

double RationalTf::nyquist() const { return std::numbers::pi / Ts; }

RationalTf RationalTf::operator*(const RationalTf& other) const {
  require(Ts == other.Ts, "RationalTf: sampling time mismatch in product");
  auto conv = [](const std::vector<double>& a, const std::vector<double>& b) {
    std::vector<double> c(a.size() + b.size() - 1, 0.0);
    for (size_t i = 0; i < a.size(); ++i)
      for (size_t j = 0; j < b.size(); ++j) c[i + j] += a[i] * b[j];
    return c;
  };
  return RationalTf(conv(num, other.num), conv(den, other.den), Ts);
}

std::vector<double> simulate(const StateSpace& sys, std::span<const double> u,
                             const Eigen::VectorXd& x0) {
  require(x0.size() == sys.order(), "simulate: x0 dimension mismatch");
  require(all_finite(u), "simulate: non-finite input");
  std::vector<double> y(u.size());
  Eigen::VectorXd x = x0;
  for (size_t k = 0; k < u.size(); ++k) {
    y[k] = sys.C.dot(x) + sys.D * u[k];
    x = sys.A * x + sys.B * u[k];
  }
  return y;
}

std::vector<double> simulate(const StateSpace& sys, std::span<const double> u) {
  return simulate(sys, u, Eigen::VectorXd::Zero(sys.order()));
}

FreqResponse freq_response(const StateSpace& sys, std::span<const double> grid) {
  const int n = sys.order();
  FreqResponse out;
  out.grid.assign(grid.begin(), grid.end());
  out.values.resize(grid.size());
  Eigen::MatrixXcd M(n, n);
  for (size_t i = 0; i < grid.size(); ++i) {
    require(grid[i] < sys.nyquist(), "freq_response: grid point at or above Nyquist");
    if (i > 0) require(grid[i] > grid[i - 1], "freq_response: grid must be increasing");
    const std::complex<double> z = std::polar(1.0, grid[i] * sys.Ts);
    M = -sys.A.cast<std::complex<double>>();
    M.diagonal().array() += z;
    Eigen::FullPivLU<Eigen::MatrixXcd> lu(M);
    if (!lu.isInvertible()) {
      // pole on the unit circle at this frequency
      out.values[i] = std::complex<double>(std::numeric_limits<double>::infinity(), 0.0);
      continue;
    }
    Eigen::VectorXcd sol = lu.solve(sys.B.cast<std::complex<double>>());
    out.values[i] = (sys.C.cast<std::complex<double>>() * sol)(0) + sys.D;
  }
  return out;
}

FreqResponse freq_response(const RationalTf& tf, std::span<const double> grid) {
  FreqResponse out;
  out.grid.assign(grid.begin(), grid.end());
  out.values.resize(grid.size());
  for (size_t i = 0; i < grid.size(); ++i) {
    require(grid[i] < tf.nyquist(), "freq_response: grid point at or above Nyquist");
    if (i > 0) require(grid[i] > grid[i - 1], "freq_response: grid must be increasing");
    out.values[i] = tf.at_omega(grid[i]);
  }
  return out;
}

double dc_gain(const StateSpace& sys) {
  Eigen::MatrixXd M = Eigen::MatrixXd::Identity(sys.order(), sys.order()) - sys.A;
  return sys.C.dot(M.fullPivLu().solve(sys.B)) + sys.D;
}

RationalTf ss_to_tf(const StateSpace& sys) {
  const int n = sys.order();
  // Leverrier-Faddeev: char poly coefficients and C adj(zI-A) B terms.
  std::vector<double> den(n + 1, 0.0);
  den[0] = 1.0;
  std::vector<double> cnum(n, 0.0);
  Eigen::MatrixXd M = Eigen::MatrixXd::Identity(n, n);
  for (int k = 1; k <= n; ++k) {
    cnum[k - 1] = sys.C.dot(M * sys.B);
    Eigen::MatrixXd AM = sys.A * M;
    const double c = -AM.trace() / k;
    den[k] = c;
    M = AM + c * Eigen::MatrixXd::Identity(n, n);
  }
  // num = D * den + [0, cnum...]
  std::vector<double> num(n + 1, 0.0);
  for (int i = 0; i <= n; ++i) num[i] = sys.D * den[i];
  for (int i = 0; i < n; ++i) num[i + 1] += cnum[i];
  // strip leading zeros of num (keep at least one coefficient)
  size_t lead = 0;
  while (lead + 1 < num.size() && num[lead] == 0.0) ++lead;
  num.erase(num.begin(), num.begin() + lead);
  return RationalTf(std::move(num), std::move(den), sys.Ts);
}

RationalTf tustin_pi(double kp, double Ti, double Ts, PiForm form) {
  require(kp > 0.0, "tustin_pi: kp must be positive");
  require(Ti > 0.0, "tustin_pi: Ti must be positive");
  require(Ts > 0.0, "tustin_pi: Ts must be positive");
  const double h = Ts / (2.0 * Ti);
  if (form == PiForm::integrator) {
    return RationalTf({kp * (1.0 + h), kp * (h - 1.0)}, {1.0, -1.0}, Ts);
  }
  const double gain = kp / (1.0 + 2.0 * Ti / Ts);
  const double pole = (Ts - 2.0 * Ti) / (Ts + 2.0 * Ti);
  return RationalTf({gain, gain}, {1.0, pole}, Ts);
}

double prewarp(double w, double Ts) { return (2.0 / Ts) * std::tan(w * Ts / 2.0); }

std::vector<double> log_grid(double lo, double hi, int n) {
  require(n >= 2 && lo > 0.0 && hi > lo, "log_grid: invalid range");
  std::vector<double> g(n);
  const double llo = std::log(lo), lhi = std::log(hi);
  for (int i = 0; i < n; ++i)
    g[i] = std::exp(llo + (lhi - llo) * static_cast<double>(i) / (n - 1));
  return g;
}

std::vector<std::complex<double>> poly_roots(std::span<const double> coeffs) {
  // strip leading zeros
  size_t lead = 0;
  while (lead < coeffs.size() && coeffs[lead] == 0.0) ++lead;
  const size_t n = coeffs.size() - lead;
  if (n <= 1) return {};
  Eigen::MatrixXd companion = Eigen::MatrixXd::Zero(n - 1, n - 1);
  for (size_t i = 0; i + 1 < n; ++i) companion(0, i) = -coeffs[lead + i + 1] / coeffs[lead];
  for (size_t i = 1; i + 1 < n; ++i) companion(i, i - 1) = 1.0;
  Eigen::EigenSolver<Eigen::MatrixXd> es(companion, /*computeEigenvectors=*/false);
  std::vector<std::complex<double>> roots(n - 1);
  for (size_t i = 0; i + 1 < n; ++i) roots[i] = es.eigenvalues()(i);
  return roots;
}

bool closed_loop_stable(const RationalTf& loop) {
  // characteristic polynomial den + num, degree-aligned
  std::vector<double> ch = loop.den;
  const size_t off = loop.den.size() - loop.num.size();
  for (size_t i = 0; i < loop.num.size(); ++i) ch[off + i] += loop.num[i];
  for (const auto& r : poly_roots(ch))
    if (std::abs(r) >= 1.0) return false;
  return true;
}

MarginReport margins(const RationalTf& loop, const MarginOptions& opt) {
  MarginReport rep;
  rep.closed_loop_stable = closed_loop_stable(loop);

  const double w_hi = opt.nyquist_fraction * loop.nyquist();
  const auto grid = log_grid(opt.w_min, w_hi, opt.grid_points);
  std::vector<double> g(grid.size());
  for (size_t i = 0; i < grid.size(); ++i) g[i] = std::abs(loop.at_omega(grid[i])) - 1.0;

  double best_w = 0.0;
  for (size_t i = 0; i + 1 < grid.size(); ++i) {
    if (g[i] == 0.0 || g[i] * g[i + 1] < 0.0) {
      ++rep.crossover_count;
      double lo = grid[i], hi = grid[i + 1];
      double glo = g[i];
      while ((hi - lo) > opt.bisect_rel_tol * hi) {
        const double mid = 0.5 * (lo + hi);
        const double gm = std::abs(loop.at_omega(mid)) - 1.0;
        if (glo == 0.0 || glo * gm <= 0.0) {
          hi = mid;
        } else {
          lo = mid;
          glo = gm;
        }
      }
      best_w = 0.5 * (lo + hi);  // crossings scanned in increasing order
    }
  }
  if (rep.crossover_count == 0) return rep;

  rep.margin_defined = true;
  rep.gain_crossover_hz = best_w / (2.0 * std::numbers::pi);
  const double phase = std::arg(loop.at_omega(best_w)) * 180.0 / std::numbers::pi;
  rep.phase_margin_deg = 180.0 + phase;
  return rep;
}

}  // namespace metatune
