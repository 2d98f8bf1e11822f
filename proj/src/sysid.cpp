#include "metatune/sysid.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include <Eigen/Dense>

namespace metatune {

GbResult gb_identify(const IoRecord& rec, const VehicleParams& vp, UncertaintySample theta0,
                     const LevMarOptions& opt) {
  rec.validate();
  vp.validate();
  if (rec.u.empty()) throw std::invalid_argument("gb_identify: empty record");
  theta0.mu_s = std::clamp(theta0.mu_s, kMuSLo, kMuSHi);
  theta0.m_delta = std::clamp(theta0.m_delta, kMDeltaLo, kMDeltaHi);

  const auto residual = [&](const std::vector<double>& x) {
    const PlantRealization plant = build_plant(vp, {x[0], x[1]});
    const std::vector<double> ysim = simulate(plant.sys, rec.u);
    std::vector<double> r(rec.y.size());
    for (size_t k = 0; k < r.size(); ++k) r[k] = rec.y[k] - ysim[k];
    return r;
  };
  // Prediction-error estimation with unknown innovation variance: optimality
  // is judged against the Gaussian ML criterion, so the gradient tolerance is
  // a noise-scaled bar and the iteration budget bounds the search.
  LevMarOptions lm = opt;
  lm.likelihood_gradient = true;
  const LevMarResult res = levmar(residual, {theta0.mu_s, theta0.m_delta}, {kMuSLo, kMDeltaLo},
                                  {kMuSHi, kMDeltaHi}, lm);
  GbResult out;
  out.theta = {res.x[0], res.x[1]};
  out.cost = res.cost;
  out.grad_norm = res.grad_norm;
  out.iters = res.iters;
  out.converged = res.converged;
  out.at_bound = res.at_bound;
  return out;
}

// -------------------------------------------------------- polynomial models

std::string PolyModel::kind_name() const {
  switch (kind) {
    case PolyKind::arx: return "arx";
    case PolyKind::armax: return "armax";
    case PolyKind::oe: return "oe";
  }
  return "?";
}

RationalTf PolyModel::tf() const {
  const std::vector<double>& den_taps = kind == PolyKind::oe ? f : a;
  const int nd = static_cast<int>(den_taps.size());
  const int d = std::max(nd, static_cast<int>(b.size()) + nk - 1);
  std::vector<double> den(static_cast<size_t>(d) + 1, 0.0);
  den[0] = 1.0;
  for (int i = 0; i < nd; ++i) den[static_cast<size_t>(i) + 1] = den_taps[i];
  std::vector<double> num(static_cast<size_t>(d - nk) + 1, 0.0);
  for (size_t i = 0; i < b.size(); ++i) num[i] = b[i];
  return RationalTf(std::move(num), std::move(den), Ts);
}

bool PolyModel::stable() const {
  const std::vector<double>& den_taps = kind == PolyKind::oe ? f : a;
  if (den_taps.empty()) return true;
  std::vector<double> poly(den_taps.size() + 1);
  poly[0] = 1.0;
  std::copy(den_taps.begin(), den_taps.end(), poly.begin() + 1);
  for (const auto& root : poly_roots(poly))
    if (std::abs(root) >= 1.0) return false;
  return true;
}

std::vector<double> simulate_poly(const PolyModel& m, std::span<const double> u) {
  const std::vector<double>& den = m.kind == PolyKind::oe ? m.f : m.a;
  std::vector<double> y(u.size(), 0.0);
  for (size_t k = 0; k < u.size(); ++k) {
    double acc = 0.0;
    for (size_t i = 0; i < den.size(); ++i)
      if (k >= i + 1) acc -= den[i] * y[k - 1 - i];
    for (size_t i = 0; i < m.b.size(); ++i)
      if (k >= static_cast<size_t>(m.nk) + i) acc += m.b[i] * u[k - m.nk - i];
    y[k] = acc;
  }
  return y;
}

namespace {

size_t regression_start(int na, int nb, int nk, int nc = 0) {
  return static_cast<size_t>(std::max({na, nb + nk - 1, nc}));
}

Eigen::VectorXd solve_ls(const Eigen::MatrixXd& Phi, const Eigen::VectorXd& Y,
                         const std::string& who) {
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(Phi);
  if (qr.rank() < Phi.cols())
    throw std::runtime_error(who + ": rank-deficient regressor (rank " +
                             std::to_string(qr.rank()) + " of " + std::to_string(Phi.cols()) +
                             ")");
  return qr.solve(Y);
}

}  // namespace

PolyModel fit_arx(std::span<const double> u, std::span<const double> y, int na, int nb, int nk,
                  double Ts) {
  if (na < 0 || nb < 1 || nk < 1) throw std::invalid_argument("fit_arx: bad orders");
  if (u.size() != y.size()) throw std::invalid_argument("fit_arx: length mismatch");
  const size_t k0 = regression_start(na, nb, nk);
  if (y.size() <= k0 + static_cast<size_t>(na + nb))
    throw std::invalid_argument("fit_arx: record too short for the requested orders");
  const size_t rows = y.size() - k0;
  Eigen::MatrixXd Phi(rows, na + nb);
  Eigen::VectorXd Y(rows);
  for (size_t i = 0; i < rows; ++i) {
    const size_t k = k0 + i;
    for (int j = 0; j < na; ++j) Phi(i, j) = -y[k - 1 - j];
    for (int j = 0; j < nb; ++j) Phi(i, na + j) = u[k - nk - j];
    Y(i) = y[k];
  }
  const Eigen::VectorXd th = solve_ls(Phi, Y, "fit_arx");
  PolyModel m;
  m.kind = PolyKind::arx;
  m.na = na;
  m.nb = nb;
  m.nk = nk;
  m.Ts = Ts;
  m.a.assign(th.data(), th.data() + na);
  m.b.assign(th.data() + na, th.data() + na + nb);
  return m;
}

double arx_prediction_loss(const PolyModel& m, std::span<const double> u,
                           std::span<const double> y, size_t from) {
  const size_t k0 = std::max(from, regression_start(m.na, m.nb, m.nk, m.nc));
  if (k0 >= y.size()) throw std::invalid_argument("arx_prediction_loss: empty evaluation span");
  double acc = 0.0;
  for (size_t k = k0; k < y.size(); ++k) {
    double yp = 0.0;
    for (int j = 0; j < m.na; ++j) yp -= m.a[j] * y[k - 1 - j];
    for (int j = 0; j < m.nb; ++j) yp += m.b[j] * u[k - m.nk - j];
    const double e = y[k] - yp;
    acc += e * e;
  }
  return acc / static_cast<double>(y.size() - k0);
}

PolyModel fit_armax(std::span<const double> u, std::span<const double> y, int na, int nb, int nc,
                    int nk, double Ts, int max_iters) {
  if (nc < 1) throw std::invalid_argument("fit_armax: nc must be >= 1");
  PolyModel arx = fit_arx(u, y, na, nb, nk, Ts);

  // Innovation estimates start as ARX one-step residuals (zero before k0).
  std::vector<double> e(y.size(), 0.0);
  {
    const size_t k0 = regression_start(na, nb, nk);
    for (size_t k = k0; k < y.size(); ++k) {
      double yp = 0.0;
      for (int j = 0; j < na; ++j) yp -= arx.a[j] * y[k - 1 - j];
      for (int j = 0; j < nb; ++j) yp += arx.b[j] * u[k - nk - j];
      e[k] = y[k] - yp;
    }
  }

  PolyModel m = arx;
  m.kind = PolyKind::armax;
  m.nc = nc;
  m.c.assign(nc, 0.0);
  const size_t k0 = regression_start(na, nb, nk, nc);
  const size_t rows = y.size() - k0;
  const int p = na + nb + nc;
  if (rows <= static_cast<size_t>(p))
    throw std::invalid_argument("fit_armax: record too short for the requested orders");
  Eigen::VectorXd prev = Eigen::VectorXd::Zero(p);
  for (int it = 0; it < max_iters; ++it) {
    Eigen::MatrixXd Phi(rows, p);
    Eigen::VectorXd Y(rows);
    for (size_t i = 0; i < rows; ++i) {
      const size_t k = k0 + i;
      for (int j = 0; j < na; ++j) Phi(i, j) = -y[k - 1 - j];
      for (int j = 0; j < nb; ++j) Phi(i, na + j) = u[k - nk - j];
      for (int j = 0; j < nc; ++j) Phi(i, na + nb + j) = e[k - 1 - j];
      Y(i) = y[k];
    }
    const Eigen::VectorXd th = solve_ls(Phi, Y, "fit_armax");
    for (size_t i = 0; i < rows; ++i) e[k0 + i] = Y(i) - Phi.row(i).dot(th);
    m.a.assign(th.data(), th.data() + na);
    m.b.assign(th.data() + na, th.data() + na + nb);
    m.c.assign(th.data() + na + nb, th.data() + p);
    if ((th - prev).lpNorm<Eigen::Infinity>() < 1e-12) break;
    prev = th;
  }
  return m;
}

PolyModel fit_oe(std::span<const double> u, std::span<const double> y, const PolyModel& arx_init,
                 int max_iters) {
  if (arx_init.kind != PolyKind::arx)
    throw std::invalid_argument("fit_oe: initializer must be an ARX model");
  PolyModel m;
  m.kind = PolyKind::oe;
  m.nb = arx_init.nb;
  m.nf = arx_init.na;
  m.nk = arx_init.nk;
  m.Ts = arx_init.Ts;
  m.b = arx_init.b;
  m.f = arx_init.a;
  const int nb = m.nb, nf = m.nf, nk = m.nk;
  const size_t N = y.size();

  const auto cost_of = [&](const PolyModel& cand, std::vector<double>& w) {
    w = simulate_poly(cand, u);
    double c = 0.0;
    for (size_t k = 0; k < N; ++k) {
      const double r = y[k] - w[k];
      c += r * r;
    }
    return c;
  };

  std::vector<double> w;
  double c = cost_of(m, w);
  PolyModel best = m;
  double best_cost = m.stable() && std::isfinite(c) ? c : std::numeric_limits<double>::infinity();

  double lambda = 1e-4;
  for (int it = 0; it < max_iters; ++it) {
    if (!std::isfinite(c)) break;  // divergent simulation: keep the best stable model
    // Sensitivity filtering by 1/F: dw/db_i = q^-(nk+i) u / F, dw/df_i = -q^-(1+i) w / F.
    const auto filt = [&](std::span<const double> x) {
      std::vector<double> z(N, 0.0);
      for (size_t k = 0; k < N; ++k) {
        double acc = x[k];
        for (int i = 0; i < nf; ++i)
          if (k >= static_cast<size_t>(i) + 1) acc -= m.f[i] * z[k - 1 - i];
        z[k] = acc;
      }
      return z;
    };
    const std::vector<double> fu = filt(u);
    const std::vector<double> fw = filt(w);
    Eigen::MatrixXd J = Eigen::MatrixXd::Zero(N, nb + nf);
    for (int i = 0; i < nb; ++i)
      for (size_t k = static_cast<size_t>(nk) + i; k < N; ++k) J(k, i) = fu[k - nk - i];
    for (int i = 0; i < nf; ++i)
      for (size_t k = static_cast<size_t>(i) + 1; k < N; ++k) J(k, nb + i) = -fw[k - 1 - i];
    Eigen::VectorXd r(N);
    for (size_t k = 0; k < N; ++k) r(k) = y[k] - w[k];
    const Eigen::MatrixXd H = J.transpose() * J;
    const Eigen::VectorXd g = J.transpose() * r;

    bool accepted = false;
    for (int tries = 0; tries < 40; ++tries) {
      Eigen::MatrixXd Hd = H;
      for (int j = 0; j < nb + nf; ++j) Hd(j, j) += lambda * (H(j, j) + 1e-12);
      const Eigen::VectorXd d = Hd.ldlt().solve(g);
      PolyModel cand = m;
      for (int i = 0; i < nb; ++i) cand.b[i] += d(i);
      for (int i = 0; i < nf; ++i) cand.f[i] += d(nb + i);
      if (cand.stable()) {
        std::vector<double> wn;
        const double cn = cost_of(cand, wn);
        if (std::isfinite(cn) && cn < c) {
          m = cand;
          c = cn;
          w = std::move(wn);
          lambda = std::max(lambda / 3.0, 1e-12);
          accepted = true;
          break;
        }
      }
      lambda *= 3.0;
    }
    if (!accepted) break;
    if (c < best_cost) {
      best_cost = c;
      best = m;
    }
  }
  return std::isfinite(best_cost) ? best : m;
}

BbResult bb_identify(const IoRecord& rec) {
  rec.validate();
  const size_t N = rec.u.size();
  if (N < 100) throw std::invalid_argument("bb_identify: record must have at least 100 samples");
  const size_t ne = static_cast<size_t>(0.7 * static_cast<double>(N));
  const std::span<const double> u(rec.u), y(rec.y);
  const std::span<const double> ue = u.subspan(0, ne), ye = y.subspan(0, ne);

  // Stage 1: order scan by one-step prediction loss on the held-out tail.
  // Orders whose regressor is rank-deficient (possible on noise-free data,
  // where the record satisfies an exact low-order recursion) are skipped.
  int best_order = 0;
  double best_loss = std::numeric_limits<double>::infinity();
  for (int n = 1; n <= 5; ++n) {
    double loss;
    try {
      const PolyModel m = fit_arx(ue, ye, n, n, 1, rec.Ts);
      loss = arx_prediction_loss(m, u, y, ne);
    } catch (const std::exception&) {
      continue;
    }
    if (loss < best_loss) {
      best_loss = loss;
      best_order = n;
    }
  }
  if (best_order == 0) throw std::runtime_error("bb_identify: no feasible ARX order");

  // Stage 2: three structures at that order, judged by simulation error.
  // A structure that cannot be fitted (e.g. ARMAX on noise-free data, whose
  // innovation regressors vanish) simply drops out of the candidate set.
  const PolyModel arx = fit_arx(ue, ye, best_order, best_order, 1, rec.Ts);
  std::vector<PolyModel> candidates = {arx};
  try {
    candidates.push_back(fit_armax(ue, ye, best_order, best_order, best_order, 1, rec.Ts));
  } catch (const std::exception&) {
  }
  try {
    candidates.push_back(fit_oe(ue, ye, arx));
  } catch (const std::exception&) {
  }

  BbResult out;
  out.order = best_order;
  out.order_loss = best_loss;
  double best_sim = std::numeric_limits<double>::infinity();
  for (const PolyModel& cand : candidates) {
    const std::vector<double> ys = simulate_poly(cand, u);
    double acc = 0.0;
    for (size_t k = ne; k < N; ++k) {
      const double e = y[k] - ys[k];
      acc += e * e;
    }
    const double sim = acc / static_cast<double>(N - ne);
    if (std::isfinite(sim) && sim < best_sim) {
      best_sim = sim;
      out.model = cand;
    }
  }
  if (!std::isfinite(best_sim))
    throw std::runtime_error("bb_identify: every candidate model diverged in simulation");
  out.sim_loss = best_sim;

  const std::vector<double> ys = simulate_poly(out.model, u);
  double se = 0.0, sm = 0.0, mean = 0.0;
  for (size_t k = ne; k < N; ++k) mean += y[k];
  mean /= static_cast<double>(N - ne);
  for (size_t k = ne; k < N; ++k) {
    se += (y[k] - ys[k]) * (y[k] - ys[k]);
    sm += (y[k] - mean) * (y[k] - mean);
  }
  out.fit_percent = 100.0 * (1.0 - std::sqrt(se) / std::sqrt(sm));
  return out;
}

ControllerParams tune_from_model(const PolyModel& m, const ShapingTargets& targets, PiForm form) {
  if (!m.stable()) throw std::invalid_argument("tune_from_model: model is unstable");
  return tune_pi(m.tf(), targets, form);
}

ControllerParams tune_from_model(const PlantRealization& m, const ShapingTargets& targets,
                                 PiForm form) {
  return tune_pi(m, targets, form);
}

// ------------------------------------------------------------------- VRFT

ReferenceModel ReferenceModel::from_bandwidth(double fc_hz, double Ts) {
  if (!(fc_hz > 0.0) || !(Ts > 0.0))
    throw std::invalid_argument("ReferenceModel: bandwidth and Ts must be positive");
  ReferenceModel mr;
  mr.a = std::exp(-2.0 * std::numbers::pi * fc_hz * Ts);
  mr.Ts = Ts;
  return mr;
}

RationalTf ReferenceModel::tf() const { return RationalTf({1.0 - a}, {1.0, -a}, Ts); }

VrftResult vrft(const IoRecord& rec, const ReferenceModel& mr) {
  rec.validate();
  const size_t N = rec.u.size();
  if (N < 100) throw std::invalid_argument("vrft: record must have at least 100 samples");
  if (std::abs(rec.Ts - mr.Ts) > 1e-12)
    throw std::invalid_argument("vrft: record and reference model sampling times differ");
  const double a = mr.a, Ts = mr.Ts;
  if (!(a > 0.0 && a < 1.0)) throw std::invalid_argument("vrft: reference pole must be in (0,1)");

  // Virtual reference by the one-step look-ahead inverse of M_r, then the
  // virtual error; both live on k = 0..N-2 (the last sample is dropped).
  const size_t n = N - 1;
  std::vector<double> ev(n);
  for (size_t k = 0; k < n; ++k) {
    const double rv = (rec.y[k + 1] - a * rec.y[k]) / (1.0 - a);
    ev[k] = rv - rec.y[k];
  }

  // Prefilter L = M_r (1 - M_r) = (1-a)(z-1)/(z-a)^2 as a causal recursion.
  const auto filtL = [&](std::span<const double> x) {
    std::vector<double> z(x.size(), 0.0);
    for (size_t k = 0; k < x.size(); ++k) {
      double acc = (1.0 - a) * (x[k] - (k >= 1 ? x[k - 1] : 0.0));
      if (k >= 1) acc += 2.0 * a * z[k - 1];
      if (k >= 2) acc -= a * a * z[k - 2];
      z[k] = acc;
    }
    return z;
  };
  // Tustin integrator basis B_I = (Ts/2)(z+1)/(z-1).
  const auto integ = [&](std::span<const double> x) {
    std::vector<double> z(x.size(), 0.0);
    for (size_t k = 0; k < x.size(); ++k) {
      double acc = (Ts / 2.0) * (x[k] + (k >= 1 ? x[k - 1] : 0.0));
      if (k >= 1) acc += z[k - 1];
      z[k] = acc;
    }
    return z;
  };

  const std::vector<double> uL = filtL(std::span(rec.u).subspan(0, n));
  const std::vector<double> e1 = filtL(ev);
  const std::vector<double> e2 = integ(e1);

  Eigen::MatrixXd A(n, 2);
  Eigen::VectorXd B(n);
  for (size_t k = 0; k < n; ++k) {
    A(k, 0) = e1[k];
    A(k, 1) = e2[k];
    B(k) = uL[k];
  }
  const Eigen::VectorXd th = A.colPivHouseholderQr().solve(B);

  VrftResult out;
  out.theta1 = th(0);
  out.theta2 = th(1);
  out.valid = out.theta1 > 0.0 && out.theta2 > 0.0;
  out.phi.kp = out.theta1;
  out.phi.Ti = out.theta2 != 0.0 ? out.theta1 / out.theta2
                                 : std::numeric_limits<double>::infinity();
  return out;
}

}  // namespace metatune
