#include "metatune/vehicle.hpp"

#include <cmath>
#include <stdexcept>

#include "metatune/rng.hpp"

namespace metatune {

void VehicleParams::validate() const {
  for (double v : {M0, lf, lr, Jz, Cf, Cr, vx, Ts})
    if (!(v > 0.0) || !std::isfinite(v))
      throw std::invalid_argument("VehicleParams: all parameters must be positive and finite");
}

void IoRecord::validate() const {
  if (u.size() != y.size()) throw std::invalid_argument("IoRecord: u/y length mismatch");
  if (Ts <= 0.0) throw std::invalid_argument("IoRecord: Ts must be positive");
  for (double v : u)
    if (!std::isfinite(v)) throw std::invalid_argument("IoRecord: non-finite input sample");
  for (double v : y)
    if (!std::isfinite(v)) throw std::invalid_argument("IoRecord: non-finite output sample");
}

PlantRealization build_plant(const VehicleParams& vp, const UncertaintySample& theta) {
  vp.validate();
  if (!std::isfinite(theta.mu_s) || !std::isfinite(theta.m_delta) || theta.mu_s < 0.0)
    throw std::invalid_argument("build_plant: invalid uncertainty sample");

  const double Cf = theta.mu_s * vp.Cf;
  const double Cr = theta.mu_s * vp.Cr;
  const double M = vp.M0 + theta.m_delta;
  const double Ts = vp.Ts, vx = vp.vx, lf = vp.lf, lr = vp.lr, Jz = vp.Jz;

  Eigen::MatrixXd A(2, 2);
  A(0, 0) = 1.0 - Ts * (Cf + Cr) / (M * vx);
  A(0, 1) = Ts * (-lf * Cf + lr * Cr - M * vx * vx) / (M * vx * vx);
  A(1, 0) = Ts * (-lf * Cf + lr * Cr) / Jz;
  A(1, 1) = 1.0 - Ts * (lf * lf * Cf + lr * lr * Cr) / (Jz * vx);

  Eigen::VectorXd B(2);
  B(0) = Ts * Cf / (M * vx);
  B(1) = Ts * Cf * lf / Jz;

  Eigen::RowVectorXd C(2);
  C << 0.0, 1.0;

  return PlantRealization{theta, StateSpace(A, B, C, 0.0, Ts)};
}

UncertaintySample sample_theta(std::uint64_t seed) {
  Rng rng(seed);
  UncertaintySample s;
  s.mu_s = rng.uniform(kMuSLo, kMuSHi);
  s.m_delta = rng.uniform(kMDeltaLo, kMDeltaHi);
  return s;
}

std::vector<double> prbs(int n, double amplitude, std::uint64_t seed, int order) {
  if (n < 1) throw std::invalid_argument("prbs: length must be >= 1");
  if (!(amplitude > 0.0)) throw std::invalid_argument("prbs: amplitude must be positive");
  if (order != 11) throw std::invalid_argument("prbs: only the order-11 m-sequence is wired up");

  Rng rng(seed);
  const std::uint32_t mask = (1u << order) - 1u;
  std::uint32_t state = 0;
  while (state == 0) state = static_cast<std::uint32_t>(rng.next_u64()) & mask;

  std::vector<double> out(n);
  for (int k = 0; k < n; ++k) {
    out[k] = (state & 1u) ? amplitude : -amplitude;
    // x^11 + x^9 + 1
    const std::uint32_t fb = ((state >> 0) ^ (state >> 2)) & 1u;
    state = (state >> 1) | (fb << (order - 1));
  }
  return out;
}

double rms(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s / static_cast<double>(v.size()));
}

std::vector<double> add_noise(std::span<const double> y, double snr_db, std::uint64_t seed) {
  const double r = rms(y);
  if (r == 0.0) throw std::invalid_argument("add_noise: all-zero signal, SNR undefined");
  std::vector<double> out(y.begin(), y.end());
  if (std::isinf(snr_db)) return out;
  const double sigma = r * std::pow(10.0, -snr_db / 20.0);
  Rng rng(seed);
  for (double& v : out) v += sigma * rng.gaussian();
  return out;
}

}  // namespace metatune
