#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "metatune/lti.hpp"

namespace metatune {

/// Physical parameters of the single-track lateral model.
struct VehicleParams {
  double M0 = 1729.0;   // nominal mass, kg
  double lf = 1.49;     // CoG to front axle, m
  double lr = 1.16;     // CoG to rear axle, m
  double Jz = 2483.0;   // yaw inertia, kg m^2
  double Cf = 1.42e5;   // front cornering stiffness, N/rad
  double Cr = 2.93e5;   // rear cornering stiffness, N/rad
  double vx = 20.0;     // longitudinal speed, m/s
  double Ts = 0.02;     // sampling time, s

  void validate() const;
};

/// Uncertain-parameter draw: friction scale and mass increment.
struct UncertaintySample {
  double mu_s = 1.0;
  double m_delta = 0.0;
};

inline constexpr double kMuSLo = 0.3, kMuSHi = 1.1;
inline constexpr double kMDeltaLo = 0.0, kMDeltaHi = 300.0;

/// A digital-twin instance: the sample plus its discrete state-space model
/// (states: side-slip angle, yaw rate; input: front steer; output: yaw rate).
struct PlantRealization {
  UncertaintySample theta;
  StateSpace sys;
};

/// One excitation/response record at fixed sampling time.
struct IoRecord {
  std::vector<double> u;  // steer, rad
  std::vector<double> y;  // yaw rate, rad/s
  double Ts = 0.02;

  void validate() const;
};

/// Yaw-rate plant with cornering stiffnesses scaled by mu_s and mass
/// M0 + m_delta (Jz held fixed).
PlantRealization build_plant(const VehicleParams& vp, const UncertaintySample& theta);

/// Independent uniform draws mu_s ~ U(0.3, 1.1), m_delta ~ U(0, 300).
UncertaintySample sample_theta(std::uint64_t seed);

/// Pseudo-random binary sequence in {-amplitude, +amplitude} from a
/// maximal-length LFSR (default order 11, taps 11 and 9), one shift per step.
std::vector<double> prbs(int n, double amplitude, std::uint64_t seed, int order = 11);

/// Additive white Gaussian noise with sigma = rms(y) * 10^(-snr_db/20).
/// snr_db = +inf returns the input unchanged.
std::vector<double> add_noise(std::span<const double> y, double snr_db, std::uint64_t seed);

double rms(std::span<const double> v);

}  // namespace metatune
