#include <doctest.h>

#include <cmath>
#include <complex>
#include <numbers>
#include <vector>

#include "metatune/fft.hpp"
#include "metatune/rng.hpp"

using namespace metatune;

namespace {

// Direct O(n^2) discrete Fourier transform used as the reference.
std::vector<std::complex<double>> naive_dft(const std::vector<std::complex<double>>& a) {
  const size_t n = a.size();
  std::vector<std::complex<double>> out(n);
  for (size_t k = 0; k < n; ++k) {
    std::complex<double> s = 0.0;
    for (size_t t = 0; t < n; ++t)
      s += a[t] * std::polar(1.0, -2.0 * std::numbers::pi * double(k * t) / double(n));
    out[k] = s;
  }
  return out;
}

}  // namespace

TEST_CASE("power-of-two helpers") {
  CHECK(is_pow2(1));
  CHECK(is_pow2(64));
  CHECK(!is_pow2(0));
  CHECK(!is_pow2(96));
  CHECK(next_pow2(1) == 1);
  CHECK(next_pow2(2) == 2);
  CHECK(next_pow2(3) == 4);
  CHECK(next_pow2(250) == 256);
  CHECK(next_pow2(257) == 512);
}

TEST_CASE("fft matches the direct discrete Fourier transform") {
  for (size_t n : {size_t{2}, size_t{8}, size_t{32}, size_t{128}}) {
    Rng rng(100 + n);
    std::vector<std::complex<double>> a(n);
    for (auto& v : a) v = {rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)};
    const auto ref = naive_dft(a);
    std::vector<std::complex<double>> got = a;
    fft_pow2(got.data(), n, false);
    for (size_t k = 0; k < n; ++k) CHECK(std::abs(got[k] - ref[k]) < 1e-11 * double(n));
  }
}

TEST_CASE("inverse fft undoes the forward transform") {
  const size_t n = 256;
  Rng rng(7);
  std::vector<std::complex<double>> a(n);
  for (auto& v : a) v = {rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)};
  auto b = a;
  fft_pow2(b.data(), n, false);
  fft_pow2(b.data(), n, true);
  for (size_t k = 0; k < n; ++k) CHECK(std::abs(b[k] - a[k]) < 1e-13);
}

TEST_CASE("delta and constant inputs transform to the expected spectra") {
  std::vector<std::complex<double>> delta(16, 0.0);
  delta[0] = 1.0;
  fft_pow2(delta.data(), 16, false);
  for (const auto& v : delta) CHECK(std::abs(v - std::complex<double>(1.0, 0.0)) < 1e-14);

  std::vector<std::complex<double>> ones(16, 1.0);
  fft_pow2(ones.data(), 16, false);
  CHECK(std::abs(ones[0] - std::complex<double>(16.0, 0.0)) < 1e-13);
  for (size_t k = 1; k < 16; ++k) CHECK(std::abs(ones[k]) < 1e-13);
}

TEST_CASE("fft rejects non-power-of-two lengths") {
  std::vector<std::complex<double>> a(6, 0.0);
  CHECK_THROWS_AS(fft_pow2(a.data(), a.size(), false), std::invalid_argument);
}
