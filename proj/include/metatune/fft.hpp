#pragma once

#include <complex>
#include <cstddef>

namespace metatune {

bool is_pow2(std::size_t n);
std::size_t next_pow2(std::size_t n);

/// In-place radix-2 complex FFT of power-of-two length. The forward transform
/// uses the e^{-2*pi*i*k/n} kernel; the inverse conjugates the twiddles and
/// applies the 1/n scale, so inverse(forward(a)) == a up to roundoff.
void fft_pow2(std::complex<double>* a, std::size_t n, bool inverse);

}  // namespace metatune
