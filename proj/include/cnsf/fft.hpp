// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)
#pragma once

#include <complex>
#include <cstddef>
#include <vector>

#include "cnsf/common.hpp"

namespace cnsf::detail {

inline bool is_pow2(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

/// In-place iterative radix-2 transform. Forward uses exp(-2*pi*i*k*n/N);
/// inverse applies the conjugate kernel and the 1/N scale. Size must be a
/// power of two. Twiddle recurrences run in double regardless of T.
template <typename T>
void fft_pow2(std::vector<std::complex<T>>& a, bool inverse) {
  const std::size_t n = a.size();
  if (n <= 1) return;
  if (!is_pow2(n)) throw ConfigError("fft size must be a power of two");

  // Bit-reversal permutation.
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }

  const double sign = inverse ? 1.0 : -1.0;
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const double ang = sign * kTwoPi / double(len);
    const std::complex<double> wlen(std::cos(ang), std::sin(ang));
    for (std::size_t i = 0; i < n; i += len) {
      std::complex<double> w(1.0, 0.0);
      for (std::size_t j = 0; j < len / 2; ++j) {
        const std::complex<double> u(a[i + j].real(), a[i + j].imag());
        const std::complex<double> t =
            std::complex<double>(a[i + j + len / 2].real(), a[i + j + len / 2].imag()) * w;
        a[i + j] = std::complex<T>(T(u.real() + t.real()), T(u.imag() + t.imag()));
        a[i + j + len / 2] = std::complex<T>(T(u.real() - t.real()), T(u.imag() - t.imag()));
        w *= wlen;
      }
    }
  }
  if (inverse) {
    const T inv = T(1.0 / double(n));
    for (auto& x : a) x *= inv;
  }
}

}  // namespace cnsf::detail
