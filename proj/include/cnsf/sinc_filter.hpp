// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)
#pragma once

#include <vector>

#include "cnsf/common.hpp"
#include "cnsf/signal.hpp"

namespace cnsf {

/// Time-variant windowed-sinc filter pair. cutoff_track holds one normalized
/// cutoff (cycles/sample, in (0, 0.5)) per frame of `frame_shift` samples.
struct SincFilterSpec {
  int order = 31;  // taps, odd
  std::vector<double> cutoff_track;
  int frame_shift = 80;  // samples per cutoff frame

  static SincFilterSpec constant(double cutoff, int num_frames, int order = 31,
                                 int frame_shift = 80);
  void validate() const;
};

/// Hamming-windowed sinc low-pass, normalized to unity DC gain.
std::vector<double> design_lowpass(double cutoff, int order = 31);

/// Spectral inversion of the low-pass: h_hp[n] = delta(center) - h_lp[n], so
/// h_lp + h_hp is exactly a pure (order-1)/2 sample delay.
std::vector<double> design_highpass(double cutoff, int order = 31);

/// Per-sample FIR filtering with the filter of the frame containing the
/// sample; group delay (order-1)/2 is compensated so output aligns with
/// input. Zero padding at the edges; output length equals input length.
Waveform filter_timevariant(const Waveform& signal, const SincFilterSpec& spec,
                            bool highpass = false);

/// Harmonic-plus-noise combination: LP(harmonic_out) + HP(noise_out).
Waveform combine_hn(const Waveform& harmonic_out, const Waveform& noise_out,
                    const SincFilterSpec& spec);

namespace detail {

/// One tap table per cutoff frame.
std::vector<std::vector<double>> design_track(const SincFilterSpec& spec, bool highpass);

/// y[t] = sum_m taps[frame(t)][m] * x[t + delay - m], zero padded. Shared by
/// the library path and the autodiff op.
template <typename T>
void tv_fir_apply(const T* x, int n, const std::vector<std::vector<T>>& taps,
                  int frame_shift, T* y) {
  const int order = int(taps[0].size());
  const int delay = (order - 1) / 2;
  const int n_frames = int(taps.size());
  for (int t = 0; t < n; ++t) {
    int fr = t / frame_shift;
    if (fr >= n_frames) fr = n_frames - 1;
    const T* h = taps[std::size_t(fr)].data();
    T acc = T(0);
    for (int m = 0; m < order; ++m) {
      const int idx = t + delay - m;
      if (idx >= 0 && idx < n) acc += h[m] * x[idx];
    }
    y[t] = acc;
  }
}

/// Adjoint of tv_fir_apply: gx[u] += sum over (t, m) with u = t + delay - m.
template <typename T>
void tv_fir_adjoint(const T* gy, int n, const std::vector<std::vector<T>>& taps,
                    int frame_shift, T* gx) {
  const int order = int(taps[0].size());
  const int delay = (order - 1) / 2;
  const int n_frames = int(taps.size());
  for (int u = 0; u < n; ++u) {
    T acc = T(0);
    for (int m = 0; m < order; ++m) {
      const int t = u - delay + m;
      if (t < 0 || t >= n) continue;
      int fr = t / frame_shift;
      if (fr >= n_frames) fr = n_frames - 1;
      acc += taps[std::size_t(fr)][m] * gy[t];
    }
    gx[u] += acc;
  }
}

}  // namespace detail

}  // namespace cnsf
