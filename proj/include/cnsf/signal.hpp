// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)
#pragma once

#include <complex>
#include <string>
#include <vector>

#include "cnsf/common.hpp"

namespace cnsf {

// ----------------------------------------------------------------------------
// Domain types
// ----------------------------------------------------------------------------

/// Mono sample sequence at a declared sampling rate. Values are dimensionless
/// amplitudes, nominally in [-1, 1], and must be finite.
struct Waveform {
  std::vector<double> samples;
  double sample_rate = 16000.0;

  int length() const { return int(samples.size()); }
  void validate() const;
};

/// Frame-level feature matrix: one row per frame, one column per dimension.
struct FrameSequence {
  Mat<double> frames;         // N x D
  double frame_shift = 0.005;  // seconds
  double start_time = 0.0;

  int num_frames() const { return frames.rows; }
  int dim() const { return frames.cols; }
  void validate() const;
};

enum class WindowType { Hann, Hamming, Rect };

WindowType window_from_string(const std::string& s);
std::string window_to_string(WindowType w);

/// One STFT analysis configuration. fft_size must be a power of two and at
/// least frame_length; frames are zero-padded up to fft_size.
struct StftConfig {
  int fft_size = 512;
  int frame_length = 320;
  int frame_shift = 80;
  WindowType window = WindowType::Hann;

  int num_bins() const { return fft_size / 2 + 1; }
  int num_frames(int signal_length) const;
  void validate() const;
};

/// One-sided complex spectra, one row of fft_size/2+1 bins per frame.
struct SpectrumFrames {
  std::vector<std::complex<double>> bins;  // num_frames x num_bins, row-major
  int num_frames = 0;
  int num_bins = 0;
  StftConfig config;

  std::complex<double>& at(int frame, int bin) {
    return bins[std::size_t(frame) * num_bins + bin];
  }
  const std::complex<double>& at(int frame, int bin) const {
    return bins[std::size_t(frame) * num_bins + bin];
  }
};

// ----------------------------------------------------------------------------
// Operations
// ----------------------------------------------------------------------------

/// Short-time Fourier transform. A signal shorter than one frame yields a
/// single zero-padded frame.
SpectrumFrames stft(const Waveform& waveform, const StftConfig& config);

/// Per-frame one-sided power spectra |X|^2 as an N x (K/2+1) matrix.
Mat<double> stft_power(const Waveform& waveform, const StftConfig& config);

/// Repeat each frame value sample_rate*frame_shift times, then smooth each
/// stream `smooth_passes` times with a centered moving average of
/// `smooth_window` samples (shrinking windows at the edges). Returns one row
/// per feature dimension, N*factor columns. smooth_passes = 0 is exact
/// repetition.
Mat<double> upsample_and_smooth(const FrameSequence& frames, double sample_rate,
                                int smooth_window, int smooth_passes);

/// Scale the waveform so its active-level RMS sits at target_dbov (dB relative
/// to full scale). Active level is the RMS over 10 ms frames whose energy
/// exceeds the peak frame energy minus 40 dB.
Waveform normalize_level(const Waveform& waveform, double target_dbov = -26.0);

/// Gain that normalize_level would apply.
double active_level_gain(const Waveform& waveform, double target_dbov = -26.0);

// ----------------------------------------------------------------------------
// Shared low-level kernels (also used by the autodiff ops)
// ----------------------------------------------------------------------------

namespace detail {

double window_value(WindowType w, int n, int length);

/// y[t] = mean of x over [t-((w-1)/2), t+w/2] clipped to [0, n).
template <typename T>
void moving_average_row(const T* x, T* y, int n, int window) {
  const int left = (window - 1) / 2;
  const int right = window / 2;
  std::vector<T> prefix(std::size_t(n) + 1, T(0));
  for (int i = 0; i < n; ++i) prefix[i + 1] = prefix[i] + x[i];
  for (int t = 0; t < n; ++t) {
    const int lo = t - left < 0 ? 0 : t - left;
    const int hi = t + right >= n ? n - 1 : t + right;
    y[t] = (prefix[hi + 1] - prefix[lo]) / T(hi - lo + 1);
  }
}

/// Adjoint of moving_average_row: gx[s] += sum over t with s in window(t) of
/// gy[t] / count(t).
template <typename T>
void moving_average_row_adjoint(const T* gy, T* gx, int n, int window) {
  const int left = (window - 1) / 2;
  const int right = window / 2;
  std::vector<T> c(std::size_t(n), T(0));
  for (int t = 0; t < n; ++t) {
    const int lo = t - left < 0 ? 0 : t - left;
    const int hi = t + right >= n ? n - 1 : t + right;
    c[t] = gy[t] / T(hi - lo + 1);
  }
  std::vector<T> prefix(std::size_t(n) + 1, T(0));
  for (int i = 0; i < n; ++i) prefix[i + 1] = prefix[i] + c[i];
  // s in [t-left, t+right] <=> t in [s-right, s+left]
  for (int s = 0; s < n; ++s) {
    const int lo = s - right < 0 ? 0 : s - right;
    const int hi = s + left >= n ? n - 1 : s + left;
    gx[s] += prefix[hi + 1] - prefix[lo];
  }
}

}  // namespace detail

}  // namespace cnsf
