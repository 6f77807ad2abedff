// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "cnsf/signal.hpp"

#include <algorithm>
#include <cmath>

#include "cnsf/fft.hpp"

namespace cnsf {

void Waveform::validate() const {
  if (sample_rate <= 0) throw ConfigError("sample_rate must be positive");
  for (double s : samples) {
    if (!std::isfinite(s)) throw InputError("waveform contains non-finite values");
  }
}

void FrameSequence::validate() const {
  if (frames.rows < 1 || frames.cols < 1) throw InputError("frame sequence is empty");
  if (frame_shift <= 0) throw ConfigError("frame_shift must be positive");
}

WindowType window_from_string(const std::string& s) {
  if (s == "hann") return WindowType::Hann;
  if (s == "hamming") return WindowType::Hamming;
  if (s == "rect") return WindowType::Rect;
  throw ConfigError("unknown window type: " + s);
}

std::string window_to_string(WindowType w) {
  switch (w) {
    case WindowType::Hann: return "hann";
    case WindowType::Hamming: return "hamming";
    case WindowType::Rect: return "rect";
  }
  return "?";
}

int StftConfig::num_frames(int signal_length) const {
  if (signal_length < frame_length) return 1;
  return (signal_length - frame_length) / frame_shift + 1;
}

void StftConfig::validate() const {
  if (!detail::is_pow2(std::size_t(fft_size)))
    throw ConfigError("fft_size must be a power of two");
  if (frame_length < 1 || frame_length > fft_size)
    throw ConfigError("frame_length must be in [1, fft_size]");
  if (frame_shift < 1) throw ConfigError("frame_shift must be >= 1");
}

namespace detail {

double window_value(WindowType w, int n, int length) {
  if (length <= 1) return 1.0;
  switch (w) {
    case WindowType::Hann:
      return 0.5 - 0.5 * std::cos(kTwoPi * n / (length - 1));
    case WindowType::Hamming:
      return 0.54 - 0.46 * std::cos(kTwoPi * n / (length - 1));
    case WindowType::Rect:
      return 1.0;
  }
  return 1.0;
}

}  // namespace detail

SpectrumFrames stft(const Waveform& waveform, const StftConfig& config) {
  config.validate();
  if (waveform.samples.empty()) throw InputError("stft: empty waveform");

  const int t_len = waveform.length();
  const int n_frames = config.num_frames(t_len);
  const int n_bins = config.num_bins();

  SpectrumFrames out;
  out.num_frames = n_frames;
  out.num_bins = n_bins;
  out.config = config;
  out.bins.resize(std::size_t(n_frames) * n_bins);

  std::vector<std::complex<double>> buf(std::size_t(config.fft_size), {0.0, 0.0});
  for (int fr = 0; fr < n_frames; ++fr) {
    const int start = fr * config.frame_shift;
    std::fill(buf.begin(), buf.end(), std::complex<double>(0.0, 0.0));
    for (int n = 0; n < config.frame_length; ++n) {
      const int idx = start + n;
      if (idx >= t_len) break;
      buf[n] = waveform.samples[idx] * detail::window_value(config.window, n, config.frame_length);
    }
    detail::fft_pow2(buf, false);
    for (int k = 0; k < n_bins; ++k) out.at(fr, k) = buf[k];
  }
  return out;
}

Mat<double> stft_power(const Waveform& waveform, const StftConfig& config) {
  SpectrumFrames sp = stft(waveform, config);
  Mat<double> p(sp.num_frames, sp.num_bins);
  for (int fr = 0; fr < sp.num_frames; ++fr)
    for (int k = 0; k < sp.num_bins; ++k) p.at(fr, k) = std::norm(sp.at(fr, k));
  return p;
}

Mat<double> upsample_and_smooth(const FrameSequence& frames, double sample_rate,
                                int smooth_window, int smooth_passes) {
  frames.validate();
  if (smooth_window < 1) throw ConfigError("smooth_window must be >= 1");
  if (smooth_passes < 0) throw ConfigError("smooth_passes must be >= 0");

  const double factor_d = sample_rate * frames.frame_shift;
  const int factor = int(std::lround(factor_d));
  if (factor < 1 || std::abs(factor_d - factor) > 1e-6)
    throw ConfigError("sample_rate * frame_shift is not an integer up-sampling factor");

  const int n = frames.num_frames();
  const int d = frames.dim();
  const int t_len = n * factor;

  Mat<double> out(d, t_len);
  for (int dim = 0; dim < d; ++dim) {
    double* row = out.row(dim);
    for (int fr = 0; fr < n; ++fr) {
      const double v = frames.frames.at(fr, dim);
      for (int i = 0; i < factor; ++i) row[fr * factor + i] = v;
    }
  }
  if (smooth_passes == 0) return out;

  std::vector<double> tmp(std::size_t(t_len), 0.0);
  for (int dim = 0; dim < d; ++dim) {
    double* row = out.row(dim);
    for (int pass = 0; pass < smooth_passes; ++pass) {
      detail::moving_average_row(row, tmp.data(), t_len, smooth_window);
      std::copy(tmp.begin(), tmp.end(), row);
    }
  }
  return out;
}

double active_level_gain(const Waveform& waveform, double target_dbov) {
  waveform.validate();
  if (waveform.samples.empty()) throw InputError("silent input");

  const int frame_len = std::max(1, int(std::lround(0.01 * waveform.sample_rate)));
  const int t_len = waveform.length();
  const int n_frames = (t_len + frame_len - 1) / frame_len;

  // Per-sample energies per frame; threshold 40 dB below the peak frame.
  std::vector<double> energy(std::size_t(n_frames), 0.0);
  std::vector<int> count(std::size_t(n_frames), 0);
  double peak = 0.0;
  for (int fr = 0; fr < n_frames; ++fr) {
    const int lo = fr * frame_len;
    const int hi = std::min(t_len, lo + frame_len);
    double e = 0.0;
    for (int i = lo; i < hi; ++i) e += waveform.samples[i] * waveform.samples[i];
    count[fr] = hi - lo;
    energy[fr] = e / double(hi - lo);
    peak = std::max(peak, energy[fr]);
  }
  if (peak <= 0.0) throw InputError("silent input");

  const double threshold = peak * 1e-4;  // -40 dB
  double sum_sq = 0.0;
  long active_samples = 0;
  for (int fr = 0; fr < n_frames; ++fr) {
    if (energy[fr] > threshold) {
      sum_sq += energy[fr] * count[fr];
      active_samples += count[fr];
    }
  }
  const double active_rms = std::sqrt(sum_sq / double(active_samples));
  const double target_rms = std::pow(10.0, target_dbov / 20.0);
  return target_rms / active_rms;
}

Waveform normalize_level(const Waveform& waveform, double target_dbov) {
  const double gain = active_level_gain(waveform, target_dbov);
  Waveform out = waveform;
  for (double& s : out.samples) s *= gain;
  return out;
}

}  // namespace cnsf
