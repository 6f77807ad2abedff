// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "cnsf/sinc_filter.hpp"

#include <cmath>

namespace cnsf {

static double sinc(double x) {
  if (x == 0.0) return 1.0;
  return std::sin(kPi * x) / (kPi * x);
}

SincFilterSpec SincFilterSpec::constant(double cutoff, int num_frames, int order,
                                        int frame_shift) {
  SincFilterSpec spec;
  spec.order = order;
  spec.frame_shift = frame_shift;
  spec.cutoff_track.assign(std::size_t(num_frames), cutoff);
  return spec;
}

void SincFilterSpec::validate() const {
  if (order < 1 || order % 2 == 0) throw ConfigError("filter order must be odd");
  if (frame_shift < 1) throw ConfigError("frame_shift must be >= 1");
  if (cutoff_track.empty()) throw ConfigError("cutoff track is empty");
  for (double c : cutoff_track)
    if (!(c > 0.0 && c < 0.5)) throw ConfigError("cutoff must lie in (0, 0.5)");
}

std::vector<double> design_lowpass(double cutoff, int order) {
  if (!(cutoff > 0.0 && cutoff < 0.5)) throw ConfigError("cutoff must lie in (0, 0.5)");
  if (order < 1 || order % 2 == 0) throw ConfigError("filter order must be odd");
  const double center = (order - 1) / 2.0;
  std::vector<double> h(std::size_t(order), 0.0);
  double sum = 0.0;
  for (int n = 0; n < order; ++n) {
    const double w = detail::window_value(WindowType::Hamming, n, order);
    h[n] = 2.0 * cutoff * sinc(2.0 * cutoff * (n - center)) * w;
    sum += h[n];
  }
  for (double& x : h) x /= sum;
  return h;
}

std::vector<double> design_highpass(double cutoff, int order) {
  std::vector<double> h = design_lowpass(cutoff, order);
  for (double& x : h) x = -x;
  h[std::size_t((order - 1) / 2)] += 1.0;
  return h;
}

namespace detail {

std::vector<std::vector<double>> design_track(const SincFilterSpec& spec, bool highpass) {
  spec.validate();
  std::vector<std::vector<double>> taps;
  taps.reserve(spec.cutoff_track.size());
  // Constant tracks are common; reuse the previous design when possible.
  for (std::size_t fr = 0; fr < spec.cutoff_track.size(); ++fr) {
    if (fr > 0 && spec.cutoff_track[fr] == spec.cutoff_track[fr - 1]) {
      taps.push_back(taps.back());
      continue;
    }
    taps.push_back(highpass ? design_highpass(spec.cutoff_track[fr], spec.order)
                            : design_lowpass(spec.cutoff_track[fr], spec.order));
  }
  return taps;
}

}  // namespace detail

Waveform filter_timevariant(const Waveform& signal, const SincFilterSpec& spec,
                            bool highpass) {
  spec.validate();
  const int n = signal.length();
  const int frames_needed = (n + spec.frame_shift - 1) / spec.frame_shift;
  if (int(spec.cutoff_track.size()) < frames_needed)
    throw InputError("cutoff track does not cover all frames of the signal");

  const auto taps = detail::design_track(spec, highpass);
  Waveform out;
  out.sample_rate = signal.sample_rate;
  out.samples.resize(std::size_t(n));
  detail::tv_fir_apply(signal.samples.data(), n, taps, spec.frame_shift,
                       out.samples.data());
  return out;
}

Waveform combine_hn(const Waveform& harmonic_out, const Waveform& noise_out,
                    const SincFilterSpec& spec) {
  if (harmonic_out.samples.size() != noise_out.samples.size())
    throw InputError("combine_hn: length mismatch");
  Waveform lp = filter_timevariant(harmonic_out, spec, false);
  const Waveform hp = filter_timevariant(noise_out, spec, true);
  for (std::size_t i = 0; i < lp.samples.size(); ++i) lp.samples[i] += hp.samples[i];
  return lp;
}

}  // namespace cnsf
