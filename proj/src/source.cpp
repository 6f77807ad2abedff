// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "cnsf/source.hpp"

#include <algorithm>
#include <cmath>

namespace cnsf {

void SourceConfig::validate() const {
  if (harmonics < 1) throw ConfigError("harmonics must be >= 1");
  if (sigma <= 0) throw ConfigError("sigma must be positive");
  if (alpha <= 0) throw ConfigError("alpha must be positive");
  if (sample_rate <= 0) throw ConfigError("sample_rate must be positive");
}

MixLayer MixLayer::init(int channels, Rng& rng) {
  MixLayer layer;
  const double bound = 1.0 / std::sqrt(double(channels));
  layer.weights.resize(std::size_t(channels));
  for (double& w : layer.weights) w = rng.uniform(-bound, bound);
  layer.bias = 0.0;
  return layer;
}

void CyclicNoiseConfig::validate(std::size_t length) const {
  if (beta.empty()) throw ConfigError("beta is empty");
  if (beta.size() != 1 && beta.size() != length)
    throw ConfigError("beta must be scalar or one value per sample");
  for (double b : beta)
    if (!(b > 0)) throw InputError("beta must be positive");
}

static void check_f0(const std::vector<double>& f0) {
  if (f0.empty()) throw InputError("empty F0 sequence");
  for (double f : f0)
    if (f < 0 || !std::isfinite(f)) throw InputError("F0 values must be finite and >= 0");
}

std::vector<double> cumulative_phase(const std::vector<double>& f0_upsampled,
                                     double sample_rate) {
  std::vector<double> phase(f0_upsampled.size());
  double acc = 0.0;
  for (std::size_t t = 0; t < f0_upsampled.size(); ++t) {
    acc += kTwoPi * f0_upsampled[t] / sample_rate;
    phase[t] = acc;
  }
  return phase;
}

std::vector<double> fundamental_sine(const std::vector<double>& f0_upsampled,
                                     double phi, double sample_rate) {
  std::vector<double> phase = cumulative_phase(f0_upsampled, sample_rate);
  std::vector<double> s(phase.size());
  for (std::size_t t = 0; t < phase.size(); ++t) s[t] = std::sin(phase[t] + phi);
  return s;
}

Waveform gen_sine_harmonic_with_phase(const std::vector<double>& f0_upsampled, int h,
                                      double phi, const SourceConfig& cfg, Rng& rng) {
  cfg.validate();
  check_f0(f0_upsampled);
  if (h < 1) throw InputError("harmonic index must be >= 1");

  const std::vector<double> phase = cumulative_phase(f0_upsampled, cfg.sample_rate);
  Waveform out;
  out.sample_rate = cfg.sample_rate;
  out.samples.resize(f0_upsampled.size());
  const double unvoiced_gain = cfg.alpha / (3.0 * cfg.sigma);
  for (std::size_t t = 0; t < f0_upsampled.size(); ++t) {
    const double n = cfg.sigma * rng.gaussian();
    if (f0_upsampled[t] > 0)
      out.samples[t] = cfg.alpha * std::sin(double(h) * phase[t] + phi) + n;
    else
      out.samples[t] = unvoiced_gain * n;
  }
  return out;
}

Waveform gen_sine_harmonic(const std::vector<double>& f0_upsampled, int h,
                           const SourceConfig& cfg, Rng& rng) {
  const double phi = rng.uniform(-kPi, kPi);
  return gen_sine_harmonic_with_phase(f0_upsampled, h, phi, cfg, rng);
}

std::vector<Waveform> gen_harmonics(const std::vector<double>& f0_upsampled,
                                    const SourceConfig& cfg, Rng& rng) {
  const double phi = rng.uniform(-kPi, kPi);
  std::vector<Waveform> out;
  out.reserve(std::size_t(cfg.harmonics));
  for (int h = 1; h <= cfg.harmonics; ++h)
    out.push_back(gen_sine_harmonic_with_phase(f0_upsampled, h, phi, cfg, rng));
  return out;
}

Waveform mix_tanh(const std::vector<Waveform>& channels, const MixLayer& layer) {
  if (channels.empty()) throw InputError("mix_tanh: no channels");
  if (layer.weights.size() != channels.size())
    throw InputError("mix_tanh: weight count does not match channel count");
  const std::size_t len = channels[0].samples.size();
  std::vector<const double*> rows;
  rows.reserve(channels.size());
  for (const Waveform& ch : channels) {
    if (ch.samples.size() != len) throw InputError("mix_tanh: channel length mismatch");
    rows.push_back(ch.samples.data());
  }
  Waveform out;
  out.sample_rate = channels[0].sample_rate;
  out.samples.resize(len);
  detail::mix_tanh_eval<double>(rows.data(), int(channels.size()), int(len),
                                layer.weights.data(), layer.bias, out.samples.data());
  return out;
}

std::vector<double> pulse_train_from_sine(const std::vector<double>& sine,
                                          const std::vector<double>& f0_upsampled) {
  const std::size_t n = sine.size();
  std::vector<double> p(n, 0.0);
  // Strict rise into the peak, non-rise after it; flat runs pulse once.
  for (std::size_t t = 1; t + 1 < n; ++t) {
    if (f0_upsampled[t] <= 0) continue;
    if (sine[t] > sine[t - 1] && sine[t] >= sine[t + 1]) p[t] = 1.0;
  }
  return p;
}

std::vector<double> cyclic_noise_excitation(const std::vector<double>& f0_upsampled,
                                            const CyclicNoiseConfig& beta,
                                            const std::vector<double>& pulses,
                                            const std::vector<double>& noise,
                                            double sample_rate) {
  const std::size_t n = f0_upsampled.size();
  if (pulses.size() != n || noise.size() != n)
    throw InputError("cyclic_noise_excitation: length mismatch");
  beta.validate(n);

  std::vector<double> out(n, 0.0);
  for (std::size_t t = 0; t < n; ++t)
    if (f0_upsampled[t] <= 0) out[t] = noise[t];

  // Scatter each pulse forward; equivalent to the direct sum over lags but
  // skips the zero entries of the pulse train.
  for (std::size_t tau = 0; tau < n; ++tau) {
    if (pulses[tau] == 0.0) continue;
    for (std::size_t t = tau; t < n; ++t) {
      if (f0_upsampled[t] <= 0) continue;
      const double k = double(t - tau);
      out[t] += noise[t - tau] * std::exp(-k * f0_upsampled[t] / (beta.at(t) * sample_rate)) *
                pulses[tau];
    }
  }
  return out;
}

std::vector<double> cyclic_noise_excitation_dbeta(const std::vector<double>& f0_upsampled,
                                                  double beta,
                                                  const std::vector<double>& pulses,
                                                  const std::vector<double>& noise,
                                                  double sample_rate) {
  const std::size_t n = f0_upsampled.size();
  if (pulses.size() != n || noise.size() != n)
    throw InputError("cyclic_noise_excitation_dbeta: length mismatch");
  if (!(beta > 0)) throw InputError("beta must be positive");

  std::vector<double> out(n, 0.0);
  for (std::size_t tau = 0; tau < n; ++tau) {
    if (pulses[tau] == 0.0) continue;
    for (std::size_t t = tau; t < n; ++t) {
      if (f0_upsampled[t] <= 0) continue;
      const double k = double(t - tau);
      const double rate = f0_upsampled[t] / (beta * sample_rate);
      out[t] += noise[t - tau] * std::exp(-k * rate) * (k * rate / beta) * pulses[tau];
    }
  }
  return out;
}

Waveform gen_pulse_train(const std::vector<double>& f0_upsampled,
                         const SourceConfig& cfg, Rng& rng) {
  cfg.validate();
  check_f0(f0_upsampled);

  const double phi = rng.uniform(-kPi, kPi);
  const std::vector<double> sine = fundamental_sine(f0_upsampled, phi, cfg.sample_rate);
  const std::vector<double> pulses = pulse_train_from_sine(sine, f0_upsampled);

  Waveform out;
  out.sample_rate = cfg.sample_rate;
  out.samples.resize(f0_upsampled.size());
  const double unvoiced_gain = cfg.alpha / (3.0 * cfg.sigma);
  for (std::size_t t = 0; t < f0_upsampled.size(); ++t) {
    const double n = cfg.sigma * rng.gaussian();
    out.samples[t] = f0_upsampled[t] > 0 ? pulses[t] : unvoiced_gain * n;
  }
  return out;
}

Waveform gen_cyclic_noise(const std::vector<double>& f0_upsampled,
                          const CyclicNoiseConfig& beta, const SourceConfig& cfg,
                          const MixLayer& layer, Rng& rng) {
  cfg.validate();
  check_f0(f0_upsampled);
  beta.validate(f0_upsampled.size());
  if (layer.weights.size() != 1)
    throw InputError("gen_cyclic_noise: mix layer must have exactly one weight");

  const double phi = rng.uniform(-kPi, kPi);
  const std::vector<double> sine = fundamental_sine(f0_upsampled, phi, cfg.sample_rate);
  const std::vector<double> pulses = pulse_train_from_sine(sine, f0_upsampled);

  std::vector<double> noise(f0_upsampled.size());
  for (double& x : noise) x = cfg.sigma * rng.gaussian();

  Waveform excitation;
  excitation.sample_rate = cfg.sample_rate;
  excitation.samples =
      cyclic_noise_excitation(f0_upsampled, beta, pulses, noise, cfg.sample_rate);
  return mix_tanh({excitation}, layer);
}

Waveform gen_gaussian_noise(std::size_t length, double std_dev, Rng& rng) {
  if (length < 1) throw InputError("gen_gaussian_noise: length must be >= 1");
  if (std_dev <= 0) throw InputError("gen_gaussian_noise: std must be positive");
  Waveform out;
  out.samples.resize(length);
  for (double& x : out.samples) x = std_dev * rng.gaussian();
  return out;
}

}  // namespace cnsf
