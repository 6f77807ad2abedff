// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)
#pragma once

#include <cmath>
#include <vector>

#include "cnsf/common.hpp"
#include "cnsf/signal.hpp"

namespace cnsf {

// ----------------------------------------------------------------------------
// Configuration
// ----------------------------------------------------------------------------

struct SourceConfig {
  int harmonics = 8;          // H
  double sigma = 0.003;       // additive noise std
  double alpha = 0.1;         // sine amplitude
  double sample_rate = 16000.0;

  void validate() const;
};

/// Weights of the trainable feedforward mix: e = tanh(sum_h w_h * x_h + bias).
struct MixLayer {
  std::vector<double> weights;
  double bias = 0.0;

  /// w ~ uniform(-1/sqrt(H), 1/sqrt(H)), bias 0.
  static MixLayer init(int channels, Rng& rng);
};

/// Decay rate of the cyclic-noise source. Size-1 vector broadcasts; otherwise
/// one value per sample.
struct CyclicNoiseConfig {
  std::vector<double> beta;

  static CyclicNoiseConfig scalar(double b) { return CyclicNoiseConfig{{b}}; }
  double at(std::size_t t) const { return beta.size() == 1 ? beta[0] : beta[t]; }
  void validate(std::size_t length) const;
};

// ----------------------------------------------------------------------------
// Generators. All randomness comes from the caller-owned Rng; identical seeds
// give bit-identical output.
// ----------------------------------------------------------------------------

/// Harmonic sine carrier: voiced samples are alpha*sin(h * cumulative phase
/// + phi) + n_t, unvoiced samples are (alpha/(3*sigma)) * n_t. Phase
/// accumulates over every sample, voiced or not. Draws phi and per-sample
/// noise from rng.
Waveform gen_sine_harmonic(const std::vector<double>& f0_upsampled, int h,
                           const SourceConfig& cfg, Rng& rng);

/// Same, with a caller-supplied initial phase (noise still drawn from rng).
Waveform gen_sine_harmonic_with_phase(const std::vector<double>& f0_upsampled, int h,
                                      double phi, const SourceConfig& cfg, Rng& rng);

/// All H harmonics sharing one initial phase; each harmonic gets independent
/// additive noise. Draw order: phi, then noise for h = 1..H.
std::vector<Waveform> gen_harmonics(const std::vector<double>& f0_upsampled,
                                    const SourceConfig& cfg, Rng& rng);

/// e = tanh(sum_h w_h * x_h + bias), elementwise.
Waveform mix_tanh(const std::vector<Waveform>& channels, const MixLayer& layer);

/// Standalone pulse-train source: unit pulses at the local maxima of the
/// noise-free fundamental sine in voiced regions, Gaussian noise of std
/// alpha/3 in unvoiced regions.
Waveform gen_pulse_train(const std::vector<double>& f0_upsampled,
                         const SourceConfig& cfg, Rng& rng);

/// Cyclic-noise source: pulse train convolved with an exponentially decaying
/// noise kernel, then passed through the tanh mix (layer must have exactly one
/// weight). Draw order: phi, then the noise sequence.
Waveform gen_cyclic_noise(const std::vector<double>& f0_upsampled,
                          const CyclicNoiseConfig& beta, const SourceConfig& cfg,
                          const MixLayer& layer, Rng& rng);

/// i.i.d. N(0, std^2).
Waveform gen_gaussian_noise(std::size_t length, double std_dev, Rng& rng);

// ----------------------------------------------------------------------------
// Composable pieces (the model and the mask builder reuse these directly).
// ----------------------------------------------------------------------------

/// Cumulative phase 2*pi*sum_{k<=t} f_k / N_s.
std::vector<double> cumulative_phase(const std::vector<double>& f0_upsampled,
                                     double sample_rate);

/// Noise-free unit-amplitude fundamental sine sin(phase_t + phi).
std::vector<double> fundamental_sine(const std::vector<double>& f0_upsampled,
                                     double phi, double sample_rate);

/// 0/1 pulse train at strict local maxima of `sine` restricted to voiced
/// samples. Flat runs pulse on their first sample.
std::vector<double> pulse_train_from_sine(const std::vector<double>& sine,
                                          const std::vector<double>& f0_upsampled);

/// Pre-mix cyclic-noise excitation: voiced t gets
///   sum_k noise[k] * exp(-k * f_t / (beta_t * N_s)) * pulse[t-k],
/// unvoiced t gets noise[t]. The decay always uses f and beta at the output
/// sample, so the per-period attenuation exp(-1/beta) is F0-independent.
std::vector<double> cyclic_noise_excitation(const std::vector<double>& f0_upsampled,
                                            const CyclicNoiseConfig& beta,
                                            const std::vector<double>& pulses,
                                            const std::vector<double>& noise,
                                            double sample_rate);

/// d excitation / d beta for a scalar beta (voiced samples only).
std::vector<double> cyclic_noise_excitation_dbeta(const std::vector<double>& f0_upsampled,
                                                  double beta,
                                                  const std::vector<double>& pulses,
                                                  const std::vector<double>& noise,
                                                  double sample_rate);

namespace detail {

/// Shared elementwise mix kernel; the tape op instantiates this with the same
/// scalar type as the library path so composed results match bit for bit.
template <typename T>
void mix_tanh_eval(const T* const* rows, int channels, int length, const T* w, T bias,
                   T* out) {
  for (int t = 0; t < length; ++t) {
    T acc = bias;
    for (int h = 0; h < channels; ++h) acc += w[h] * rows[h][t];
    out[t] = std::tanh(acc);
  }
}

}  // namespace detail

}  // namespace cnsf
