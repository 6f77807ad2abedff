// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)
#pragma once

#include <optional>
#include <vector>

#include "cnsf/common.hpp"
#include "cnsf/signal.hpp"
#include "cnsf/source.hpp"

namespace cnsf {

inline std::vector<StftConfig> default_loss_stfts() {
  return {
      StftConfig{512, 320, 80, WindowType::Hann},
      StftConfig{128, 80, 40, WindowType::Hann},
      StftConfig{2048, 1920, 640, WindowType::Hann},
  };
}

struct LossConfig {
  std::vector<StftConfig> stft_configs = default_loss_stfts();
  double eta = 1e-5;
  int mask_harmonics = 8;
  /// Filter-block taps that receive the masked loss; empty disables it.
  std::vector<int> block_taps = {0, 1, 2, 3, 4};
  /// Masked terms are summed across blocks by default; set to average instead.
  bool average_masked_blocks = false;
  double beta_penalty_weight = 0.01;
  double beta_penalty_target = 0.870;

  void validate() const;
  bool mask_loss_enabled() const { return !block_taps.empty(); }
};

struct LossReport {
  double total = 0.0;
  std::vector<double> per_config;        // plain loss, one per STFT config
  std::vector<double> per_block_masked;  // one per tapped block
  double beta_penalty = 0.0;

  double plain() const;
};

/// Waveforms a trained model produces for one utterance: the final output and
/// the per-block taps of the harmonic branch.
struct ModelOutputs {
  Waveform output;
  std::vector<Waveform> block_outputs;
};

/// Multi-resolution log spectral amplitude distance, averaged over configs:
/// mean_c (1/(2*N*K')) * sum_{n,k} log^2((|Y|^2 + eta) / (|Yhat|^2 + eta)).
double spectral_amplitude_loss(const Waveform& generated, const Waveform& target,
                               const std::vector<StftConfig>& configs, double eta = 1e-5,
                               std::vector<double>* per_config = nullptr);

/// Mask signal: mean of the H harmonic sine carriers (fresh phase and noise
/// per call).
Waveform build_sine_mask(const std::vector<double>& f0_upsampled,
                         const SourceConfig& cfg, Rng& rng);

/// Sine-masked distance: both power spectra are weighted by the mask power
/// before the eta floor, so only the harmonic structure is compared.
double masked_spectral_loss(const Waveform& block_output, const Waveform& target,
                            const Waveform& mask, const std::vector<StftConfig>& configs,
                            double eta = 1e-5);

/// Full training objective: plain loss on the output, masked loss on each
/// tapped block, and the L1 pull on a trainable beta.
LossReport total_training_loss(const ModelOutputs& outputs, const Waveform& target,
                               const Waveform& mask, const LossConfig& cfg,
                               std::optional<double> trainable_beta = std::nullopt);

namespace detail {

/// One-config distance given precomputed power spectra (mask may be empty).
double log_spec_distance(const Mat<double>& gen_power, const Mat<double>& ref_power,
                         const Mat<double>& mask_power, double eta);

}  // namespace detail

}  // namespace cnsf
