// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "cnsf/losses.hpp"

#include <cmath>

namespace cnsf {

void LossConfig::validate() const {
  if (stft_configs.empty()) throw ConfigError("at least one STFT config is required");
  for (const StftConfig& c : stft_configs) c.validate();
  if (!(eta > 0)) throw ConfigError("eta must be positive");
  if (mask_harmonics < 1) throw ConfigError("mask_harmonics must be >= 1");
  for (int b : block_taps)
    if (b < 0) throw ConfigError("block tap indices must be >= 0");
}

double LossReport::plain() const {
  if (per_config.empty()) return 0.0;
  double s = 0.0;
  for (double v : per_config) s += v;
  return s / double(per_config.size());
}

namespace detail {

double log_spec_distance(const Mat<double>& gen_power, const Mat<double>& ref_power,
                         const Mat<double>& mask_power, double eta) {
  if (!gen_power.same_shape(ref_power))
    throw InputError("log_spec_distance: spectrum shape mismatch");
  const bool masked = mask_power.size() > 0;
  if (masked && !mask_power.same_shape(ref_power))
    throw InputError("log_spec_distance: mask shape mismatch");

  double acc = 0.0;
  for (std::size_t i = 0; i < ref_power.size(); ++i) {
    const double m = masked ? mask_power.v[i] : 1.0;
    const double r = std::log(ref_power.v[i] * m + eta) - std::log(gen_power.v[i] * m + eta);
    acc += r * r;
  }
  return acc / (2.0 * double(ref_power.size()));
}

}  // namespace detail

static void check_pair(const Waveform& a, const Waveform& b) {
  if (a.samples.size() != b.samples.size())
    throw InputError("loss: waveform length mismatch");
  if (a.sample_rate != b.sample_rate) throw InputError("loss: sample rate mismatch");
}

double spectral_amplitude_loss(const Waveform& generated, const Waveform& target,
                               const std::vector<StftConfig>& configs, double eta,
                               std::vector<double>* per_config) {
  check_pair(generated, target);
  if (configs.empty()) throw ConfigError("at least one STFT config is required");
  if (per_config) per_config->clear();

  double acc = 0.0;
  for (const StftConfig& cfg : configs) {
    const Mat<double> gp = stft_power(generated, cfg);
    const Mat<double> rp = stft_power(target, cfg);
    const double v = detail::log_spec_distance(gp, rp, Mat<double>(), eta);
    if (per_config) per_config->push_back(v);
    acc += v;
  }
  return acc / double(configs.size());
}

Waveform build_sine_mask(const std::vector<double>& f0_upsampled,
                         const SourceConfig& cfg, Rng& rng) {
  const std::vector<Waveform> harmonics = gen_harmonics(f0_upsampled, cfg, rng);
  Waveform mask;
  mask.sample_rate = cfg.sample_rate;
  mask.samples.assign(f0_upsampled.size(), 0.0);
  for (const Waveform& h : harmonics)
    for (std::size_t t = 0; t < mask.samples.size(); ++t) mask.samples[t] += h.samples[t];
  const double inv = 1.0 / double(harmonics.size());
  for (double& x : mask.samples) x *= inv;
  return mask;
}

double masked_spectral_loss(const Waveform& block_output, const Waveform& target,
                            const Waveform& mask, const std::vector<StftConfig>& configs,
                            double eta) {
  check_pair(block_output, target);
  check_pair(mask, target);
  if (configs.empty()) throw ConfigError("at least one STFT config is required");
  if (!(eta > 0)) throw ConfigError("eta must be positive");

  double acc = 0.0;
  for (const StftConfig& cfg : configs) {
    const Mat<double> gp = stft_power(block_output, cfg);
    const Mat<double> rp = stft_power(target, cfg);
    const Mat<double> mp = stft_power(mask, cfg);
    acc += detail::log_spec_distance(gp, rp, mp, eta);
  }
  return acc / double(configs.size());
}

LossReport total_training_loss(const ModelOutputs& outputs, const Waveform& target,
                               const Waveform& mask, const LossConfig& cfg,
                               std::optional<double> trainable_beta) {
  cfg.validate();
  LossReport report;
  report.total = 0.0;

  spectral_amplitude_loss(outputs.output, target, cfg.stft_configs, cfg.eta,
                          &report.per_config);
  report.total += report.plain();

  if (cfg.mask_loss_enabled()) {
    double masked_sum = 0.0;
    for (int tap : cfg.block_taps) {
      if (tap >= int(outputs.block_outputs.size()))
        throw InputError("total_training_loss: missing block output for masked loss");
      const double v = masked_spectral_loss(outputs.block_outputs[std::size_t(tap)],
                                            target, mask, cfg.stft_configs, cfg.eta);
      report.per_block_masked.push_back(v);
      masked_sum += v;
    }
    if (cfg.average_masked_blocks && !cfg.block_taps.empty())
      masked_sum /= double(cfg.block_taps.size());
    report.total += masked_sum;
  }

  if (trainable_beta) {
    report.beta_penalty =
        cfg.beta_penalty_weight * std::abs(*trainable_beta - cfg.beta_penalty_target);
    report.total += report.beta_penalty;
  }
  return report;
}

}  // namespace cnsf
