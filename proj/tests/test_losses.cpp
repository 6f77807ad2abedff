#include <doctest.h>

#include <cmath>
#include <vector>

#include "cnsf/losses.hpp"
#include "oracles.hpp"

using namespace cnsf;

namespace {

Waveform make_wave(std::vector<double> samples, double sr = 16000.0) {
  Waveform w;
  w.samples = std::move(samples);
  w.sample_rate = sr;
  return w;
}

Waveform harmonic_signal(double f0, int harmonics, std::size_t n, double sr = 16000.0) {
  Waveform w;
  w.sample_rate = sr;
  w.samples.resize(n);
  for (std::size_t t = 0; t < n; ++t) {
    double s = 0.0;
    for (int h = 1; h <= harmonics; ++h)
      s += (0.3 / h) * std::sin(2.0 * kPi * f0 * h * double(t) / sr);
    w.samples[t] = s;
  }
  return w;
}

Waveform noise_wave(std::size_t n, double std_dev, std::uint64_t seed) {
  Rng rng(seed);
  Waveform w;
  w.samples.resize(n);
  for (double& v : w.samples) v = std_dev * rng.gaussian();
  return w;
}

}  // namespace

TEST_CASE("spectral_amplitude_loss: identical signals give exactly zero") {
  const Waveform x = noise_wave(6000, 0.1, 5);
  std::vector<double> per_config;
  const double loss =
      spectral_amplitude_loss(x, x, default_loss_stfts(), 1e-5, &per_config);
  CHECK(loss == 0.0);
  for (double v : per_config) CHECK(v == 0.0);
}

TEST_CASE("spectral_amplitude_loss: factor-2 scaling hits the closed form") {
  // Full-band white noise keeps every bin energetic, so the eta floor is
  // negligible, every term is [log 4]^2, and the 1/(2NK') normalization turns
  // the total into [log 4]^2 / 2.
  const Waveform x = noise_wave(16000, 0.5, 6);
  Waveform y = x;
  for (double& v : y.samples) v *= 2.0;
  const double loss = spectral_amplitude_loss(y, x, default_loss_stfts(), 1e-5);
  const double expect = std::log(4.0) * std::log(4.0) / 2.0;
  CHECK(loss == doctest::Approx(expect).epsilon(0.02));
}

TEST_CASE("spectral_amplitude_loss: symmetric in its arguments") {
  const Waveform a = noise_wave(4000, 0.2, 7);
  const Waveform b = noise_wave(4000, 0.05, 8);
  const double ab = spectral_amplitude_loss(a, b, default_loss_stfts());
  const double ba = spectral_amplitude_loss(b, a, default_loss_stfts());
  CHECK(ab == doctest::Approx(ba).epsilon(1e-12));
}

TEST_CASE("spectral_amplitude_loss: nonnegative, zero only for matching spectra") {
  Rng rng(9);
  for (int trial = 0; trial < 8; ++trial) {
    const Waveform a = noise_wave(3000, 0.1, 100 + std::uint64_t(trial));
    const Waveform b = noise_wave(3000, 0.1, 200 + std::uint64_t(trial));
    const double v = spectral_amplitude_loss(a, b, default_loss_stfts());
    CHECK(v >= 0.0);
    CHECK(v > 0.0);  // independent noise never matches exactly
  }
}

TEST_CASE("spectral_amplitude_loss: length mismatch is an error") {
  CHECK_THROWS_AS(spectral_amplitude_loss(noise_wave(100, 0.1, 1), noise_wave(99, 0.1, 1),
                                          default_loss_stfts()),
                  InputError);
}

TEST_CASE("build_sine_mask: single harmonic has one dominant spectral peak") {
  SourceConfig cfg;
  cfg.harmonics = 1;
  cfg.sigma = 1e-9;
  Rng rng(11);
  const Waveform mask = build_sine_mask(std::vector<double>(4096, 250.0), cfg, rng);

  StftConfig sc{2048, 2048, 2048, WindowType::Rect};
  const SpectrumFrames sp = stft(mask, sc);
  int peak_bin = 0;
  double peak = 0.0;
  for (int k = 0; k < sp.num_bins; ++k) {
    if (std::abs(sp.at(0, k)) > peak) {
      peak = std::abs(sp.at(0, k));
      peak_bin = k;
    }
  }
  CHECK(std::abs(peak_bin - 250.0 * 2048.0 / 16000.0) <= 1.0);
}

TEST_CASE("build_sine_mask: eight peaks at the harmonic frequencies") {
  SourceConfig cfg;  // H = 8
  cfg.sigma = 1e-9;
  Rng rng(12);
  const Waveform mask = build_sine_mask(std::vector<double>(4096, 200.0), cfg, rng);

  StftConfig sc{2048, 2048, 2048, WindowType::Rect};
  const SpectrumFrames sp = stft(mask, sc);
  std::vector<double> mag(std::size_t(sp.num_bins), 0.0);
  for (int k = 0; k < sp.num_bins; ++k) mag[std::size_t(k)] = std::abs(sp.at(0, k));

  // Peak-picking oracle: local maxima above a tenth of the global peak.
  double global = 0.0;
  for (double v : mag) global = std::max(global, v);
  std::vector<int> peaks;
  for (int k = 1; k + 1 < sp.num_bins; ++k)
    if (mag[std::size_t(k)] > mag[std::size_t(k - 1)] &&
        mag[std::size_t(k)] >= mag[std::size_t(k + 1)] &&
        mag[std::size_t(k)] > 0.1 * global)
      peaks.push_back(k);

  REQUIRE(peaks.size() == 8);
  for (int h = 1; h <= 8; ++h)
    CHECK(std::abs(peaks[std::size_t(h - 1)] - 200.0 * h * 2048.0 / 16000.0) <= 1.0);
}

TEST_CASE("build_sine_mask: unvoiced F0 gives low-level noise") {
  SourceConfig cfg;
  Rng rng(13);
  const Waveform mask = build_sine_mask(std::vector<double>(100000, 0.0), cfg, rng);
  // Mean of H independent unvoiced channels: std = (alpha/3)/sqrt(H).
  const double expect = cfg.alpha / 3.0 / std::sqrt(double(cfg.harmonics));
  CHECK(oracle::stddev(mask.samples) == doctest::Approx(expect).epsilon(0.05));
}

TEST_CASE("masked_spectral_loss: identical signals give zero for any mask") {
  const Waveform x = harmonic_signal(220.0, 5, 8000);
  const Waveform mask = noise_wave(8000, 0.05, 3);
  CHECK(masked_spectral_loss(x, x, mask, default_loss_stfts()) == 0.0);
}

TEST_CASE("masked_spectral_loss: all-zero mask floors every term to zero") {
  const Waveform a = noise_wave(6000, 0.3, 14);
  const Waveform b = noise_wave(6000, 0.1, 15);
  const Waveform mask = make_wave(std::vector<double>(6000, 0.0));
  CHECK(masked_spectral_loss(a, b, mask, default_loss_stfts()) == 0.0);
}

TEST_CASE("masked_spectral_loss: pitch shift raises the masked loss") {
  const std::size_t n = 16000;
  const Waveform target = harmonic_signal(200.0, 6, n);
  const Waveform shifted = harmonic_signal(220.0, 6, n);  // +10%

  SourceConfig cfg;
  Rng rng(16);
  const Waveform mask = build_sine_mask(std::vector<double>(n, 200.0), cfg, rng);

  const double at_target = masked_spectral_loss(target, target, mask, default_loss_stfts());
  const double at_shift = masked_spectral_loss(shifted, target, mask, default_loss_stfts());
  CHECK(at_target == 0.0);
  CHECK(at_shift > at_target);
  CHECK(at_shift > 1.0);  // harmonic mismatch is heavily penalized
}

TEST_CASE("masked loss cares about harmonic placement more than envelope") {
  // An inter-harmonic "tilt" perturbation leaves the mask peaks untouched; a
  // pitch shift of comparable energy moves them. The masked loss must rank
  // the shift as worse.
  const std::size_t n = 16000;
  const Waveform target = harmonic_signal(200.0, 6, n);
  const Waveform shifted = harmonic_signal(220.0, 6, n);

  Waveform tilted = target;
  for (std::size_t t = 0; t < n; ++t) {
    double s = 0.0;
    for (int h = 1; h <= 5; ++h)  // tones half-way between harmonics
      s += (0.3 / h) * std::sin(2.0 * kPi * (200.0 * h + 100.0) * double(t) / 16000.0);
    tilted.samples[t] += s;
  }

  SourceConfig cfg;
  Rng rng(17);
  const Waveform mask = build_sine_mask(std::vector<double>(n, 200.0), cfg, rng);

  const double masked_tilt = masked_spectral_loss(tilted, target, mask, default_loss_stfts());
  const double masked_shift = masked_spectral_loss(shifted, target, mask, default_loss_stfts());
  CHECK(masked_tilt < masked_shift);
}

TEST_CASE("total_training_loss: perfect resynthesis with on-target beta is zero") {
  const Waveform x = harmonic_signal(180.0, 4, 4000);
  ModelOutputs out;
  out.output = x;
  out.block_outputs.assign(5, x);
  const Waveform mask = noise_wave(4000, 0.02, 18);

  LossConfig cfg;
  const LossReport report = total_training_loss(out, x, mask, cfg, 0.870);
  CHECK(report.total == 0.0);
  CHECK(report.beta_penalty == 0.0);
  CHECK(report.per_block_masked.size() == 5);
}

TEST_CASE("total_training_loss: beta one away from target costs exactly 0.01") {
  const Waveform x = harmonic_signal(180.0, 4, 4000);
  ModelOutputs out;
  out.output = x;
  out.block_outputs.assign(5, x);
  const Waveform mask = noise_wave(4000, 0.02, 19);

  LossConfig cfg;
  const LossReport report = total_training_loss(out, x, mask, cfg, 1.870);
  CHECK(report.total == doctest::Approx(0.01).epsilon(1e-12));
  CHECK(report.beta_penalty == doctest::Approx(0.01).epsilon(1e-12));
}

TEST_CASE("total_training_loss: disabled masking leaves the plain loss only") {
  const Waveform target = harmonic_signal(150.0, 4, 4000);
  const Waveform gen = noise_wave(4000, 0.05, 20);
  ModelOutputs out;
  out.output = gen;  // no block outputs at all

  LossConfig cfg;
  cfg.block_taps.clear();
  const Waveform mask = make_wave(std::vector<double>(4000, 0.0));
  const LossReport report = total_training_loss(out, target, mask, cfg, std::nullopt);
  CHECK(report.total ==
        doctest::Approx(spectral_amplitude_loss(gen, target, cfg.stft_configs))
            .epsilon(1e-12));
  CHECK(report.per_block_masked.empty());
  CHECK(report.beta_penalty == 0.0);
}

TEST_CASE("total_training_loss: averaging switch divides the masked sum by the taps") {
  const Waveform target = harmonic_signal(150.0, 4, 4000);
  const Waveform gen = noise_wave(4000, 0.05, 21);
  ModelOutputs out;
  out.output = gen;
  out.block_outputs.assign(5, gen);
  const Waveform mask = noise_wave(4000, 0.02, 22);

  LossConfig cfg;
  const LossReport summed = total_training_loss(out, target, mask, cfg, std::nullopt);
  cfg.average_masked_blocks = true;
  const LossReport averaged = total_training_loss(out, target, mask, cfg, std::nullopt);

  const double plain = summed.plain();
  CHECK(averaged.total - plain ==
        doctest::Approx((summed.total - plain) / 5.0).epsilon(1e-12));
}

TEST_CASE("total_training_loss: missing block outputs with masking is an error") {
  const Waveform x = harmonic_signal(150.0, 4, 4000);
  ModelOutputs out;
  out.output = x;
  out.block_outputs.assign(3, x);  // two taps short
  LossConfig cfg;
  CHECK_THROWS_AS(total_training_loss(out, x, x, cfg, std::nullopt), InputError);
}

TEST_CASE("loss is invariant to a simultaneous one-frame shift") {
  // Rect window, frame_length == frame_shift, content padded away from both
  // ends: shifting generated and target together permutes whole frames.
  const int frame = 128;
  const int n = frame * 24;
  Rng rng(23);
  std::vector<double> a(std::size_t(n), 0.0), b(std::size_t(n), 0.0);
  for (int t = 2 * frame; t < n - 4 * frame; ++t) {
    a[std::size_t(t)] = rng.uniform(-0.5, 0.5);
    b[std::size_t(t)] = rng.uniform(-0.5, 0.5);
  }
  std::vector<double> a2(std::size_t(n), 0.0), b2(std::size_t(n), 0.0);
  for (int t = frame; t < n; ++t) {
    a2[std::size_t(t)] = a[std::size_t(t - frame)];
    b2[std::size_t(t)] = b[std::size_t(t - frame)];
  }

  const std::vector<StftConfig> cfgs = {StftConfig{frame, frame, frame, WindowType::Rect}};
  const double before = spectral_amplitude_loss(make_wave(a), make_wave(b), cfgs);
  const double after = spectral_amplitude_loss(make_wave(a2), make_wave(b2), cfgs);
  CHECK(std::abs(before - after) <= 1e-12);
}
