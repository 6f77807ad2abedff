// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)
//
// cnsf command-line front end: source-signal generation, spectral losses,
// toy model training and resynthesis.

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "cnsf/audio_io.hpp"
#include "cnsf/losses.hpp"
#include "cnsf/signal.hpp"
#include "cnsf/sinc_filter.hpp"
#include "cnsf/source.hpp"
#include "cnsf/toy_nsf.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitIo = 2;
constexpr int kExitNumeric = 3;

void echo(const std::string& key, const std::string& value) {
  std::cout << key << "=" << value << "\n";
}

void echo(const std::string& key, double value) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.9g", value);
  echo(key, std::string(buf));
}

std::vector<double> upsample_f0_values(const cnsf::F0Track& track, double sample_rate) {
  const double factor_d = sample_rate * track.frame_shift;
  const int factor = int(std::lround(factor_d));
  if (factor < 1 || std::abs(factor_d - factor) > 1e-6)
    throw cnsf::ConfigError("F0 frame shift does not give an integer up-sampling factor");
  std::vector<double> out;
  out.reserve(track.values.size() * std::size_t(factor));
  for (double v : track.values)
    for (int i = 0; i < factor; ++i) out.push_back(v);
  return out;
}

// ----------------------------------------------------------------------------
// gen-source
// ----------------------------------------------------------------------------

int cmd_gen_source(const std::string& f0_path, const std::string& type, double beta,
                   std::uint64_t seed, double sample_rate, const std::string& out_path,
                   const std::string& plot_path) {
  const cnsf::SourceType st = cnsf::source_type_from_string(type);
  echo("command", "gen-source");
  echo("f0", f0_path);
  echo("type", type);
  echo("beta", beta);
  echo("seed", std::to_string(seed));
  echo("sample_rate", sample_rate);
  echo("output", out_path);

  const cnsf::F0Track track = cnsf::read_f0(f0_path);
  const std::vector<double> f0_up = upsample_f0_values(track, sample_rate);

  cnsf::SourceConfig cfg;
  cfg.sample_rate = sample_rate;
  cnsf::Rng rng(seed);

  cnsf::Waveform wave;
  switch (st) {
    case cnsf::SourceType::Sine: {
      const cnsf::MixLayer layer = cnsf::MixLayer::init(cfg.harmonics, rng);
      wave = cnsf::mix_tanh(cnsf::gen_harmonics(f0_up, cfg, rng), layer);
      break;
    }
    case cnsf::SourceType::Pulse:
      wave = cnsf::gen_pulse_train(f0_up, cfg, rng);
      break;
    case cnsf::SourceType::RandomNoise:
      wave = cnsf::gen_gaussian_noise(f0_up.size(), cfg.sigma, rng);
      wave.sample_rate = sample_rate;
      break;
    case cnsf::SourceType::CyclicNoise: {
      const cnsf::MixLayer layer = cnsf::MixLayer::init(1, rng);
      wave = cnsf::gen_cyclic_noise(f0_up, cnsf::CyclicNoiseConfig::scalar(beta), cfg,
                                    layer, rng);
      break;
    }
  }
  wave.sample_rate = sample_rate;
  cnsf::write_wav(out_path, wave);

  if (!plot_path.empty()) {
    double peak = 0.0;
    for (double s : wave.samples) peak = std::max(peak, std::abs(s));
    std::vector<double> series = wave.samples;
    if (peak > 0.0)
      for (double& s : series) s /= peak;
    cnsf::write_series_csv(plot_path, series);
    echo("plot_data", plot_path);
  }
  return kExitOk;
}

// ----------------------------------------------------------------------------
// loss
// ----------------------------------------------------------------------------

int cmd_loss(const std::string& ref_path, const std::string& gen_path,
             const std::string& mask_f0_path, bool trim, std::uint64_t seed) {
  echo("command", "loss");
  echo("ref", ref_path);
  echo("gen", gen_path);
  echo("seed", std::to_string(seed));

  cnsf::Waveform ref = cnsf::read_wav(ref_path);
  cnsf::Waveform gen = cnsf::read_wav(gen_path);
  if (ref.sample_rate != gen.sample_rate)
    throw cnsf::InputError("sample rate mismatch between --ref and --gen");
  if (ref.samples.size() != gen.samples.size()) {
    if (!trim) throw cnsf::InputError("length mismatch (use --trim to crop to min length)");
    const std::size_t n = std::min(ref.samples.size(), gen.samples.size());
    ref.samples.resize(n);
    gen.samples.resize(n);
  }

  const std::vector<cnsf::StftConfig> cfgs = cnsf::default_loss_stfts();
  std::vector<double> per_config;
  const double plain = cnsf::spectral_amplitude_loss(gen, ref, cfgs, 1e-5, &per_config);
  echo("plain_loss", plain);
  for (std::size_t i = 0; i < per_config.size(); ++i)
    echo("plain_loss_cfg" + std::to_string(i), per_config[i]);

  if (!mask_f0_path.empty()) {
    const cnsf::F0Track track = cnsf::read_f0(mask_f0_path);
    std::vector<double> f0_up = upsample_f0_values(track, ref.sample_rate);
    if (f0_up.size() < ref.samples.size())
      throw cnsf::InputError("--mask-f0 track does not cover the signal");
    f0_up.resize(ref.samples.size());
    cnsf::SourceConfig src;
    src.sample_rate = ref.sample_rate;
    cnsf::Rng rng(seed);
    const cnsf::Waveform mask = cnsf::build_sine_mask(f0_up, src, rng);
    echo("masked_loss", cnsf::masked_spectral_loss(gen, ref, mask, cfgs, 1e-5));
  }
  return kExitOk;
}

// ----------------------------------------------------------------------------
// train-toy
// ----------------------------------------------------------------------------

std::map<std::string, std::string> read_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw cnsf::IoError("cannot open: " + path);
  std::map<std::string, std::string> kv;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw cnsf::ParseError("expected key=value", line_no);
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return kv;
}

int cmd_train_toy(const std::string& config_path, const std::string& out_path,
                  std::string log_path, const std::string& dump_val_dir) {
  echo("command", "train-toy");
  echo("config", config_path);
  echo("output", out_path);

  std::map<std::string, std::string> kv;
  if (!config_path.empty()) kv = read_config_file(config_path);

  cnsf::TrainConfig tc;
  cnsf::ToyNsfConfig arch;
  int n_train = 32, n_val = 8;
  double utt_duration = 0.5;

  for (const auto& [key, value] : kv) {
    try {
      if (key == "seed") tc.seed = std::stoull(value);
      else if (key == "epochs") tc.epochs = std::stoi(value);
      else if (key == "batch_length") tc.batch_length = std::stoi(value);
      else if (key == "lr") tc.lr = std::stod(value);
      else if (key == "adam_beta1") tc.adam_beta1 = std::stod(value);
      else if (key == "adam_beta2") tc.adam_beta2 = std::stod(value);
      else if (key == "adam_eps") tc.adam_eps = std::stod(value);
      else if (key == "source_type") tc.source_type = cnsf::source_type_from_string(value);
      else if (key == "beta_mode") {
        if (value == "fixed") tc.beta_mode = cnsf::BetaMode::Fixed;
        else if (value == "trainable") tc.beta_mode = cnsf::BetaMode::Trainable;
        else throw cnsf::ConfigError("beta_mode must be 'fixed' or 'trainable'");
      }
      else if (key == "beta") tc.beta = std::stod(value);
      else if (key == "mask_loss") tc.mask_loss = value == "1" || value == "true";
      else if (key == "channels") arch.channels = std::stoi(value);
      else if (key == "cond_channels") arch.cond_channels = std::stoi(value);
      else if (key == "cutoff_hz") arch.cutoff_hz = std::stod(value);
      else if (key == "n_train") n_train = std::stoi(value);
      else if (key == "n_val") n_val = std::stoi(value);
      else if (key == "utt_duration") utt_duration = std::stod(value);
      else throw cnsf::ConfigError("unknown config key: " + key);
    } catch (const cnsf::Error&) {
      throw;
    } catch (const std::exception&) {
      throw cnsf::ConfigError("bad value for config key: " + key);
    }
  }

  echo("seed", std::to_string(tc.seed));
  echo("epochs", tc.epochs);
  echo("batch_length", tc.batch_length);
  echo("lr", tc.lr);
  echo("adam_beta1", tc.adam_beta1);
  echo("adam_beta2", tc.adam_beta2);
  echo("adam_eps", tc.adam_eps);
  echo("source_type", cnsf::source_type_to_string(tc.source_type));
  echo("beta_mode", tc.beta_mode == cnsf::BetaMode::Trainable ? "trainable" : "fixed");
  echo("beta", tc.beta);
  echo("mask_loss", tc.mask_loss ? "1" : "0");
  echo("channels", arch.channels);
  echo("cond_channels", arch.cond_channels);
  echo("cutoff_hz", arch.cutoff_hz);
  echo("n_train", n_train);
  echo("n_val", n_val);
  echo("utt_duration", utt_duration);

  cnsf::Rng data_rng(tc.seed ^ 0xd474ULL);
  const std::vector<cnsf::Utterance> all =
      cnsf::make_synthetic_dataset(n_train + n_val, utt_duration, data_rng);
  const std::vector<cnsf::Utterance> train_set(all.begin(), all.begin() + n_train);
  const std::vector<cnsf::Utterance> val_set(all.begin() + n_train, all.end());

  const cnsf::TrainResult result = cnsf::train(train_set, val_set, arch, tc);

  if (log_path.empty()) log_path = out_path + ".losses.csv";
  {
    std::string csv = "epoch,train_loss,val_loss\n";
    char buf[96];
    for (std::size_t e = 0; e < result.log.size(); ++e) {
      std::snprintf(buf, sizeof buf, "%zu,%.9g,%.9g\n", e + 1,
                    result.log[e].train_loss, result.log[e].val_loss);
      csv += buf;
    }
    cnsf::detail::write_file_atomic(log_path, csv);
  }
  cnsf::save_checkpoint(out_path, result.model, tc.seed);

  if (!dump_val_dir.empty()) {
    for (std::size_t i = 0; i < val_set.size(); ++i) {
      const std::string stem = dump_val_dir + "/val_" + std::to_string(i);
      cnsf::write_wav(stem + ".wav", val_set[i].wave);
      cnsf::write_f0(stem + ".f0", val_set[i].f0);
      cnsf::write_features(stem + ".feat", val_set[i].features);
    }
    echo("dump_val", dump_val_dir);
  }

  echo("steps", result.steps);
  echo("best_epoch", std::to_string(result.best_epoch + 1));
  echo("initial_train_loss", result.log.front().train_loss);
  echo("final_train_loss", result.log.back().train_loss);
  echo("best_val_loss", result.log[std::size_t(result.best_epoch)].val_loss);
  echo("checkpoint", out_path);
  echo("loss_log", log_path);
  return kExitOk;
}

// ----------------------------------------------------------------------------
// resynth
// ----------------------------------------------------------------------------

int cmd_resynth(const std::string& ckpt_path, const std::string& f0_path,
                const std::string& feat_path, const std::string& out_path,
                std::uint64_t seed) {
  echo("command", "resynth");
  echo("checkpoint", ckpt_path);
  echo("f0", f0_path);
  echo("features", feat_path);
  echo("seed", std::to_string(seed));
  echo("output", out_path);

  cnsf::Checkpoint ckpt = cnsf::load_checkpoint(ckpt_path);
  const cnsf::F0Track f0 = cnsf::read_f0(f0_path);
  const cnsf::FrameSequence feats = cnsf::read_features(feat_path);

  cnsf::Rng rng(seed);
  const cnsf::ForwardResult fwd = cnsf::forward(ckpt.model, f0, feats, rng);
  cnsf::write_wav(out_path, fwd.output);

  const cnsf::F0Track est =
      cnsf::estimate_f0(fwd.output, f0.frame_shift, 70.0, 400.0);
  int voiced = 0;
  for (double v : f0.values)
    if (v > 0) ++voiced;
  echo("voiced_frames", voiced);
  echo("f0_within_5pct", cnsf::f0_agreement(f0, est, 0.05));
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"cnsf: harmonic-plus-noise source-filter signal toolkit"};
  app.require_subcommand(1);

  // gen-source
  auto* gen = app.add_subcommand("gen-source", "Generate a source signal from an F0 track");
  std::string gen_f0, gen_type = "cno", gen_out, gen_plot;
  double gen_beta = 0.870, gen_sr = 16000.0;
  std::uint64_t gen_seed = 0;
  gen->add_option("--f0", gen_f0, "F0 track file")->required();
  gen->add_option("--type", gen_type, "Source type: sin|pul|rno|cno");
  gen->add_option("--beta", gen_beta, "Cyclic-noise decay rate");
  gen->add_option("--seed", gen_seed, "RNG seed");
  gen->add_option("--sample-rate", gen_sr, "Output sampling rate");
  gen->add_option("-o,--out", gen_out, "Output WAV path")->required();
  gen->add_option("--plot-data", gen_plot, "CSV of max-abs-normalized samples");

  // loss
  auto* loss = app.add_subcommand("loss", "Spectral losses between two waveforms");
  std::string loss_ref, loss_gen, loss_mask_f0;
  bool loss_trim = false;
  std::uint64_t loss_seed = 0;
  loss->add_option("--ref", loss_ref, "Reference WAV")->required();
  loss->add_option("--gen", loss_gen, "Generated WAV")->required();
  loss->add_option("--mask-f0", loss_mask_f0, "F0 track for the sine mask");
  loss->add_flag("--trim", loss_trim, "Crop both signals to the shorter length");
  loss->add_option("--seed", loss_seed, "RNG seed for the mask");

  // train-toy
  auto* train = app.add_subcommand("train-toy", "Train the toy model on synthetic data");
  std::string train_cfg, train_out, train_log, train_dump;
  train->add_option("--config", train_cfg, "key=value config file");
  train->add_option("--out", train_out, "Checkpoint output path")->required();
  train->add_option("--log", train_log, "Per-epoch loss CSV (default <out>.losses.csv)");
  train->add_option("--dump-val", train_dump, "Directory for validation wav/f0/feat dumps");

  // resynth
  auto* resynth = app.add_subcommand("resynth", "Resynthesize from F0 + features");
  std::string rs_ckpt, rs_f0, rs_feat, rs_out;
  std::uint64_t rs_seed = 0;
  resynth->add_option("--ckpt", rs_ckpt, "Checkpoint path")->required();
  resynth->add_option("--f0", rs_f0, "F0 track file")->required();
  resynth->add_option("--features", rs_feat, "Feature file")->required();
  resynth->add_option("-o,--out", rs_out, "Output WAV path")->required();
  resynth->add_option("--seed", rs_seed, "RNG seed");

  try {
    app.parse(argc, argv);
    if (gen->parsed())
      return cmd_gen_source(gen_f0, gen_type, gen_beta, gen_seed, gen_sr, gen_out, gen_plot);
    if (loss->parsed())
      return cmd_loss(loss_ref, loss_gen, loss_mask_f0, loss_trim, loss_seed);
    if (train->parsed())
      return cmd_train_toy(train_cfg, train_out, train_log, train_dump);
    if (resynth->parsed())
      return cmd_resynth(rs_ckpt, rs_f0, rs_feat, rs_out, rs_seed);
    return kExitUsage;
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitUsage;
  } catch (const cnsf::ParseError& e) {
    std::cerr << "error: " << e.what() << " (at " << e.where() << ")\n";
    return kExitIo;
  } catch (const cnsf::IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitIo;
  } catch (const cnsf::NumericError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const cnsf::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitNumeric;
  }
}
