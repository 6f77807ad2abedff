// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "cnsf/toy_nsf.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>
#include <unordered_map>

#include "cnsf/fft.hpp"

namespace cnsf {

SourceType source_type_from_string(const std::string& s) {
  if (s == "sin") return SourceType::Sine;
  if (s == "pul") return SourceType::Pulse;
  if (s == "rno") return SourceType::RandomNoise;
  if (s == "cno") return SourceType::CyclicNoise;
  throw ConfigError("unknown source type: " + s);
}

std::string source_type_to_string(SourceType t) {
  switch (t) {
    case SourceType::Sine: return "sin";
    case SourceType::Pulse: return "pul";
    case SourceType::RandomNoise: return "rno";
    case SourceType::CyclicNoise: return "cno";
  }
  return "?";
}

void ToyNsfConfig::validate() const {
  if (channels < 1 || cond_channels < 1 || feature_dim < 1)
    throw ConfigError("channel/feature dimensions must be >= 1");
  if (kernel < 1 || kernel % 2 == 0) throw ConfigError("kernel must be odd");
  if (frame_shift < 1) throw ConfigError("frame_shift must be >= 1");
  if (sample_rate <= 0) throw ConfigError("sample_rate must be positive");
  const double c = cutoff_normalized();
  if (!(c > 0.0 && c < 0.5)) throw ConfigError("cutoff_hz must lie in (0, sample_rate/2)");
  if (sinc_order < 1 || sinc_order % 2 == 0) throw ConfigError("sinc_order must be odd");
  if (!(beta > 0)) throw ConfigError("beta must be positive");
  if (beta_mode == BetaMode::Trainable && source_type != SourceType::CyclicNoise)
    throw ConfigError("trainable beta requires the cyclic-noise source");
  if (smooth_window < 1) throw ConfigError("smooth_window must be >= 1");
  if (smooth_passes < 0) throw ConfigError("smooth_passes must be >= 0");
  source.validate();
  loss.validate();
  for (int tap : loss.block_taps)
    if (tap >= kHarmonicBlocks) throw ConfigError("block tap index out of range");
}

LossConfig ToyNsfConfig::effective_loss() const {
  LossConfig lc = loss;
  if (!mask_loss) lc.block_taps.clear();
  return lc;
}

void TrainConfig::validate() const {
  if (!(lr >= 0)) throw ConfigError("learning rate must be >= 0");
  if (!(adam_beta1 >= 0 && adam_beta1 < 1) || !(adam_beta2 >= 0 && adam_beta2 < 1))
    throw ConfigError("adam betas must lie in [0, 1)");
  if (!(adam_eps > 0)) throw ConfigError("adam eps must be positive");
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (batch_length < 1) throw ConfigError("batch_length must be >= 1");
  if (!(beta > 0)) throw ConfigError("beta must be positive");
}

// ----------------------------------------------------------------------------
// Parameters
// ----------------------------------------------------------------------------

template <typename T>
void ConvParams<T>::init(int in_c, int out_c, int k, int dil, Rng* rng) {
  in_ch = in_c;
  out_ch = out_c;
  kernel = k;
  dilation = dil;
  w = Mat<T>(out_c, in_c * k);
  b = Mat<T>(out_c, 1);
  if (rng) {
    const double bound = 1.0 / std::sqrt(double(in_c * k));
    for (T& x : w.v) x = T(rng->uniform(-bound, bound));
  }
}

template <typename T, typename Model, typename F>
static void visit_params(Model& m, F&& f) {
  f("cond1.w", m.cond1.w);
  f("cond1.b", m.cond1.b);
  f("cond2.w", m.cond2.w);
  f("cond2.b", m.cond2.b);
  auto visit_block = [&](const std::string& prefix, auto& blk) {
    f(prefix + ".pre.w", blk.pre.w);
    f(prefix + ".pre.b", blk.pre.b);
    f(prefix + ".cond.w", blk.cond.w);
    f(prefix + ".cond.b", blk.cond.b);
    for (std::size_t k = 0; k < blk.layers.size(); ++k) {
      char name[32];
      std::snprintf(name, sizeof name, ".layer%02d", int(k) + 1);
      f(prefix + name + ".w", blk.layers[k].w);
      f(prefix + name + ".b", blk.layers[k].b);
    }
    f(prefix + ".post.w", blk.post.w);
    f(prefix + ".post.b", blk.post.b);
  };
  for (int bidx = 0; bidx < kHarmonicBlocks; ++bidx)
    visit_block("h" + std::to_string(bidx + 1), m.harmonic[std::size_t(bidx)]);
  visit_block("noise", m.noise_block);
  if (m.has_mix()) {
    f("mix.w", m.mix_w);
    f("mix.b", m.mix_b);
  }
  if (m.cfg.beta_mode == BetaMode::Trainable) f("beta", m.beta);
}

template <typename T>
static BlockParams<T> make_block(const ToyNsfConfig& cfg, Rng& rng) {
  BlockParams<T> blk;
  blk.pre.init(1, cfg.channels, 1, 1, &rng);
  blk.cond.init(cfg.cond_channels, cfg.channels, 1, 1, &rng);
  blk.layers.resize(std::size_t(kLayersPerBlock));
  for (int k = 0; k < kLayersPerBlock; ++k)
    blk.layers[std::size_t(k)].init(cfg.channels, cfg.channels, cfg.kernel, 1 << k, &rng);
  blk.post.init(cfg.channels, 1, 1, 1, nullptr);  // starts as identity block
  return blk;
}

template <typename T>
ToyNsfModel<T> ToyNsfModel<T>::create(const ToyNsfConfig& cfg, Rng& rng) {
  cfg.validate();
  ToyNsfModel<T> m;
  m.cfg = cfg;
  m.cond1.init(cfg.feature_dim + 1, cfg.cond_channels, 3, 1, &rng);
  m.cond2.init(cfg.cond_channels, cfg.cond_channels, 3, 1, &rng);
  m.harmonic.resize(kHarmonicBlocks);
  for (int b = 0; b < kHarmonicBlocks; ++b)
    m.harmonic[std::size_t(b)] = make_block<T>(cfg, rng);
  m.noise_block = make_block<T>(cfg, rng);
  if (m.has_mix()) {
    const int h = cfg.source_type == SourceType::Sine ? cfg.source.harmonics : 1;
    const MixLayer ml = MixLayer::init(h, rng);
    m.mix_w = Mat<T>(h, 1);
    for (int i = 0; i < h; ++i) m.mix_w.v[std::size_t(i)] = T(ml.weights[std::size_t(i)]);
    m.mix_b = Mat<T>::scalar(T(ml.bias));
  }
  m.beta = Mat<T>::scalar(T(cfg.beta));
  return m;
}

template <typename T>
bool ToyNsfModel<T>::has_mix() const {
  return cfg.source_type == SourceType::Sine || cfg.source_type == SourceType::CyclicNoise;
}

template <typename T>
MixLayer ToyNsfModel<T>::mix_layer() const {
  if (!has_mix()) throw InputError("model source has no mix layer");
  MixLayer ml;
  ml.weights.resize(mix_w.size());
  for (std::size_t i = 0; i < mix_w.size(); ++i) ml.weights[i] = double(mix_w.v[i]);
  ml.bias = double(mix_b.v[0]);
  return ml;
}

template <typename T>
std::vector<std::pair<std::string, Mat<T>*>> ToyNsfModel<T>::params() {
  std::vector<std::pair<std::string, Mat<T>*>> out;
  visit_params<T>(*this, [&](const std::string& n, Mat<T>& m) { out.emplace_back(n, &m); });
  return out;
}

template <typename T>
std::vector<std::pair<std::string, const Mat<T>*>> ToyNsfModel<T>::params() const {
  std::vector<std::pair<std::string, const Mat<T>*>> out;
  visit_params<T>(*this,
                  [&](const std::string& n, const Mat<T>& m) { out.emplace_back(n, &m); });
  return out;
}

// ----------------------------------------------------------------------------
// Forward graph
// ----------------------------------------------------------------------------

static std::vector<double> repeat_f0(const std::vector<double>& frames, int factor) {
  std::vector<double> out(frames.size() * std::size_t(factor));
  for (std::size_t n = 0; n < frames.size(); ++n)
    for (int i = 0; i < factor; ++i) out[n * std::size_t(factor) + i] = frames[n];
  return out;
}

SourceDraw draw_source(const ToyNsfConfig& cfg, const std::vector<double>& f0_upsampled,
                       Rng& rng) {
  const std::size_t t_len = f0_upsampled.size();
  SourceDraw draw;
  switch (cfg.source_type) {
    case SourceType::Sine: {
      const std::vector<Waveform> hs = gen_harmonics(f0_upsampled, cfg.source, rng);
      draw.harmonics = Mat<double>(int(hs.size()), int(t_len));
      for (std::size_t h = 0; h < hs.size(); ++h)
        std::copy(hs[h].samples.begin(), hs[h].samples.end(), draw.harmonics.row(int(h)));
      break;
    }
    case SourceType::Pulse:
      draw.pulse_source = gen_pulse_train(f0_upsampled, cfg.source, rng).samples;
      break;
    case SourceType::RandomNoise:
      draw.noise_source = gen_gaussian_noise(t_len, cfg.source.sigma, rng).samples;
      break;
    case SourceType::CyclicNoise: {
      // Same draw order as gen_cyclic_noise: phase first, then the noise
      // sequence.
      const double phi = rng.uniform(-kPi, kPi);
      const std::vector<double> sine =
          fundamental_sine(f0_upsampled, phi, cfg.source.sample_rate);
      draw.pulses = pulse_train_from_sine(sine, f0_upsampled);
      draw.kernel_noise.resize(t_len);
      for (double& x : draw.kernel_noise) x = cfg.source.sigma * rng.gaussian();
      if (cfg.beta_mode == BetaMode::Fixed)
        draw.excitation = cyclic_noise_excitation(f0_upsampled,
                                                  CyclicNoiseConfig::scalar(cfg.beta),
                                                  draw.pulses, draw.kernel_noise,
                                                  cfg.source.sample_rate);
      break;
    }
  }
  draw.noise_branch = gen_gaussian_noise(t_len, cfg.source.sigma, rng).samples;
  if (cfg.mask_loss) {
    SourceConfig mask_cfg = cfg.source;
    mask_cfg.harmonics = cfg.loss.mask_harmonics;
    draw.mask = build_sine_mask(f0_upsampled, mask_cfg, rng).samples;
  }
  return draw;
}

namespace {

template <typename T>
Mat<T> row_mat(const std::vector<double>& v) {
  Mat<T> m(1, int(v.size()));
  for (std::size_t i = 0; i < v.size(); ++i) m.v[i] = T(v[i]);
  return m;
}

template <typename T>
ad::Id build_block_graph(ad::Tape<T>& tape, ad::Id x, ad::Id cond,
                         const std::string& prefix, const ToyNsfConfig& cfg,
                         const std::unordered_map<std::string, ad::Id>& ids) {
  auto pid = [&](const std::string& s) { return ids.at(prefix + "." + s); };
  ad::Id h = tape.add(tape.conv1d(x, pid("pre.w"), pid("pre.b"), 1, 1),
                      tape.conv1d(cond, pid("cond.w"), pid("cond.b"), 1, 1));
  h = tape.tanh_op(h);
  ad::Id skip = h;
  for (int k = 0; k < kLayersPerBlock; ++k) {
    char name[32];
    std::snprintf(name, sizeof name, "layer%02d", k + 1);
    const std::string ln = name;
    ad::Id u = tape.tanh_op(
        tape.conv1d(h, pid(ln + ".w"), pid(ln + ".b"), cfg.kernel, 1 << k));
    h = tape.add(h, u);
    skip = tape.add(skip, u);
  }
  ad::Id y = tape.conv1d(skip, pid("post.w"), pid("post.b"), 1, 1);
  return tape.add(x, y);
}

template <typename T>
std::vector<std::vector<T>> cast_taps(const std::vector<std::vector<double>>& taps) {
  std::vector<std::vector<T>> out(taps.size());
  for (std::size_t i = 0; i < taps.size(); ++i) {
    out[i].resize(taps[i].size());
    for (std::size_t j = 0; j < taps[i].size(); ++j) out[i][j] = T(taps[i][j]);
  }
  return out;
}

}  // namespace

template <typename T>
void build_forward(ForwardGraph<T>& graph, ToyNsfModel<T>& model, const F0Track& f0,
                   const FrameSequence& features, const SourceDraw& draw) {
  const ToyNsfConfig& cfg = model.cfg;
  cfg.validate();
  f0.validate();
  features.validate();

  const int n_frames = f0.num_frames();
  if (n_frames < 1) throw InputError("forward: empty F0 track");
  if (features.num_frames() != n_frames)
    throw InputError("forward: F0 and features are not frame-aligned");
  if (features.dim() != cfg.feature_dim)
    throw InputError("forward: feature dimension mismatch");
  const double shift_d = f0.frame_shift * cfg.sample_rate;
  if (std::abs(shift_d - cfg.frame_shift) > 1e-6)
    throw InputError("forward: F0 frame shift does not match the model");
  if (std::abs(features.frame_shift - f0.frame_shift) > 1e-9)
    throw InputError("forward: feature frame shift does not match F0");

  const int t_len = n_frames * cfg.frame_shift;
  graph.f0_upsampled = repeat_f0(f0.values, cfg.frame_shift);
  graph.draw = draw;

  ad::Tape<T>& tape = graph.tape;
  std::unordered_map<std::string, ad::Id> ids;
  visit_params<T>(model, [&](const std::string& name, Mat<T>& m) {
    const ad::Id id = tape.param(m);
    graph.param_ids.emplace_back(name, id);
    ids.emplace(name, id);
  });

  // Source signal.
  ad::Id source = -1;
  switch (cfg.source_type) {
    case SourceType::Sine: {
      if (draw.harmonics.rows != cfg.source.harmonics || draw.harmonics.cols != t_len)
        throw InputError("forward: source draw does not match this input");
      source = tape.mix_tanh(tape.value(draw.harmonics.template cast<T>()),
                             ids.at("mix.w"), ids.at("mix.b"));
      break;
    }
    case SourceType::Pulse:
      if (int(draw.pulse_source.size()) != t_len)
        throw InputError("forward: source draw does not match this input");
      source = tape.value(row_mat<T>(draw.pulse_source));
      break;
    case SourceType::RandomNoise:
      if (int(draw.noise_source.size()) != t_len)
        throw InputError("forward: source draw does not match this input");
      source = tape.value(row_mat<T>(draw.noise_source));
      break;
    case SourceType::CyclicNoise: {
      if (int(draw.pulses.size()) != t_len)
        throw InputError("forward: source draw does not match this input");
      ad::Id excitation;
      if (cfg.beta_mode == BetaMode::Trainable) {
        graph.beta_id = ids.at("beta");
        excitation = tape.cyclic_noise(graph.f0_upsampled, draw.pulses, draw.kernel_noise,
                                       cfg.source.sample_rate, graph.beta_id);
      } else {
        excitation = tape.value(row_mat<T>(draw.excitation));
      }
      source = tape.mix_tanh(excitation, ids.at("mix.w"), ids.at("mix.b"));
      break;
    }
  }
  graph.source = source;

  // Condition pathway: frame-level convs, then upsample and smooth. F0 joins
  // the spectral features as one extra (scaled) row and is itself never
  // smoothed on its way to the source.
  Mat<T> cond_in(cfg.feature_dim + 1, n_frames);
  for (int n = 0; n < n_frames; ++n) {
    for (int d = 0; d < cfg.feature_dim; ++d) cond_in.at(d, n) = T(features.frames.at(n, d));
    cond_in.at(cfg.feature_dim, n) = T(f0.values[std::size_t(n)] / 100.0);
  }
  ad::Id c = tape.value(std::move(cond_in));
  c = tape.tanh_op(tape.conv1d(c, ids.at("cond1.w"), ids.at("cond1.b"), 3, 1));
  c = tape.tanh_op(tape.conv1d(c, ids.at("cond2.w"), ids.at("cond2.b"), 3, 1));
  c = tape.repeat_cols(c, cfg.frame_shift);
  for (int pass = 0; pass < cfg.smooth_passes; ++pass)
    c = tape.moving_avg(c, cfg.smooth_window);

  // Harmonic branch with per-block taps, then the noise branch.
  ad::Id x = source;
  for (int b = 0; b < kHarmonicBlocks; ++b) {
    x = build_block_graph(tape, x, c, "h" + std::to_string(b + 1), cfg, ids);
    graph.taps[std::size_t(b)] = x;
  }
  if (int(draw.noise_branch.size()) != t_len)
    throw InputError("forward: source draw does not match this input");
  ad::Id a = tape.value(row_mat<T>(draw.noise_branch));
  graph.noise_out = build_block_graph(tape, a, c, "noise", cfg, ids);

  // Harmonic/noise split and sum.
  const SincFilterSpec spec = SincFilterSpec::constant(
      cfg.cutoff_normalized(), n_frames, cfg.sinc_order, cfg.frame_shift);
  const auto lp = cast_taps<T>(detail::design_track(spec, false));
  const auto hp = cast_taps<T>(detail::design_track(spec, true));
  graph.output = tape.add(tape.tv_fir(x, lp, cfg.frame_shift),
                          tape.tv_fir(graph.noise_out, hp, cfg.frame_shift));
}

template <typename T>
void build_loss(ForwardGraph<T>& graph, const ToyNsfModel<T>& model,
                const Waveform& target) {
  if (graph.output < 0) throw InputError("loss: forward graph not built");
  const ToyNsfConfig& cfg = model.cfg;
  if (int(target.samples.size()) != graph.tape.val(graph.output).cols)
    throw InputError("loss: target length does not match the model output");

  const LossConfig lc = cfg.effective_loss();
  lc.validate();
  const int n_cfg = int(lc.stft_configs.size());
  ad::Tape<T>& tape = graph.tape;

  std::vector<Mat<T>> refs;
  refs.reserve(std::size_t(n_cfg));
  for (const StftConfig& sc : lc.stft_configs)
    refs.push_back(stft_power(target, sc).template cast<T>());

  std::vector<ad::Id> terms;
  {
    std::vector<ad::Id> per_cfg;
    for (int ci = 0; ci < n_cfg; ++ci)
      per_cfg.push_back(tape.log_spec_distance(graph.output, refs[std::size_t(ci)],
                                               Mat<T>(), lc.stft_configs[std::size_t(ci)],
                                               T(lc.eta)));
    terms.push_back(tape.scale(tape.sum(per_cfg), T(1.0 / n_cfg)));
  }

  if (lc.mask_loss_enabled()) {
    if (graph.draw.mask.empty())
      throw InputError("loss: masked loss enabled but no mask was drawn");
    Waveform mask;
    mask.sample_rate = cfg.sample_rate;
    mask.samples = graph.draw.mask;
    std::vector<Mat<T>> mask_powers;
    mask_powers.reserve(std::size_t(n_cfg));
    for (const StftConfig& sc : lc.stft_configs)
      mask_powers.push_back(stft_power(mask, sc).template cast<T>());

    std::vector<ad::Id> block_terms;
    for (int tap : lc.block_taps) {
      if (tap >= kHarmonicBlocks)
        throw InputError("loss: block tap index out of range");
      std::vector<ad::Id> per_cfg;
      for (int ci = 0; ci < n_cfg; ++ci)
        per_cfg.push_back(tape.log_spec_distance(
            graph.taps[std::size_t(tap)], refs[std::size_t(ci)],
            mask_powers[std::size_t(ci)], lc.stft_configs[std::size_t(ci)], T(lc.eta)));
      block_terms.push_back(tape.scale(tape.sum(per_cfg), T(1.0 / n_cfg)));
    }
    ad::Id masked = tape.sum(block_terms);
    if (lc.average_masked_blocks)
      masked = tape.scale(masked, T(1.0 / double(block_terms.size())));
    terms.push_back(masked);
  }

  if (cfg.beta_mode == BetaMode::Trainable) {
    terms.push_back(tape.l1_pull(graph.beta_id, T(lc.beta_penalty_target),
                                 T(lc.beta_penalty_weight)));
  }
  graph.loss = tape.sum(terms);
}

template <typename T>
void backward(ForwardGraph<T>& graph) {
  if (graph.loss < 0)
    throw InputError("backward: loss graph not built (detached graph)");
  graph.tape.backward(graph.loss);
}

template <typename T>
ForwardResult forward(ToyNsfModel<T>& model, const F0Track& f0,
                      const FrameSequence& features, Rng& rng) {
  const int factor = model.cfg.frame_shift;
  const std::vector<double> f0_up = repeat_f0(f0.values, factor);
  const SourceDraw draw = draw_source(model.cfg, f0_up, rng);

  ForwardGraph<T> graph;
  build_forward(graph, model, f0, features, draw);

  auto to_wave = [&](ad::Id id) {
    const Mat<T>& m = graph.tape.val(id);
    Waveform w;
    w.sample_rate = model.cfg.sample_rate;
    w.samples.resize(m.size());
    for (std::size_t i = 0; i < m.size(); ++i) w.samples[i] = double(m.v[i]);
    return w;
  };

  ForwardResult out;
  out.output = to_wave(graph.output);
  out.source = to_wave(graph.source);
  for (int b = 0; b < kHarmonicBlocks; ++b)
    out.block_outputs.push_back(to_wave(graph.taps[std::size_t(b)]));
  return out;
}

// ----------------------------------------------------------------------------
// Training
// ----------------------------------------------------------------------------

int best_epoch(const std::vector<double>& val_losses) {
  if (val_losses.empty()) throw InputError("best_epoch: empty log");
  int best = 0;
  for (int i = 1; i < int(val_losses.size()); ++i)
    if (val_losses[std::size_t(i)] < val_losses[std::size_t(best)]) best = i;
  return best;
}

static std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b = 0) {
  // splitmix64 over the mixed words
  std::uint64_t z = base + 0x9e3779b97f4a7c15ULL * (a + 1) + 0xbf58476d1ce4e5b9ULL * (b + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

static Utterance crop_utterance(const Utterance& u, int start_frame, int n_frames,
                                int factor) {
  Utterance out;
  out.f0.frame_shift = u.f0.frame_shift;
  out.f0.values.assign(u.f0.values.begin() + start_frame,
                       u.f0.values.begin() + start_frame + n_frames);
  out.features.frame_shift = u.features.frame_shift;
  out.features.start_time = u.features.start_time + start_frame * u.features.frame_shift;
  out.features.frames = Mat<double>(n_frames, u.features.dim());
  for (int n = 0; n < n_frames; ++n)
    for (int d = 0; d < u.features.dim(); ++d)
      out.features.frames.at(n, d) = u.features.frames.at(start_frame + n, d);
  out.wave.sample_rate = u.wave.sample_rate;
  out.wave.samples.assign(u.wave.samples.begin() + std::size_t(start_frame) * factor,
                          u.wave.samples.begin() +
                              std::size_t(start_frame + n_frames) * factor);
  return out;
}

static double eval_utterance_loss(ToyNsfModel<float>& model, const Utterance& u,
                                  std::uint64_t noise_seed) {
  Rng rng(noise_seed);
  const std::vector<double> f0_up = repeat_f0(u.f0.values, model.cfg.frame_shift);
  const SourceDraw draw = draw_source(model.cfg, f0_up, rng);
  ForwardGraph<float> graph;
  build_forward(graph, model, u.f0, u.features, draw);
  build_loss(graph, model, u.wave);
  return double(graph.tape.scalar(graph.loss));
}

TrainResult train(const std::vector<Utterance>& train_set,
                  const std::vector<Utterance>& val_set, ToyNsfConfig arch,
                  const TrainConfig& cfg) {
  cfg.validate();
  if (train_set.empty()) throw InputError("train: empty training set");
  if (val_set.empty()) throw InputError("train: validation split is empty");

  arch.source_type = cfg.source_type;
  arch.beta_mode = cfg.beta_mode;
  arch.beta = cfg.beta;
  arch.mask_loss = cfg.mask_loss;
  arch.validate();

  Rng rng_init(derive_seed(cfg.seed, 0x1217));
  ToyNsfModel<float> model = ToyNsfModel<float>::create(arch, rng_init);

  auto param_list = model.params();
  std::vector<Mat<float>> adam_m, adam_v;
  for (auto& [name, mat] : param_list) {
    adam_m.emplace_back(mat->rows, mat->cols, 0.0f);
    adam_v.emplace_back(mat->rows, mat->cols, 0.0f);
  }

  const int crop_frames =
      std::max(1, std::min(cfg.batch_length / arch.frame_shift,
                           int(train_set[0].f0.values.size())));
  Rng rng_crop(derive_seed(cfg.seed, 0xC209));

  TrainResult result;
  result.best_epoch = 0;
  double best_val = std::numeric_limits<double>::infinity();
  std::vector<Mat<float>> best_params;
  for (auto& [name, mat] : param_list) best_params.push_back(*mat);

  int step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    double train_sum = 0.0;
    for (std::size_t ui = 0; ui < train_set.size(); ++ui) {
      const Utterance& full = train_set[ui];
      const int n_frames = full.f0.num_frames();
      const int use_frames = std::min(crop_frames, n_frames);
      const int max_start = n_frames - use_frames;
      const int start = max_start > 0 ? int(rng_crop.uniform() * (max_start + 1)) : 0;
      const Utterance batch =
          crop_utterance(full, std::min(start, max_start), use_frames, arch.frame_shift);

      Rng rng_step(derive_seed(cfg.seed, 0x57e9, std::uint64_t(step)));
      const std::vector<double> f0_up = repeat_f0(batch.f0.values, arch.frame_shift);
      const SourceDraw draw = draw_source(arch, f0_up, rng_step);

      ForwardGraph<float> graph;
      build_forward(graph, model, batch.f0, batch.features, draw);
      build_loss(graph, model, batch.wave);
      const double loss = double(graph.tape.scalar(graph.loss));
      if (!std::isfinite(loss))
        throw NumericError("training diverged at step " + std::to_string(step) +
                           ": loss is not finite");
      train_sum += loss;
      backward(graph);

      // ADAM with bias correction.
      ++step;
      const float b1 = float(cfg.adam_beta1), b2 = float(cfg.adam_beta2);
      const float corr1 = 1.0f - std::pow(b1, float(step));
      const float corr2 = 1.0f - std::pow(b2, float(step));
      for (std::size_t p = 0; p < param_list.size(); ++p) {
        Mat<float>& theta = *param_list[p].second;
        const Mat<float>& g = graph.tape.grad(graph.param_ids[p].second);
        Mat<float>& m = adam_m[p];
        Mat<float>& v = adam_v[p];
        for (std::size_t i = 0; i < theta.size(); ++i) {
          m.v[i] = b1 * m.v[i] + (1.0f - b1) * g.v[i];
          v.v[i] = b2 * v.v[i] + (1.0f - b2) * g.v[i] * g.v[i];
          const float mhat = m.v[i] / corr1;
          const float vhat = v.v[i] / corr2;
          theta.v[i] -= float(cfg.lr) * mhat / (std::sqrt(vhat) + float(cfg.adam_eps));
        }
      }
    }

    double val_sum = 0.0;
    for (std::size_t vi = 0; vi < val_set.size(); ++vi)
      val_sum += eval_utterance_loss(model, val_set[vi], derive_seed(cfg.seed, 0xa117, vi));
    EpochStats st;
    st.train_loss = train_sum / double(train_set.size());
    st.val_loss = val_sum / double(val_set.size());
    if (!std::isfinite(st.val_loss))
      throw NumericError("training diverged: validation loss is not finite");
    result.log.push_back(st);

    if (st.val_loss < best_val) {
      best_val = st.val_loss;
      result.best_epoch = epoch;
      for (std::size_t p = 0; p < param_list.size(); ++p)
        best_params[p] = *param_list[p].second;
    }
  }

  for (std::size_t p = 0; p < param_list.size(); ++p) *param_list[p].second = best_params[p];
  result.model = std::move(model);
  result.steps = step;
  return result;
}

// ----------------------------------------------------------------------------
// Synthetic dataset
// ----------------------------------------------------------------------------

FrameSequence compute_features(const Waveform& wave, int num_frames) {
  constexpr int kBands = 16;
  constexpr int kFft = 512;
  constexpr int kFrameLen = 320;
  const int shift = 80;
  const double sr = wave.sample_rate;
  const int n_bins = kFft / 2 + 1;

  // Triangular bands on a mel-spaced grid up to Nyquist.
  auto mel = [](double f) { return 2595.0 * std::log10(1.0 + f / 700.0); };
  auto mel_inv = [](double m) { return 700.0 * (std::pow(10.0, m / 2595.0) - 1.0); };
  std::vector<double> edges(kBands + 2);
  for (int i = 0; i < kBands + 2; ++i)
    edges[std::size_t(i)] =
        mel_inv(mel(0.0) + (mel(sr / 2.0) - mel(0.0)) * i / double(kBands + 1));

  FrameSequence out;
  out.frame_shift = shift / sr;
  out.frames = Mat<double>(num_frames, kBands);

  std::vector<std::complex<double>> buf(kFft);
  for (int n = 0; n < num_frames; ++n) {
    const int center = n * shift + shift / 2;
    const int start = center - kFrameLen / 2;
    std::fill(buf.begin(), buf.end(), std::complex<double>(0.0, 0.0));
    for (int i = 0; i < kFrameLen; ++i) {
      const int idx = start + i;
      if (idx < 0 || idx >= wave.length()) continue;
      buf[std::size_t(i)] =
          wave.samples[std::size_t(idx)] * detail::window_value(WindowType::Hann, i, kFrameLen);
    }
    detail::fft_pow2(buf, false);
    for (int b = 0; b < kBands; ++b) {
      const double lo = edges[std::size_t(b)], mid = edges[std::size_t(b + 1)],
                   hi = edges[std::size_t(b + 2)];
      double e = 0.0;
      for (int k = 0; k < n_bins; ++k) {
        const double f = k * sr / kFft;
        double w = 0.0;
        if (f > lo && f < mid)
          w = (f - lo) / (mid - lo);
        else if (f >= mid && f < hi)
          w = (hi - f) / (hi - mid);
        e += w * std::norm(buf[std::size_t(k)]);
      }
      out.frames.at(n, b) = std::log(e + 1e-8);
    }
  }
  return out;
}

std::vector<Utterance> make_synthetic_dataset(int n_utts, double duration, Rng& rng) {
  if (n_utts < 1) throw InputError("make_synthetic_dataset: n_utts must be >= 1");
  if (duration <= 0) throw InputError("make_synthetic_dataset: duration must be positive");

  constexpr double sr = 16000.0;
  constexpr int shift = 80;
  constexpr int kHarm = 6;
  const int n_frames = std::max(30, int(std::lround(duration * sr / shift)));
  const int t_len = n_frames * shift;
  const int edge_frames = 12;  // 60 ms unvoiced head and tail

  std::vector<Utterance> out;
  out.reserve(std::size_t(n_utts));
  for (int u = 0; u < n_utts; ++u) {
    const double base = rng.uniform(90.0, 260.0);
    const double vib_rate = rng.uniform(1.5, 2.5);
    const double vib_depth = rng.uniform(0.02, 0.05);
    const double vib_phase = rng.uniform(0.0, kTwoPi);

    Utterance utt;
    utt.f0.frame_shift = shift / sr;
    utt.f0.values.resize(std::size_t(n_frames));
    for (int n = 0; n < n_frames; ++n) {
      if (n < edge_frames || n >= n_frames - edge_frames) {
        utt.f0.values[std::size_t(n)] = 0.0;
        continue;
      }
      const double t = n * shift / sr;
      double f = base * (1.0 + vib_depth * std::sin(kTwoPi * vib_rate * t + vib_phase));
      utt.f0.values[std::size_t(n)] = std::clamp(f, 80.0, 300.0);
    }

    const std::vector<double> f0_up = repeat_f0(utt.f0.values, shift);
    const std::vector<double> phase = cumulative_phase(f0_up, sr);
    std::vector<double> harm_phase(kHarm);
    for (double& p : harm_phase) p = rng.uniform(0.0, kTwoPi);

    utt.wave.sample_rate = sr;
    utt.wave.samples.resize(std::size_t(t_len));
    const int fade = 80;  // samples
    const int voiced_start = edge_frames * shift;
    const int voiced_end = (n_frames - edge_frames) * shift;
    for (int t = 0; t < t_len; ++t) {
      double s = 0.0;
      if (f0_up[std::size_t(t)] > 0) {
        for (int h = 1; h <= kHarm; ++h)
          s += (0.3 / h) * std::sin(h * phase[std::size_t(t)] + harm_phase[std::size_t(h - 1)]);
        double env = 1.0;
        if (t - voiced_start < fade) env = double(t - voiced_start + 1) / fade;
        if (voiced_end - 1 - t < fade) env = std::min(env, double(voiced_end - t) / fade);
        s *= env;
        s += 0.007 * rng.gaussian();
      } else {
        s = 0.02 * rng.gaussian();
      }
      utt.wave.samples[std::size_t(t)] = s;
    }
    utt.wave = normalize_level(utt.wave, -26.0);
    utt.features = compute_features(utt.wave, n_frames);
    out.push_back(std::move(utt));
  }
  return out;
}

// ----------------------------------------------------------------------------
// Pitch tracking
// ----------------------------------------------------------------------------

F0Track estimate_f0(const Waveform& waveform, double frame_shift, double fmin,
                    double fmax) {
  waveform.validate();
  if (!(fmin > 0) || !(fmin < fmax) || !(fmax < waveform.sample_rate / 2))
    throw ConfigError("estimate_f0: need 0 < fmin < fmax < sample_rate/2");
  const double sr = waveform.sample_rate;
  const int shift = std::max(1, int(std::lround(frame_shift * sr)));
  const int min_lag = std::max(1, int(std::floor(sr / fmax)));
  const int max_lag = int(std::ceil(sr / fmin));
  const int win = max_lag;  // correlation window length
  const int span = win + max_lag;
  const int t_len = waveform.length();
  const int n_frames = t_len / shift;

  F0Track track;
  track.frame_shift = shift / sr;
  track.values.assign(std::size_t(std::max(0, n_frames)), 0.0);
  if (t_len < span) return track;  // too short: everything unvoiced

  const double* x = waveform.samples.data();
  std::vector<double> ncc(std::size_t(max_lag + 2), 0.0);
  for (int n = 0; n < n_frames; ++n) {
    const int center = n * shift + shift / 2;
    int s0 = center - span / 2;
    s0 = std::clamp(s0, 0, t_len - span);

    double e0 = 0.0;
    for (int i = 0; i < win; ++i) e0 += x[s0 + i] * x[s0 + i];
    if (e0 <= 1e-12) continue;  // silence

    // Octave disambiguation: a periodic signal correlates almost as well at
    // multiples of its period, so score each lag with a small per-octave cost
    // that breaks those near-ties toward the shorter lag without overriding a
    // genuinely stronger long-lag peak.
    constexpr double kOctaveCost = 0.03;
    int best_lag = 0;
    double best_score = -2.0;
    for (int lag = min_lag; lag <= max_lag; ++lag) {
      double num = 0.0, e1 = 0.0;
      const double* a = x + s0;
      const double* b = x + s0 + lag;
      for (int i = 0; i < win; ++i) {
        num += a[i] * b[i];
        e1 += b[i] * b[i];
      }
      const double den = std::sqrt(e0 * e1);
      const double v = den > 1e-12 ? num / den : 0.0;
      ncc[std::size_t(lag)] = v;
      const double score = v - kOctaveCost * std::log2(double(lag) / double(min_lag));
      if (score > best_score) {
        best_score = score;
        best_lag = lag;
      }
    }
    if (best_lag == 0 || ncc[std::size_t(best_lag)] < 0.3) continue;  // voicing decision

    double lag = double(best_lag);
    if (best_lag > min_lag && best_lag < max_lag) {
      const double ym = ncc[std::size_t(best_lag - 1)];
      const double y0 = ncc[std::size_t(best_lag)];
      const double yp = ncc[std::size_t(best_lag + 1)];
      const double denom = ym - 2.0 * y0 + yp;
      if (std::abs(denom) > 1e-12) {
        const double delta = 0.5 * (ym - yp) / denom;
        if (std::abs(delta) <= 1.0) lag += delta;
      }
    }
    track.values[std::size_t(n)] = sr / lag;
  }
  return track;
}

double f0_agreement(const F0Track& reference, const F0Track& estimate, double tol) {
  const int n = std::min(reference.num_frames(), estimate.num_frames());
  int voiced = 0, hits = 0;
  for (int i = 0; i < n; ++i) {
    const double ref = reference.values[std::size_t(i)];
    if (ref <= 0) continue;
    ++voiced;
    const double est = estimate.values[std::size_t(i)];
    if (est > 0 && std::abs(est - ref) / ref <= tol) ++hits;
  }
  if (voiced == 0) return 1.0;
  return double(hits) / double(voiced);
}

// ----------------------------------------------------------------------------
// Checkpoints
// ----------------------------------------------------------------------------

static std::string stft_configs_to_string(const std::vector<StftConfig>& cfgs) {
  std::string s;
  for (std::size_t i = 0; i < cfgs.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(cfgs[i].fft_size) + ":" + std::to_string(cfgs[i].frame_length) +
         ":" + std::to_string(cfgs[i].frame_shift) + ":" + window_to_string(cfgs[i].window);
  }
  return s;
}

static std::vector<StftConfig> stft_configs_from_string(const std::string& s,
                                                        std::size_t line_no) {
  std::vector<StftConfig> out;
  std::istringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    StftConfig c;
    if (std::sscanf(item.c_str(), "%d:%d:%d", &c.fft_size, &c.frame_length,
                    &c.frame_shift) != 3)
      throw ParseError("bad stft config: " + item, line_no);
    const auto pos = item.rfind(':');
    c.window = window_from_string(item.substr(pos + 1));
    out.push_back(c);
  }
  if (out.empty()) throw ParseError("empty stft config list", line_no);
  return out;
}

void save_checkpoint(const std::string& path, const ToyNsfModel<float>& model,
                     std::uint64_t seed) {
  const ToyNsfConfig& cfg = model.cfg;
  std::string d = "cnsf-checkpoint v1\n";
  char buf[128];
  auto kv = [&](const char* k, const std::string& v) { d += std::string(k) + "=" + v + "\n"; };
  auto kvd = [&](const char* k, double v) {
    std::snprintf(buf, sizeof buf, "%.17g", v);
    kv(k, buf);
  };
  kv("seed", std::to_string(seed));
  kv("source_type", source_type_to_string(cfg.source_type));
  kv("beta_mode", cfg.beta_mode == BetaMode::Trainable ? "trainable" : "fixed");
  kvd("beta", cfg.beta);
  kv("mask_loss", cfg.mask_loss ? "1" : "0");
  kv("channels", std::to_string(cfg.channels));
  kv("cond_channels", std::to_string(cfg.cond_channels));
  kv("feature_dim", std::to_string(cfg.feature_dim));
  kv("kernel", std::to_string(cfg.kernel));
  kvd("sample_rate", cfg.sample_rate);
  kv("frame_shift", std::to_string(cfg.frame_shift));
  kvd("cutoff_hz", cfg.cutoff_hz);
  kv("sinc_order", std::to_string(cfg.sinc_order));
  kv("harmonics", std::to_string(cfg.source.harmonics));
  kvd("sigma", cfg.source.sigma);
  kvd("alpha", cfg.source.alpha);
  kvd("eta", cfg.loss.eta);
  kv("mask_harmonics", std::to_string(cfg.loss.mask_harmonics));
  kv("stft_configs", stft_configs_to_string(cfg.loss.stft_configs));
  kv("smooth_window", std::to_string(cfg.smooth_window));
  kv("smooth_passes", std::to_string(cfg.smooth_passes));

  const auto params = model.params();
  kv("params", std::to_string(params.size()));
  for (const auto& [name, mat] : params) {
    d += "param " + name + " " + std::to_string(mat->rows) + " " +
         std::to_string(mat->cols) + "\n";
    for (int r = 0; r < mat->rows; ++r) {
      for (int c = 0; c < mat->cols; ++c) {
        std::snprintf(buf, sizeof buf, c + 1 == mat->cols ? "%.9g\n" : "%.9g ",
                      double(mat->at(r, c)));
        d += buf;
      }
    }
  }
  d += "end\n";
  detail::write_file_atomic(path, d);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open: " + path);
  std::string line;
  std::size_t line_no = 0;
  if (!std::getline(in, line) || line != "cnsf-checkpoint v1")
    throw ParseError("not a cnsf-checkpoint v1 file", 1);
  ++line_no;

  std::unordered_map<std::string, std::string> kv;
  std::string pending;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.rfind("param ", 0) == 0) {
      pending = line;
      break;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ParseError("expected key=value", line_no);
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }

  auto need = [&](const char* k) {
    const auto it = kv.find(k);
    if (it == kv.end()) throw ParseError(std::string("missing key: ") + k, line_no);
    return it->second;
  };

  ToyNsfConfig cfg;
  Checkpoint ckpt;
  try {
    cfg.source_type = source_type_from_string(need("source_type"));
    cfg.beta_mode = need("beta_mode") == "trainable" ? BetaMode::Trainable : BetaMode::Fixed;
    cfg.beta = std::stod(need("beta"));
    cfg.mask_loss = need("mask_loss") == "1";
    cfg.channels = std::stoi(need("channels"));
    cfg.cond_channels = std::stoi(need("cond_channels"));
    cfg.feature_dim = std::stoi(need("feature_dim"));
    cfg.kernel = std::stoi(need("kernel"));
    cfg.sample_rate = std::stod(need("sample_rate"));
    cfg.frame_shift = std::stoi(need("frame_shift"));
    cfg.cutoff_hz = std::stod(need("cutoff_hz"));
    cfg.sinc_order = std::stoi(need("sinc_order"));
    cfg.source.harmonics = std::stoi(need("harmonics"));
    cfg.source.sigma = std::stod(need("sigma"));
    cfg.source.alpha = std::stod(need("alpha"));
    cfg.source.sample_rate = cfg.sample_rate;
    cfg.loss.eta = std::stod(need("eta"));
    cfg.loss.mask_harmonics = std::stoi(need("mask_harmonics"));
    cfg.loss.stft_configs = stft_configs_from_string(need("stft_configs"), line_no);
    cfg.smooth_window = std::stoi(need("smooth_window"));
    cfg.smooth_passes = std::stoi(need("smooth_passes"));
    ckpt.seed = std::stoull(need("seed"));
  } catch (const ParseError&) {
    throw;
  } catch (const std::exception& e) {
    throw ParseError(std::string("bad checkpoint header value: ") + e.what(), line_no);
  }
  Rng dummy(0);
  ckpt.model = ToyNsfModel<float>::create(cfg, dummy);

  const std::size_t expected = std::stoul(need("params"));
  auto params = ckpt.model.params();
  std::unordered_map<std::string, Mat<float>*> by_name;
  for (auto& [name, mat] : params) by_name[name] = mat;

  std::size_t loaded = 0;
  bool saw_end = false;
  while (true) {
    if (pending.empty()) {
      if (!std::getline(in, line)) break;
      ++line_no;
    } else {
      line = pending;
      pending.clear();
    }
    if (line == "end") {
      saw_end = true;
      break;
    }
    char name[128];
    int rows = 0, cols = 0;
    if (std::sscanf(line.c_str(), "param %127s %d %d", name, &rows, &cols) != 3)
      throw ParseError("expected 'param <name> <rows> <cols>'", line_no);
    const auto it = by_name.find(name);
    if (it == by_name.end()) throw ParseError(std::string("unknown parameter: ") + name, line_no);
    Mat<float>* mat = it->second;
    if (mat->rows != rows || mat->cols != cols)
      throw ParseError(std::string("shape mismatch for parameter: ") + name, line_no);
    for (int r = 0; r < rows; ++r) {
      if (!std::getline(in, line)) throw ParseError("truncated parameter data", line_no);
      ++line_no;
      std::istringstream row(line);
      for (int c = 0; c < cols; ++c) {
        double v;
        if (!(row >> v)) throw ParseError("truncated parameter row", line_no);
        mat->at(r, c) = float(v);
      }
    }
    ++loaded;
  }
  if (!saw_end) throw ParseError("truncated checkpoint (missing 'end')", line_no);
  if (loaded != expected || loaded != params.size())
    throw ParseError("parameter count mismatch", line_no);
  return ckpt;
}

// ----------------------------------------------------------------------------
// Explicit instantiations
// ----------------------------------------------------------------------------

template struct ConvParams<float>;
template struct ConvParams<double>;
template struct ToyNsfModel<float>;
template struct ToyNsfModel<double>;
template void build_forward<float>(ForwardGraph<float>&, ToyNsfModel<float>&,
                                   const F0Track&, const FrameSequence&, const SourceDraw&);
template void build_forward<double>(ForwardGraph<double>&, ToyNsfModel<double>&,
                                    const F0Track&, const FrameSequence&,
                                    const SourceDraw&);
template void build_loss<float>(ForwardGraph<float>&, const ToyNsfModel<float>&,
                                const Waveform&);
template void build_loss<double>(ForwardGraph<double>&, const ToyNsfModel<double>&,
                                 const Waveform&);
template void backward<float>(ForwardGraph<float>&);
template void backward<double>(ForwardGraph<double>&);
template ForwardResult forward<float>(ToyNsfModel<float>&, const F0Track&,
                                      const FrameSequence&, Rng&);
template ForwardResult forward<double>(ToyNsfModel<double>&, const F0Track&,
                                       const FrameSequence&, Rng&);

}  // namespace cnsf
