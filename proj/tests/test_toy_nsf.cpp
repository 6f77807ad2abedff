#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <vector>

#include "cnsf/toy_nsf.hpp"
#include "oracles.hpp"

using namespace cnsf;

namespace {

/// Narrow architecture for fast tests.
ToyNsfConfig tiny_arch(SourceType st = SourceType::CyclicNoise, bool mask = true) {
  ToyNsfConfig cfg;
  cfg.channels = 3;
  cfg.cond_channels = 2;
  cfg.feature_dim = 4;
  cfg.source_type = st;
  cfg.mask_loss = mask;
  cfg.loss.stft_configs = {StftConfig{256, 160, 80, WindowType::Hann},
                           StftConfig{64, 40, 20, WindowType::Hann}};
  return cfg;
}

/// Small aligned (f0, features, waveform) fixture; n_frames * 80 samples.
Utterance tiny_utterance(int n_frames, std::uint64_t seed) {
  Rng rng(seed);
  Utterance u;
  u.f0.frame_shift = 0.005;
  u.f0.values.resize(std::size_t(n_frames));
  for (int n = 0; n < n_frames; ++n)
    u.f0.values[std::size_t(n)] = (n > 1 && n < n_frames - 2) ? 150.0 : 0.0;
  u.features.frame_shift = 0.005;
  u.features.frames = Mat<double>(n_frames, 4);
  for (double& v : u.features.frames.v) v = rng.uniform(-1.0, 1.0);
  u.wave.sample_rate = 16000.0;
  u.wave.samples.resize(std::size_t(n_frames) * 80);
  for (std::size_t t = 0; t < u.wave.samples.size(); ++t)
    u.wave.samples[t] = 0.05 * std::sin(2.0 * kPi * 150.0 * double(t) / 16000.0) +
                        0.002 * rng.gaussian();
  return u;
}

template <typename T>
void randomize_params(ToyNsfModel<T>& model, Rng& rng, double scale = 0.2) {
  for (auto& [name, mat] : model.params())
    for (T& v : mat->v) v = T(rng.uniform(-scale, scale));
}

}  // namespace

TEST_CASE("forward: same seed gives bit-identical outputs") {
  Rng init(1);
  ToyNsfModel<double> model = ToyNsfModel<double>::create(tiny_arch(), init);
  const Utterance u = tiny_utterance(10, 2);

  Rng r1(99), r2(99);
  const ForwardResult a = forward(model, u.f0, u.features, r1);
  const ForwardResult b = forward(model, u.f0, u.features, r2);
  CHECK(a.output.samples == b.output.samples);
  CHECK(a.source.samples == b.source.samples);
  for (int i = 0; i < kHarmonicBlocks; ++i)
    CHECK(a.block_outputs[std::size_t(i)].samples == b.block_outputs[std::size_t(i)].samples);
}

TEST_CASE("forward: zero-initialized final convs make every block an identity") {
  Rng init(3);
  ToyNsfModel<double> model = ToyNsfModel<double>::create(tiny_arch(), init);
  const Utterance u = tiny_utterance(12, 4);
  Rng rng(5);
  const ForwardResult out = forward(model, u.f0, u.features, rng);

  for (int b = 0; b < kHarmonicBlocks; ++b)
    CHECK(out.block_outputs[std::size_t(b)].samples == out.source.samples);
  for (double v : out.output.samples) {
    CHECK(std::isfinite(v));
    CHECK(std::abs(v) <= 1.5);
  }
}

TEST_CASE("forward: cyclic-noise source composes gen_cyclic_noise bit for bit") {
  ToyNsfConfig arch = tiny_arch(SourceType::CyclicNoise);
  Rng init(7);
  ToyNsfModel<double> model = ToyNsfModel<double>::create(arch, init);
  const Utterance u = tiny_utterance(14, 8);

  const std::uint64_t seed = 4242;
  Rng fwd_rng(seed);
  const ForwardResult out = forward(model, u.f0, u.features, fwd_rng);

  std::vector<double> f0_up;
  for (double v : u.f0.values)
    for (int i = 0; i < 80; ++i) f0_up.push_back(v);
  Rng src_rng(seed);
  const Waveform direct = gen_cyclic_noise(f0_up, CyclicNoiseConfig::scalar(arch.beta),
                                           arch.source, model.mix_layer(), src_rng);
  CHECK(out.source.samples == direct.samples);
}

TEST_CASE("forward: misaligned inputs are rejected") {
  Rng init(9);
  ToyNsfModel<double> model = ToyNsfModel<double>::create(tiny_arch(), init);
  Utterance u = tiny_utterance(10, 10);
  Rng rng(1);

  Utterance bad = u;
  bad.features.frames = Mat<double>(9, 4, 0.0);  // one frame short
  CHECK_THROWS_AS(forward(model, bad.f0, bad.features, rng), InputError);

  bad = u;
  bad.features.frames = Mat<double>(10, 3, 0.0);  // wrong dimension
  CHECK_THROWS_AS(forward(model, bad.f0, bad.features, rng), InputError);

  bad = u;
  bad.f0.frame_shift = 0.004;  // wrong grid
  CHECK_THROWS_AS(forward(model, bad.f0, bad.features, rng), InputError);
}

TEST_CASE("forward: perturbations outside the receptive field leave outputs alone") {
  ToyNsfConfig arch = tiny_arch(SourceType::RandomNoise, false);
  Rng init(11);
  ToyNsfModel<double> model = ToyNsfModel<double>::create(arch, init);
  Rng wiggle(12);
  randomize_params(model, wiggle);  // nonzero post convs so the stack is live

  const int n_frames = 40;  // 3200 samples
  const Utterance u = tiny_utterance(n_frames, 13);
  Rng rng(77);
  const std::vector<double> f0_up = [&] {
    std::vector<double> v;
    for (double f : u.f0.values)
      for (int i = 0; i < 80; ++i) v.push_back(f);
    return v;
  }();
  SourceDraw draw = draw_source(arch, f0_up, rng);

  ForwardGraph<double> base;
  build_forward(base, model, u.f0, u.features, draw);

  // One dilated-conv block spans 1 + 2*(1+2+...+512) = 2047 samples around an
  // output; the sinc filter widens that by its 15-sample half order.
  const int t0 = 600;
  const int half_field = 1023 + 15;

  SourceDraw far = draw;
  far.noise_branch[std::size_t(t0 + half_field + 1)] += 1.0;
  ForwardGraph<double> far_graph;
  build_forward(far_graph, model, u.f0, u.features, far);
  CHECK(far_graph.tape.val(far_graph.output).at(0, t0) ==
        base.tape.val(base.output).at(0, t0));

  SourceDraw near = draw;
  near.noise_branch[std::size_t(t0 + 500)] += 1.0;
  ForwardGraph<double> near_graph;
  build_forward(near_graph, model, u.f0, u.features, near);
  CHECK(near_graph.tape.val(near_graph.output).at(0, t0) !=
        base.tape.val(base.output).at(0, t0));
}

TEST_CASE("loss graph: forward value agrees with the plain loss module") {
  ToyNsfConfig arch = tiny_arch(SourceType::CyclicNoise, true);
  arch.beta_mode = BetaMode::Trainable;
  Rng init(15);
  ToyNsfModel<double> model = ToyNsfModel<double>::create(arch, init);
  Rng wiggle(16);
  randomize_params(model, wiggle);
  model.beta.v[0] = 0.93;

  const Utterance u = tiny_utterance(16, 17);
  Rng rng(18);
  const std::vector<double> f0_up = [&] {
    std::vector<double> v;
    for (double f : u.f0.values)
      for (int i = 0; i < 80; ++i) v.push_back(f);
    return v;
  }();
  const SourceDraw draw = draw_source(arch, f0_up, rng);

  ForwardGraph<double> graph;
  build_forward(graph, model, u.f0, u.features, draw);
  build_loss(graph, model, u.wave);
  const double tape_loss = graph.tape.scalar(graph.loss);

  ModelOutputs outputs;
  outputs.output.sample_rate = arch.sample_rate;
  outputs.output.samples = graph.tape.val(graph.output).v;
  for (int b = 0; b < kHarmonicBlocks; ++b) {
    Waveform w;
    w.sample_rate = arch.sample_rate;
    w.samples = graph.tape.val(graph.taps[std::size_t(b)]).v;
    outputs.block_outputs.push_back(std::move(w));
  }
  Waveform mask;
  mask.sample_rate = arch.sample_rate;
  mask.samples = draw.mask;
  const LossReport report =
      total_training_loss(outputs, u.wave, mask, arch.effective_loss(), 0.93);
  CHECK(tape_loss == doctest::Approx(report.total).epsilon(1e-12));
}

TEST_CASE("backward: detached graphs are rejected") {
  ForwardGraph<double> graph;
  CHECK_THROWS_AS(backward(graph), InputError);

  ToyNsfConfig arch = tiny_arch();
  Rng init(19);
  ToyNsfModel<double> model = ToyNsfModel<double>::create(arch, init);
  const Utterance u = tiny_utterance(10, 20);
  Rng rng(21);
  const std::vector<double> f0_up = [&] {
    std::vector<double> v;
    for (double f : u.f0.values)
      for (int i = 0; i < 80; ++i) v.push_back(f);
    return v;
  }();
  ForwardGraph<double> fwd_only;
  build_forward(fwd_only, model, u.f0, u.features, draw_source(arch, f0_up, rng));
  CHECK_THROWS_AS(backward(fwd_only), InputError);  // loss never attached
}

TEST_CASE("backward: zero loss yields all-zero gradients") {
  // Perfect resynthesis of its own forward output: every log ratio is exactly
  // one, so the full gradient field vanishes.
  ToyNsfConfig arch = tiny_arch(SourceType::CyclicNoise, true);
  Rng init(23);
  ToyNsfModel<double> model = ToyNsfModel<double>::create(arch, init);
  Rng wiggle(24);
  randomize_params(model, wiggle);

  const Utterance u = tiny_utterance(12, 25);
  Rng rng(26);
  const std::vector<double> f0_up = [&] {
    std::vector<double> v;
    for (double f : u.f0.values)
      for (int i = 0; i < 80; ++i) v.push_back(f);
    return v;
  }();
  const SourceDraw draw = draw_source(arch, f0_up, rng);

  ForwardGraph<double> probe;
  build_forward(probe, model, u.f0, u.features, draw);
  Waveform self_target;
  self_target.sample_rate = arch.sample_rate;
  self_target.samples = probe.tape.val(probe.output).v;

  ForwardGraph<double> graph;
  build_forward(graph, model, u.f0, u.features, draw);
  build_loss(graph, model, self_target);
  // Plain term is exactly zero; masked terms compare block taps against the
  // final output, so only the plain path is stationary here. Check it alone.
  ToyNsfConfig plain_arch = arch;
  plain_arch.mask_loss = false;
  ToyNsfModel<double> plain_model = model;
  plain_model.cfg = plain_arch;
  ForwardGraph<double> plain_graph;
  build_forward(plain_graph, plain_model, u.f0, u.features, draw);
  build_loss(plain_graph, plain_model, self_target);
  CHECK(plain_graph.tape.scalar(plain_graph.loss) == 0.0);
  backward(plain_graph);
  for (const auto& [name, id] : plain_graph.param_ids)
    for (double g : plain_graph.tape.grad(id).v) CHECK(g == 0.0);
}

TEST_CASE("train: zero learning rate leaves parameters at their initialization") {
  std::vector<Utterance> train_set = {tiny_utterance(10, 30), tiny_utterance(10, 31)};
  std::vector<Utterance> val_set = {tiny_utterance(10, 32)};

  TrainConfig tc;
  tc.lr = 0.0;
  tc.seed = 5;
  tc.batch_length = 800;
  tc.epochs = 1;
  const TrainResult one = train(train_set, val_set, tiny_arch(), tc);
  tc.epochs = 3;
  const TrainResult three = train(train_set, val_set, tiny_arch(), tc);

  const auto pa = one.model.params();
  const auto pb = three.model.params();
  REQUIRE(pa.size() == pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) CHECK(pa[i].second->v == pb[i].second->v);
}

TEST_CASE("train: deterministic under identical seed and config") {
  std::vector<Utterance> train_set = {tiny_utterance(10, 40), tiny_utterance(10, 41)};
  std::vector<Utterance> val_set = {tiny_utterance(10, 42)};

  TrainConfig tc;
  tc.seed = 9;
  tc.epochs = 2;
  tc.batch_length = 800;
  const TrainResult a = train(train_set, val_set, tiny_arch(), tc);
  const TrainResult b = train(train_set, val_set, tiny_arch(), tc);

  REQUIRE(a.log.size() == b.log.size());
  for (std::size_t e = 0; e < a.log.size(); ++e) {
    CHECK(a.log[e].train_loss == b.log[e].train_loss);
    CHECK(a.log[e].val_loss == b.log[e].val_loss);
  }
  const auto pa = a.model.params();
  const auto pb = b.model.params();
  for (std::size_t i = 0; i < pa.size(); ++i) CHECK(pa[i].second->v == pb[i].second->v);
}

TEST_CASE("train: empty splits are rejected") {
  TrainConfig tc;
  CHECK_THROWS_AS(train({}, {tiny_utterance(10, 1)}, tiny_arch(), tc), InputError);
  CHECK_THROWS_AS(train({tiny_utterance(10, 1)}, {}, tiny_arch(), tc), InputError);
}

TEST_CASE("best_epoch: argmin with first-of-ties") {
  CHECK(best_epoch({3.0, 1.0, 2.0, 1.0}) == 1);
  CHECK(best_epoch({0.5}) == 0);
  CHECK_THROWS_AS(best_epoch({}), InputError);
}

TEST_CASE("estimate_f0: pure sine is tracked within 1%") {
  Waveform w;
  w.sample_rate = 16000.0;
  w.samples.resize(16000);
  for (std::size_t t = 0; t < w.samples.size(); ++t)
    w.samples[t] = 0.4 * std::sin(2.0 * kPi * 100.0 * double(t) / 16000.0);

  const F0Track est = estimate_f0(w, 0.005, 70.0, 400.0);
  const int n = est.num_frames();
  for (int i = 5; i < n - 5; ++i) {
    CHECK(est.values[std::size_t(i)] > 99.0);
    CHECK(est.values[std::size_t(i)] < 101.0);
  }
}

TEST_CASE("estimate_f0: white noise is mostly unvoiced") {
  Rng rng(50);
  Waveform w;
  w.sample_rate = 16000.0;
  w.samples.resize(16000);
  for (double& v : w.samples) v = 0.1 * rng.gaussian();
  const F0Track est = estimate_f0(w, 0.005, 70.0, 400.0);
  int unvoiced = 0;
  for (double v : est.values) unvoiced += v == 0.0;
  CHECK(double(unvoiced) / double(est.num_frames()) >= 0.9);
}

TEST_CASE("estimate_f0: silence is entirely unvoiced") {
  Waveform w;
  w.sample_rate = 16000.0;
  w.samples.assign(8000, 0.0);
  const F0Track est = estimate_f0(w, 0.005, 70.0, 400.0);
  for (double v : est.values) CHECK(v == 0.0);
}

TEST_CASE("make_synthetic_dataset: ground truth F0 is recovered from the audio") {
  Rng rng(60);
  const auto utts = make_synthetic_dataset(4, 0.5, rng);
  REQUIRE(utts.size() == 4);

  int voiced = 0, hits = 0;
  for (const Utterance& u : utts) {
    const F0Track est = estimate_f0(u.wave, 0.005, 70.0, 400.0);
    for (int i = 0; i < u.f0.num_frames() && i < est.num_frames(); ++i) {
      const double ref = u.f0.values[std::size_t(i)];
      if (ref <= 0) continue;
      ++voiced;
      const double e = est.values[std::size_t(i)];
      if (e > 0 && std::abs(e - ref) / ref <= 0.02) ++hits;
    }
  }
  CHECK(double(hits) / double(voiced) >= 0.9);
}

TEST_CASE("make_synthetic_dataset: unvoiced edges and determinism") {
  Rng r1(61), r2(61);
  const auto a = make_synthetic_dataset(2, 0.5, r1);
  const auto b = make_synthetic_dataset(2, 0.5, r2);
  for (const Utterance& u : a) {
    CHECK(u.f0.values.front() == 0.0);
    CHECK(u.f0.values.back() == 0.0);
    CHECK(u.wave.samples.size() == std::size_t(u.f0.num_frames()) * 80);
    CHECK(u.features.num_frames() == u.f0.num_frames());
  }
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].wave.samples == b[i].wave.samples);
    CHECK(a[i].f0.values == b[i].f0.values);
  }
}

TEST_CASE("checkpoint: save/load round trip preserves the model") {
  ToyNsfConfig arch = tiny_arch(SourceType::CyclicNoise, true);
  arch.beta_mode = BetaMode::Trainable;
  Rng init(70);
  ToyNsfModel<float> model = ToyNsfModel<float>::create(arch, init);
  Rng wiggle(71);
  randomize_params(model, wiggle);

  const auto dir = std::filesystem::temp_directory_path() / "cnsf_ckpt_tests";
  std::filesystem::create_directories(dir);
  const std::string path = (dir / "model.ckpt").string();
  save_checkpoint(path, model, 1234);

  const Checkpoint back = load_checkpoint(path);
  CHECK(back.seed == 1234);
  CHECK(back.model.cfg.channels == arch.channels);
  CHECK(back.model.cfg.source_type == SourceType::CyclicNoise);
  CHECK(back.model.cfg.beta_mode == BetaMode::Trainable);

  const auto pa = model.params();
  auto pb = back.model.params();
  REQUIRE(pa.size() == pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) {
    CHECK(pa[i].first == pb[i].first);
    CHECK(pa[i].second->v == pb[i].second->v);
  }
}

TEST_CASE("checkpoint: truncation and bad magic are parse errors") {
  const auto dir = std::filesystem::temp_directory_path() / "cnsf_ckpt_tests";
  std::filesystem::create_directories(dir);

  ToyNsfConfig arch = tiny_arch();
  Rng init(72);
  ToyNsfModel<float> model = ToyNsfModel<float>::create(arch, init);
  const std::string path = (dir / "full.ckpt").string();
  save_checkpoint(path, model, 7);

  // Truncate at 60% of the file.
  std::ifstream in(path, std::ios::binary);
  std::string all((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  in.close();
  const std::string trunc_path = (dir / "trunc.ckpt").string();
  {
    std::ofstream out(trunc_path, std::ios::binary);
    out.write(all.data(), std::streamsize(all.size() * 6 / 10));
  }
  CHECK_THROWS_AS(load_checkpoint(trunc_path), ParseError);

  const std::string bad_path = (dir / "bad.ckpt").string();
  {
    std::ofstream out(bad_path);
    out << "not-a-checkpoint v9\n";
  }
  CHECK_THROWS_AS(load_checkpoint(bad_path), ParseError);

  // Corrupted header value.
  const std::string junk_path = (dir / "junk.ckpt").string();
  {
    std::string all2 = all;
    const auto pos = all2.find("channels=");
    all2.replace(pos, 10, "channels=x");
    std::ofstream out(junk_path, std::ios::binary);
    out.write(all2.data(), std::streamsize(all2.size()));
  }
  CHECK_THROWS_AS(load_checkpoint(junk_path), ParseError);
}

TEST_CASE("f0_agreement: counts only voiced reference frames") {
  F0Track ref, est;
  ref.values = {0.0, 100.0, 100.0, 200.0};
  est.values = {50.0, 101.0, 0.0, 195.0};
  // voiced frames: 3; hits: 101 (1%) and 195 (2.5%), miss: unvoiced estimate
  CHECK(f0_agreement(ref, est, 0.05) == doctest::Approx(2.0 / 3.0));
}
