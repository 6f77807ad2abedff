// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)
#pragma once

#include <array>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "cnsf/audio_io.hpp"
#include "cnsf/autodiff.hpp"
#include "cnsf/common.hpp"
#include "cnsf/losses.hpp"
#include "cnsf/signal.hpp"
#include "cnsf/sinc_filter.hpp"
#include "cnsf/source.hpp"

namespace cnsf {

enum class SourceType { Sine, Pulse, RandomNoise, CyclicNoise };
enum class BetaMode { Fixed, Trainable };

SourceType source_type_from_string(const std::string& s);
std::string source_type_to_string(SourceType t);

inline constexpr int kHarmonicBlocks = 5;
inline constexpr int kNoiseBlocks = 1;
inline constexpr int kLayersPerBlock = 10;

/// Architecture and source configuration of the reduced-width model. The
/// block structure itself is fixed: five harmonic and one noise filter block,
/// ten dilated convolutions per block with dilation 2^(k-1) and kernel 3.
struct ToyNsfConfig {
  int channels = 16;       // conv width inside the filter blocks
  int cond_channels = 16;  // condition feature channels
  int feature_dim = 16;    // input spectral feature dimension
  int kernel = 3;

  double sample_rate = 16000.0;
  int frame_shift = 80;  // samples per condition/F0 frame

  double cutoff_hz = 5000.0;  // harmonic/noise split frequency
  int sinc_order = 31;

  SourceType source_type = SourceType::CyclicNoise;
  BetaMode beta_mode = BetaMode::Fixed;
  double beta = 0.870;
  bool mask_loss = true;

  SourceConfig source{};
  LossConfig loss{};

  int smooth_window = 320;
  int smooth_passes = 2;

  void validate() const;
  double cutoff_normalized() const { return cutoff_hz / sample_rate; }
  LossConfig effective_loss() const;
};

template <typename T>
struct ConvParams {
  Mat<T> w;  // out_ch x (in_ch * kernel)
  Mat<T> b;  // out_ch x 1
  int in_ch = 1, out_ch = 1, kernel = 1, dilation = 1;

  void init(int in_c, int out_c, int k, int dil, Rng* rng);  // rng null = zeros
};

template <typename T>
struct BlockParams {
  ConvParams<T> pre;   // 1 -> W
  ConvParams<T> cond;  // C -> W
  std::vector<ConvParams<T>> layers;
  ConvParams<T> post;  // W -> 1, zero-initialized so the block starts as identity
};

template <typename T>
struct ToyNsfModel {
  ToyNsfConfig cfg;
  ConvParams<T> cond1, cond2;
  std::vector<BlockParams<T>> harmonic;  // kHarmonicBlocks entries
  BlockParams<T> noise_block;
  Mat<T> mix_w;  // H x 1 (sine) or 1 x 1 (cyclic noise); empty otherwise
  Mat<T> mix_b;  // 1 x 1
  Mat<T> beta;   // 1 x 1, used only in trainable mode

  /// Build all parameter tensors; weight draws come from rng, biases and the
  /// final per-block convs start at zero.
  static ToyNsfModel create(const ToyNsfConfig& cfg, Rng& rng);

  bool has_mix() const;
  MixLayer mix_layer() const;
  std::vector<std::pair<std::string, Mat<T>*>> params();
  std::vector<std::pair<std::string, const Mat<T>*>> params() const;
};

/// Constant signals of one forward pass, drawn before graph construction so a
/// pass can be replayed bit-identically (finite differences, determinism).
struct SourceDraw {
  Mat<double> harmonics;             // H x T (sine source)
  std::vector<double> pulse_source;  // standalone pulse source
  std::vector<double> noise_source;  // random-noise source
  std::vector<double> pulses;        // cyclic noise: 0/1 pulse train
  std::vector<double> kernel_noise;  // cyclic noise: noise sequence
  std::vector<double> excitation;    // cyclic noise: pre-mix excitation (fixed beta)
  std::vector<double> noise_branch;  // noise-branch input a
  std::vector<double> mask;          // sine mask for the masked loss
};

/// Draws the source signals, noise-branch input, and mask in a fixed order.
/// The cyclic-noise path calls the same source-module routines as
/// gen_cyclic_noise, so composed results match it bit for bit.
SourceDraw draw_source(const ToyNsfConfig& cfg, const std::vector<double>& f0_upsampled,
                       Rng& rng);

template <typename T>
struct ForwardGraph {
  ad::Tape<T> tape;
  std::vector<std::pair<std::string, ad::Id>> param_ids;
  ad::Id source = -1;
  std::array<ad::Id, kHarmonicBlocks> taps{};
  ad::Id noise_out = -1;
  ad::Id output = -1;
  ad::Id loss = -1;
  ad::Id beta_id = -1;
  std::vector<double> f0_upsampled;
  SourceDraw draw;
};

/// Builds source, condition pathway, filter blocks and the sinc combination.
/// F0 is upsampled by repetition (never smoothed); condition features are
/// upsampled and smoothed.
template <typename T>
void build_forward(ForwardGraph<T>& graph, ToyNsfModel<T>& model, const F0Track& f0,
                   const FrameSequence& features, const SourceDraw& draw);

/// Appends the training objective to a built forward graph: plain spectral
/// loss on the output, masked loss on each harmonic-block tap, and the L1
/// pull on a trainable beta.
template <typename T>
void build_loss(ForwardGraph<T>& graph, const ToyNsfModel<T>& model,
                const Waveform& target);

/// Reverse sweep. Throws InputError if the loss graph was never built.
template <typename T>
void backward(ForwardGraph<T>& graph);

/// Plain forward evaluation: returns output, block taps and the source signal
/// as waveforms. Draws fresh noise from rng.
struct ForwardResult {
  Waveform output;
  std::vector<Waveform> block_outputs;
  Waveform source;
};

template <typename T>
ForwardResult forward(ToyNsfModel<T>& model, const F0Track& f0,
                      const FrameSequence& features, Rng& rng);

// ----------------------------------------------------------------------------
// Training
// ----------------------------------------------------------------------------

struct Utterance {
  Waveform wave;
  F0Track f0;
  FrameSequence features;
};

struct TrainConfig {
  SourceType source_type = SourceType::CyclicNoise;
  BetaMode beta_mode = BetaMode::Fixed;
  double beta = 0.870;
  bool mask_loss = true;

  double lr = 0.0003;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;

  int epochs = 16;
  int batch_length = 4000;  // samples per training crop
  std::uint64_t seed = 1;

  void validate() const;
};

struct EpochStats {
  double train_loss = 0.0;
  double val_loss = 0.0;
};

struct TrainResult {
  ToyNsfModel<float> model;  // parameters of the best-validation epoch
  std::vector<EpochStats> log;
  int best_epoch = 0;  // 0-based index into log
  int steps = 0;
};

/// ADAM training over the utterance set; one step per training utterance per
/// epoch, deterministic given the seed. Keeps the parameters of the epoch
/// with the lowest validation loss. Throws NumericError if the loss leaves
/// the finite range.
TrainResult train(const std::vector<Utterance>& train_set,
                  const std::vector<Utterance>& val_set, ToyNsfConfig arch,
                  const TrainConfig& cfg);

/// Index of the smallest validation loss (first of ties).
int best_epoch(const std::vector<double>& val_losses);

// ----------------------------------------------------------------------------
// Synthetic data and pitch tracking
// ----------------------------------------------------------------------------

/// Synthetic utterances: an unvoiced noise head and tail around one voiced
/// segment of six 1/h harmonics with slow vibrato in [80, 300] Hz, leveled to
/// -26 dBov, with 16-band log spectral features and the ground-truth F0.
std::vector<Utterance> make_synthetic_dataset(int n_utts, double duration, Rng& rng);

/// 16-band log band-energy features on the 5 ms frame grid (one row per F0
/// frame).
FrameSequence compute_features(const Waveform& wave, int num_frames);

/// Normalized-autocorrelation pitch tracker; frames whose peak clarity falls
/// below 0.3 are unvoiced.
F0Track estimate_f0(const Waveform& waveform, double frame_shift, double fmin,
                    double fmax);

/// Fraction of voiced reference frames whose estimate lies within `tol`
/// relative error (unvoiced estimates count as misses).
double f0_agreement(const F0Track& reference, const F0Track& estimate, double tol);

// ----------------------------------------------------------------------------
// Checkpoints
// ----------------------------------------------------------------------------

/// Versioned text container: header echoing the configuration, then named
/// parameter tensors.
void save_checkpoint(const std::string& path, const ToyNsfModel<float>& model,
                     std::uint64_t seed);

struct Checkpoint {
  ToyNsfModel<float> model;
  std::uint64_t seed = 0;
};

Checkpoint load_checkpoint(const std::string& path);

}  // namespace cnsf
