// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)
#pragma once

#include <complex>
#include <functional>
#include <memory>
#include <utility>
#include <vector>

#include "cnsf/common.hpp"
#include "cnsf/fft.hpp"
#include "cnsf/signal.hpp"
#include "cnsf/sinc_filter.hpp"
#include "cnsf/source.hpp"

namespace cnsf::ad {

using Id = int;

/// Reverse-mode tape over Mat<T> values. Ops record a closure that pulls the
/// output gradient and pushes into the inputs; backward() runs the closures in
/// reverse creation order. Values for constants never allocate gradients.
template <typename T>
class Tape {
 public:

  Id value(Mat<T> m) { return push(std::move(m), false); }

  Id param(const Mat<T>& m) { return push(m, true); }

  const Mat<T>& val(Id id) const { return nodes_[check(id)].val; }
  const Mat<T>& grad(Id id) const {
    const Node& n = nodes_[check(id)];
    if (!n.requires_grad) throw InputError("node has no gradient");
    return n.grad;
  }

  T scalar(Id id) const {
    const Mat<T>& m = val(id);
    if (m.size() != 1) throw InputError("node is not a scalar");
    return m.v[0];
  }

  /// Seed d(root)/d(root) = 1 and sweep. Root must be a scalar node of this
  /// tape; anything else is a detached or malformed graph.
  void backward(Id root) {
    if (root < 0 || root >= Id(nodes_.size()))
      throw InputError("backward: detached graph (unknown root node)");
    Node& r = nodes_[std::size_t(root)];
    if (r.val.size() != 1) throw InputError("backward: root must be a scalar");
    if (!r.requires_grad)
      throw InputError("backward: graph has no trainable inputs");
    r.grad.v[0] = T(1);
    for (Id i = root; i >= 0; --i) {
      Node& n = nodes_[std::size_t(i)];
      if (n.requires_grad && n.back) n.back(*this);
    }
  }

  std::size_t num_nodes() const { return nodes_.size(); }

  // --------------------------------------------------------------------------
  // Elementwise / structural ops
  // --------------------------------------------------------------------------

  Id add(Id a, Id b) {
    const Mat<T>&va = val(a, "add"), &vb = val(b, "add");
    if (!va.same_shape(vb)) throw InputError("add: shape mismatch");
    Mat<T> out = va;
    for (std::size_t i = 0; i < out.size(); ++i) out.v[i] += vb.v[i];
    Id id = push(std::move(out), rg(a) || rg(b));
    if (rg(a) || rg(b)) {
      nodes_.back().back = [a, b, id](Tape& t) {
        const Mat<T>& g = t.nodes_[id].grad;
        t.accumulate(a, g);
        t.accumulate(b, g);
      };
    }
    return id;
  }

  Id scale(Id a, T s) {
    Mat<T> out = val(a, "scale");
    for (T& x : out.v) x *= s;
    Id id = push(std::move(out), rg(a));
    if (rg(a)) {
      nodes_.back().back = [a, s, id](Tape& t) {
        const Mat<T>& g = t.nodes_[id].grad;
        Mat<T>& ga = t.grad_ref(a);
        for (std::size_t i = 0; i < g.size(); ++i) ga.v[i] += s * g.v[i];
      };
    }
    return id;
  }

  Id tanh_op(Id a) {
    Mat<T> out = val(a, "tanh");
    for (T& x : out.v) x = std::tanh(x);
    Id id = push(std::move(out), rg(a));
    if (rg(a)) {
      nodes_.back().back = [a, id](Tape& t) {
        const Mat<T>& g = t.nodes_[id].grad;
        const Mat<T>& y = t.nodes_[id].val;
        Mat<T>& ga = t.grad_ref(a);
        for (std::size_t i = 0; i < g.size(); ++i)
          ga.v[i] += g.v[i] * (T(1) - y.v[i] * y.v[i]);
      };
    }
    return id;
  }

  /// Sum of scalar nodes.
  Id sum(const std::vector<Id>& ids) {
    if (ids.empty()) throw InputError("sum: empty");
    T acc = T(0);
    bool any_rg = false;
    for (Id i : ids) {
      acc += scalar(i);
      any_rg = any_rg || rg(i);
    }
    Id id = push(Mat<T>::scalar(acc), any_rg);
    if (any_rg) {
      nodes_.back().back = [ids, id](Tape& t) {
        const T g = t.nodes_[id].grad.v[0];
        for (Id i : ids)
          if (t.rg(i)) t.grad_ref(i).v[0] += g;
      };
    }
    return id;
  }

  /// Test helper: scalar inner product with a constant, sum(x .* c).
  Id inner(Id a, const Mat<T>& c) {
    const Mat<T>& va = val(a, "inner");
    if (!va.same_shape(c)) throw InputError("inner: shape mismatch");
    T acc = T(0);
    for (std::size_t i = 0; i < va.size(); ++i) acc += va.v[i] * c.v[i];
    Id id = push(Mat<T>::scalar(acc), rg(a));
    if (rg(a)) {
      nodes_.back().back = [a, c, id](Tape& t) {
        const T g = t.nodes_[id].grad.v[0];
        Mat<T>& ga = t.grad_ref(a);
        for (std::size_t i = 0; i < c.size(); ++i) ga.v[i] += g * c.v[i];
      };
    }
    return id;
  }

  // --------------------------------------------------------------------------
  // Network ops
  // --------------------------------------------------------------------------

  /// 1-D convolution over time with centered taps and zero padding.
  /// x: in_ch x T, w: out_ch x (in_ch*kernel), b: out_ch x 1. Output keeps T.
  Id conv1d(Id x, Id w, Id b, int kernel, int dilation) {
    const Mat<T>& vx = val(x, "conv1d");
    const Mat<T>& vw = val(w, "conv1d");
    const Mat<T>& vb = val(b, "conv1d");
    const int in_ch = vx.rows, t_len = vx.cols, out_ch = vw.rows;
    if (vw.cols != in_ch * kernel) throw InputError("conv1d: weight shape mismatch");
    if (vb.rows != out_ch || vb.cols != 1) throw InputError("conv1d: bias shape mismatch");

    const int c = (kernel - 1) / 2;
    Mat<T> out(out_ch, t_len);
    for (int co = 0; co < out_ch; ++co) {
      T* y = out.row(co);
      const T bias = vb.v[std::size_t(co)];
      for (int t = 0; t < t_len; ++t) y[t] = bias;
      for (int ci = 0; ci < in_ch; ++ci) {
        const T* xr = vx.row(ci);
        for (int j = 0; j < kernel; ++j) {
          const T wv = vw.at(co, ci * kernel + j);
          const int off = (j - c) * dilation;
          const int lo = off < 0 ? -off : 0;
          const int hi = off > 0 ? t_len - off : t_len;
          for (int t = lo; t < hi; ++t) y[t] += wv * xr[t + off];
        }
      }
    }
    const bool needs = rg(x) || rg(w) || rg(b);
    Id id = push(std::move(out), needs);
    if (needs) {
      nodes_.back().back = [x, w, b, kernel, dilation, id](Tape& t) {
        const Mat<T>& g = t.nodes_[id].grad;
        const Mat<T>& vx = t.nodes_[x].val;
        const Mat<T>& vw = t.nodes_[w].val;
        const int in_ch = vx.rows, t_len = vx.cols, out_ch = vw.rows;
        const int c = (kernel - 1) / 2;
        if (t.rg(b)) {
          Mat<T>& gb = t.grad_ref(b);
          for (int co = 0; co < out_ch; ++co) {
            T acc = T(0);
            const T* gr = g.row(co);
            for (int k = 0; k < t_len; ++k) acc += gr[k];
            gb.v[std::size_t(co)] += acc;
          }
        }
        if (t.rg(w)) {
          Mat<T>& gw = t.grad_ref(w);
          for (int co = 0; co < out_ch; ++co) {
            const T* gr = g.row(co);
            for (int ci = 0; ci < in_ch; ++ci) {
              const T* xr = vx.row(ci);
              for (int j = 0; j < kernel; ++j) {
                const int off = (j - c) * dilation;
                const int lo = off < 0 ? -off : 0;
                const int hi = off > 0 ? t_len - off : t_len;
                T acc = T(0);
                for (int k = lo; k < hi; ++k) acc += gr[k] * xr[k + off];
                gw.at(co, ci * kernel + j) += acc;
              }
            }
          }
        }
        if (t.rg(x)) {
          Mat<T>& gx = t.grad_ref(x);
          for (int co = 0; co < out_ch; ++co) {
            const T* gr = g.row(co);
            for (int ci = 0; ci < in_ch; ++ci) {
              T* gxr = gx.row(ci);
              for (int j = 0; j < kernel; ++j) {
                const T wv = vw.at(co, ci * kernel + j);
                const int off = (j - c) * dilation;
                const int lo = off < 0 ? -off : 0;
                const int hi = off > 0 ? t_len - off : t_len;
                for (int k = lo; k < hi; ++k) gxr[k + off] += wv * gr[k];
              }
            }
          }
        }
      };
    }
    return id;
  }

  /// Trainable source mix: out[t] = tanh(sum_h w[h]*x[h][t] + b).
  Id mix_tanh(Id x, Id w, Id b) {
    const Mat<T>& vx = val(x, "mix_tanh");
    const Mat<T>& vw = val(w, "mix_tanh");
    const Mat<T>& vb = val(b, "mix_tanh");
    const int h_ch = vx.rows, t_len = vx.cols;
    if (vw.rows != h_ch || vw.cols != 1) throw InputError("mix_tanh: weight shape mismatch");
    if (vb.size() != 1) throw InputError("mix_tanh: bias must be scalar");

    std::vector<const T*> rows(std::size_t(h_ch), nullptr);
    for (int h = 0; h < h_ch; ++h) rows[std::size_t(h)] = vx.row(h);
    Mat<T> out(1, t_len);
    cnsf::detail::mix_tanh_eval<T>(rows.data(), h_ch, t_len, vw.v.data(), vb.v[0],
                                   out.row(0));

    const bool needs = rg(x) || rg(w) || rg(b);
    Id id = push(std::move(out), needs);
    if (needs) {
      nodes_.back().back = [x, w, b, id](Tape& t) {
        const Mat<T>& g = t.nodes_[id].grad;
        const Mat<T>& y = t.nodes_[id].val;
        const Mat<T>& vx = t.nodes_[x].val;
        const Mat<T>& vw = t.nodes_[w].val;
        const int h_ch = vx.rows, t_len = vx.cols;
        for (int k = 0; k < t_len; ++k) {
          const T d = g.v[std::size_t(k)] * (T(1) - y.v[std::size_t(k)] * y.v[std::size_t(k)]);
          if (t.rg(b)) t.grad_ref(b).v[0] += d;
          for (int h = 0; h < h_ch; ++h) {
            if (t.rg(w)) t.grad_ref(w).v[std::size_t(h)] += d * vx.at(h, k);
            if (t.rg(x)) t.grad_ref(x).at(h, k) += d * vw.v[std::size_t(h)];
          }
        }
      };
    }
    return id;
  }

  /// Frame-to-sample repetition along time.
  Id repeat_cols(Id x, int factor) {
    const Mat<T>& vx = val(x, "repeat_cols");
    if (factor < 1) throw ConfigError("repeat_cols: factor must be >= 1");
    Mat<T> out(vx.rows, vx.cols * factor);
    for (int r = 0; r < vx.rows; ++r) {
      const T* src = vx.row(r);
      T* dst = out.row(r);
      for (int n = 0; n < vx.cols; ++n)
        for (int i = 0; i < factor; ++i) dst[n * factor + i] = src[n];
    }
    Id id = push(std::move(out), rg(x));
    if (rg(x)) {
      nodes_.back().back = [x, factor, id](Tape& t) {
        const Mat<T>& g = t.nodes_[id].grad;
        Mat<T>& gx = t.grad_ref(x);
        for (int r = 0; r < gx.rows; ++r) {
          const T* gr = g.row(r);
          T* gxr = gx.row(r);
          for (int n = 0; n < gx.cols; ++n) {
            T acc = T(0);
            for (int i = 0; i < factor; ++i) acc += gr[n * factor + i];
            gxr[n] += acc;
          }
        }
      };
    }
    return id;
  }

  /// One centered moving-average pass per row (shrinking edge windows).
  Id moving_avg(Id x, int window) {
    const Mat<T>& vx = val(x, "moving_avg");
    if (window < 1) throw ConfigError("moving_avg: window must be >= 1");
    Mat<T> out(vx.rows, vx.cols);
    for (int r = 0; r < vx.rows; ++r)
      cnsf::detail::moving_average_row(vx.row(r), out.row(r), vx.cols, window);
    Id id = push(std::move(out), rg(x));
    if (rg(x)) {
      nodes_.back().back = [x, window, id](Tape& t) {
        const Mat<T>& g = t.nodes_[id].grad;
        Mat<T>& gx = t.grad_ref(x);
        for (int r = 0; r < gx.rows; ++r)
          cnsf::detail::moving_average_row_adjoint(g.row(r), gx.row(r), gx.cols, window);
      };
    }
    return id;
  }

  /// Time-variant FIR with constant (non-trainable) per-frame taps, group
  /// delay compensated. x must be a single row.
  Id tv_fir(Id x, std::vector<std::vector<T>> taps, int frame_shift) {
    const Mat<T>& vx = val(x, "tv_fir");
    if (vx.rows != 1) throw InputError("tv_fir: expected a single-row signal");
    if (taps.empty()) throw InputError("tv_fir: empty tap table");
    Mat<T> out(1, vx.cols);
    cnsf::detail::tv_fir_apply(vx.row(0), vx.cols, taps, frame_shift, out.row(0));
    Id id = push(std::move(out), rg(x));
    if (rg(x)) {
      nodes_.back().back = [x, taps = std::move(taps), frame_shift, id](Tape& t) {
        const Mat<T>& g = t.nodes_[id].grad;
        Mat<T>& gx = t.grad_ref(x);
        cnsf::detail::tv_fir_adjoint(g.row(0), g.cols, taps, frame_shift, gx.row(0));
      };
    }
    return id;
  }

  /// Cyclic-noise excitation with a trainable scalar decay rate. The forward
  /// value is computed by the source module in double precision; only beta
  /// carries gradient (f0, pulses and noise are constants of the pass).
  Id cyclic_noise(std::vector<double> f0, std::vector<double> pulses,
                  std::vector<double> noise, double sample_rate, Id beta) {
    const double b = double(scalar(beta));
    const std::vector<double> exc = cnsf::cyclic_noise_excitation(
        f0, CyclicNoiseConfig::scalar(b), pulses, noise, sample_rate);
    Mat<T> out(1, int(exc.size()));
    for (std::size_t i = 0; i < exc.size(); ++i) out.v[i] = T(exc[i]);
    Id id = push(std::move(out), rg(beta));
    if (rg(beta)) {
      nodes_.back().back = [f0 = std::move(f0), pulses = std::move(pulses),
                            noise = std::move(noise), sample_rate, b, beta, id](Tape& t) {
        const Mat<T>& g = t.nodes_[id].grad;
        const std::vector<double> d = cnsf::cyclic_noise_excitation_dbeta(
            f0, b, pulses, noise, sample_rate);
        double acc = 0.0;
        for (std::size_t i = 0; i < d.size(); ++i) acc += double(g.v[i]) * d[i];
        t.grad_ref(beta).v[0] += T(acc);
      };
    }
    return id;
  }

  /// Log spectral distance of one STFT configuration against fixed reference
  /// power spectra: (1/(2*N*K')) * sum log^2((ref*m + eta)/(|STFT(x)|^2*m + eta)).
  /// mask_power may be empty for the unmasked loss.
  Id log_spec_distance(Id x, const Mat<T>& ref_power, const Mat<T>& mask_power,
                       const StftConfig& cfg, T eta) {
    cfg.validate();
    const Mat<T>& vx = val(x, "log_spec_distance");
    if (vx.rows != 1) throw InputError("log_spec_distance: expected a single-row signal");
    const int t_len = vx.cols;
    const int n_frames = cfg.num_frames(t_len);
    const int n_bins = cfg.num_bins();
    if (ref_power.rows != n_frames || ref_power.cols != n_bins)
      throw InputError("log_spec_distance: reference spectrum shape mismatch");
    const bool masked = mask_power.size() > 0;
    if (masked && !mask_power.same_shape(ref_power))
      throw InputError("log_spec_distance: mask spectrum shape mismatch");

    std::vector<T> window(std::size_t(cfg.frame_length), T(0));
    for (int n = 0; n < cfg.frame_length; ++n)
      window[std::size_t(n)] = T(cnsf::detail::window_value(cfg.window, n, cfg.frame_length));

    auto spectra = std::make_shared<std::vector<std::complex<T>>>(
        std::size_t(n_frames) * n_bins);
    Mat<T> power(n_frames, n_bins);
    Mat<T> ratio(n_frames, n_bins);

    std::vector<std::complex<T>> buf(std::size_t(cfg.fft_size));
    double acc = 0.0;
    for (int fr = 0; fr < n_frames; ++fr) {
      const int start = fr * cfg.frame_shift;
      std::fill(buf.begin(), buf.end(), std::complex<T>(T(0), T(0)));
      for (int n = 0; n < cfg.frame_length; ++n) {
        const int idx = start + n;
        if (idx >= t_len) break;
        buf[std::size_t(n)] = vx.v[std::size_t(idx)] * window[std::size_t(n)];
      }
      cnsf::detail::fft_pow2(buf, false);
      for (int k = 0; k < n_bins; ++k) {
        const std::complex<T> y = buf[std::size_t(k)];
        (*spectra)[std::size_t(fr) * n_bins + k] = y;
        const T p = y.real() * y.real() + y.imag() * y.imag();
        power.at(fr, k) = p;
        const T m = masked ? mask_power.at(fr, k) : T(1);
        const T r = std::log(ref_power.at(fr, k) * m + eta) - std::log(p * m + eta);
        ratio.at(fr, k) = r;
        acc += double(r) * double(r);
      }
    }
    const T norm = T(1) / (T(2) * T(n_frames) * T(n_bins));
    Id id = push(Mat<T>::scalar(T(acc) * norm), rg(x));
    if (rg(x)) {
      nodes_.back().back = [x, mask_power, cfg, eta, spectra, power = std::move(power),
                            ratio = std::move(ratio), window = std::move(window), norm,
                            id](Tape& t) {
        const T g = t.nodes_[id].grad.v[0];
        Mat<T>& gx = t.grad_ref(x);
        const int t_len = gx.cols;
        const int n_frames = power.rows, n_bins = power.cols;
        const bool masked = mask_power.size() > 0;
        std::vector<std::complex<T>> buf(std::size_t(cfg.fft_size));
        for (int fr = 0; fr < n_frames; ++fr) {
          std::fill(buf.begin(), buf.end(), std::complex<T>(T(0), T(0)));
          for (int k = 0; k < n_bins; ++k) {
            const T m = masked ? mask_power.at(fr, k) : T(1);
            // d(loss)/d(power) = norm * 2r * (-m / (power*m + eta))
            const T gp = g * norm * T(2) * ratio.at(fr, k) *
                         (-m / (power.at(fr, k) * m + eta));
            buf[std::size_t(k)] = gp * std::conj((*spectra)[std::size_t(fr) * n_bins + k]);
          }
          cnsf::detail::fft_pow2(buf, false);
          const int start = fr * cfg.frame_shift;
          for (int n = 0; n < cfg.frame_length; ++n) {
            const int idx = start + n;
            if (idx >= t_len) break;
            gx.v[std::size_t(idx)] += T(2) * buf[std::size_t(n)].real() * window[std::size_t(n)];
          }
        }
      };
    }
    return id;
  }

  /// weight * |x - center| with subgradient 0 at the kink.
  Id l1_pull(Id x, T center, T weight) {
    const T v = scalar(x);
    Id id = push(Mat<T>::scalar(weight * std::abs(v - center)), rg(x));
    if (rg(x)) {
      nodes_.back().back = [x, center, weight, id](Tape& t) {
        const T g = t.nodes_[id].grad.v[0];
        const T v = t.nodes_[x].val.v[0];
        const T s = v > center ? T(1) : (v < center ? T(-1) : T(0));
        t.grad_ref(x).v[0] += g * weight * s;
      };
    }
    return id;
  }

 private:
  struct Node {
    Mat<T> val;
    Mat<T> grad;
    std::function<void(Tape&)> back;
    bool requires_grad = false;
  };

  std::size_t check(Id id) const {
    if (id < 0 || id >= Id(nodes_.size())) throw InputError("invalid tape node id");
    return std::size_t(id);
  }

  const Mat<T>& val(Id id, const char* op) const {
    if (id < 0 || id >= Id(nodes_.size()))
      throw InputError(std::string(op) + ": invalid input node");
    return nodes_[std::size_t(id)].val;
  }

  bool rg(Id id) const { return nodes_[check(id)].requires_grad; }

  Mat<T>& grad_ref(Id id) { return nodes_[check(id)].grad; }

  Id push(Mat<T> v, bool requires_grad) {
    Node n;
    n.requires_grad = requires_grad;
    if (requires_grad) n.grad = Mat<T>(v.rows, v.cols, T(0));
    n.val = std::move(v);
    nodes_.push_back(std::move(n));
    return Id(nodes_.size()) - 1;
  }

  std::vector<Node> nodes_;

  void accumulate(Id id, const Mat<T>& g) {
    if (!rg(id)) return;
    Mat<T>& dst = grad_ref(id);
    for (std::size_t i = 0; i < g.size(); ++i) dst.v[i] += g.v[i];
  }
};

}  // namespace cnsf::ad
