#include <doctest.h>

#include <cmath>
#include <functional>
#include <vector>

#include "cnsf/autodiff.hpp"
#include "oracles.hpp"

using namespace cnsf;
using ad::Id;
using ad::Tape;

namespace {

/// Rebuilds the graph from scratch for every probe and compares each analytic
/// gradient entry against a central finite difference.
void check_gradients(std::vector<Mat<double>> init,
                     const std::function<Id(Tape<double>&, const std::vector<Id>&)>& build,
                     double step = 1e-6, double tol = 1e-6) {
  auto eval = [&](const std::vector<Mat<double>>& vals) {
    Tape<double> tape;
    std::vector<Id> ids;
    for (const auto& v : vals) ids.push_back(tape.param(v));
    return tape.scalar(build(tape, ids));
  };

  Tape<double> tape;
  std::vector<Id> ids;
  for (const auto& v : init) ids.push_back(tape.param(v));
  const Id root = build(tape, ids);
  tape.backward(root);

  for (std::size_t p = 0; p < init.size(); ++p) {
    const Mat<double>& g = tape.grad(ids[p]);
    for (std::size_t i = 0; i < init[p].size(); ++i) {
      std::vector<Mat<double>> lo = init, hi = init;
      lo[p].v[i] -= step;
      hi[p].v[i] += step;
      const double fd = (eval(hi) - eval(lo)) / (2.0 * step);
      const double scale = std::max({1.0, std::abs(fd), std::abs(g.v[i])});
      CHECK(std::abs(g.v[i] - fd) <= tol * scale);
    }
  }
}

Mat<double> random_mat(int r, int c, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Mat<double> m(r, c);
  for (double& v : m.v) v = rng.uniform(lo, hi);
  return m;
}

}  // namespace

TEST_CASE("tape: add, scale, tanh, sum") {
  Rng rng(1);
  const Mat<double> probe = random_mat(2, 5, rng);
  check_gradients(
      {random_mat(2, 5, rng), random_mat(2, 5, rng)},
      [&](Tape<double>& t, const std::vector<Id>& p) {
        const Id sum = t.add(t.tanh_op(p[0]), t.scale(p[1], 0.7));
        return t.inner(sum, probe);
      });
}

TEST_CASE("tape: conv1d gradients for input, weight and bias") {
  Rng rng(2);
  const int in_ch = 3, out_ch = 2, kernel = 3, t_len = 30;
  const Mat<double> probe = random_mat(out_ch, t_len, rng);
  for (int dilation : {1, 4}) {
    check_gradients(
        {random_mat(in_ch, t_len, rng), random_mat(out_ch, in_ch * kernel, rng),
         random_mat(out_ch, 1, rng)},
        [&](Tape<double>& t, const std::vector<Id>& p) {
          return t.inner(t.conv1d(p[0], p[1], p[2], kernel, dilation), probe);
        });
  }
}

TEST_CASE("tape: conv1d forward matches a direct computation") {
  Rng rng(21);
  const int t_len = 16;
  Tape<double> tape;
  const Mat<double> x = random_mat(2, t_len, rng);
  const Mat<double> w = random_mat(1, 2 * 3, rng);
  Mat<double> b(1, 1, 0.25);
  const Id y = tape.conv1d(tape.value(x), tape.value(w), tape.value(b), 3, 2);
  for (int t = 0; t < t_len; ++t) {
    double acc = 0.25;
    for (int ci = 0; ci < 2; ++ci)
      for (int j = 0; j < 3; ++j) {
        const int idx = t + (j - 1) * 2;
        if (idx >= 0 && idx < t_len) acc += w.at(0, ci * 3 + j) * x.at(ci, idx);
      }
    CHECK(tape.val(y).at(0, t) == doctest::Approx(acc).epsilon(1e-12));
  }
}

TEST_CASE("tape: mix_tanh gradients") {
  Rng rng(3);
  const Mat<double> probe = random_mat(1, 25, rng);
  check_gradients(
      {random_mat(4, 25, rng, -0.3, 0.3), random_mat(4, 1, rng), random_mat(1, 1, rng)},
      [&](Tape<double>& t, const std::vector<Id>& p) {
        return t.inner(t.mix_tanh(p[0], p[1], p[2]), probe);
      });
}

TEST_CASE("tape: repeat_cols and moving_avg gradients") {
  Rng rng(4);
  const Mat<double> probe = random_mat(2, 24, rng);
  check_gradients({random_mat(2, 6, rng)},
                  [&](Tape<double>& t, const std::vector<Id>& p) {
                    return t.inner(t.moving_avg(t.repeat_cols(p[0], 4), 7), probe);
                  });
}

TEST_CASE("tape: moving_avg matches the direct oracle") {
  Rng rng(5);
  Tape<double> tape;
  Mat<double> x = random_mat(1, 40, rng);
  const Id y = tape.moving_avg(tape.value(x), 6);
  const std::vector<double> ref = oracle::direct_moving_average(x.v, 6);
  for (int t = 0; t < 40; ++t)
    CHECK(tape.val(y).at(0, t) == doctest::Approx(ref[std::size_t(t)]).epsilon(1e-12));
}

TEST_CASE("tape: tv_fir gradient") {
  Rng rng(6);
  std::vector<std::vector<double>> taps = {{0.2, 0.5, 0.3}, {-0.1, 0.8, 0.1}};
  const Mat<double> probe = random_mat(1, 20, rng);
  check_gradients({random_mat(1, 20, rng)},
                  [&](Tape<double>& t, const std::vector<Id>& p) {
                    return t.inner(t.tv_fir(p[0], taps, 10), probe);
                  });
}

TEST_CASE("tape: cyclic_noise beta gradient") {
  Rng rng(7);
  const std::size_t t_len = 400;
  std::vector<double> f0(t_len, 200.0);
  const std::vector<double> sine = fundamental_sine(f0, 0.3, 16000.0);
  const std::vector<double> pulses = pulse_train_from_sine(sine, f0);
  std::vector<double> noise(t_len);
  for (double& v : noise) v = rng.gaussian();
  const Mat<double> probe = random_mat(1, int(t_len), rng);

  check_gradients({Mat<double>::scalar(0.87)},
                  [&](Tape<double>& t, const std::vector<Id>& p) {
                    return t.inner(t.cyclic_noise(f0, pulses, noise, 16000.0, p[0]), probe);
                  });
}

TEST_CASE("tape: log_spec_distance gradient, plain and masked") {
  Rng rng(8);
  const int t_len = 200;
  StftConfig cfg{64, 50, 25, WindowType::Hann};
  const int frames = cfg.num_frames(t_len);

  Mat<double> ref(frames, cfg.num_bins());
  Mat<double> mask(frames, cfg.num_bins());
  for (double& v : ref.v) v = rng.uniform(0.0, 2.0);
  for (double& v : mask.v) v = rng.uniform(0.0, 1.5);

  check_gradients({random_mat(1, t_len, rng)},
                  [&](Tape<double>& t, const std::vector<Id>& p) {
                    return t.log_spec_distance(p[0], ref, Mat<double>(), cfg, 1e-5);
                  },
                  1e-6, 2e-6);

  check_gradients({random_mat(1, t_len, rng)},
                  [&](Tape<double>& t, const std::vector<Id>& p) {
                    return t.log_spec_distance(p[0], ref, mask, cfg, 1e-5);
                  },
                  1e-6, 2e-6);
}

TEST_CASE("tape: log_spec_distance forward value matches a direct computation") {
  Rng rng(9);
  const int t_len = 180;
  StftConfig cfg{64, 64, 32, WindowType::Rect};
  Mat<double> x = random_mat(1, t_len, rng);
  const int frames = cfg.num_frames(t_len);
  Mat<double> ref(frames, cfg.num_bins(), 0.5);

  Tape<double> tape;
  const Id loss = tape.log_spec_distance(tape.value(x), ref, Mat<double>(), cfg, 1e-5);

  double expect = 0.0;
  for (int fr = 0; fr < frames; ++fr) {
    std::vector<double> frame(64, 0.0);
    for (int n = 0; n < 64; ++n) frame[std::size_t(n)] = x.at(0, fr * 32 + n);
    const auto spec = oracle::naive_dft_onesided(frame);
    for (std::size_t k = 0; k < spec.size(); ++k) {
      const double r = std::log(0.5 + 1e-5) - std::log(std::norm(spec[k]) + 1e-5);
      expect += r * r;
    }
  }
  expect /= 2.0 * frames * double(cfg.num_bins());
  CHECK(tape.scalar(loss) == doctest::Approx(expect).epsilon(1e-9));
}

TEST_CASE("tape: l1_pull value and subgradient") {
  {
    Tape<double> tape;
    const Id beta = tape.param(Mat<double>::scalar(1.87));
    const Id pen = tape.l1_pull(beta, 0.87, 0.01);
    CHECK(tape.scalar(pen) == doctest::Approx(0.01).epsilon(1e-12));
    tape.backward(pen);
    CHECK(tape.grad(beta).v[0] == doctest::Approx(0.01).epsilon(1e-12));
  }
  {
    Tape<double> tape;
    const Id beta = tape.param(Mat<double>::scalar(0.5));
    const Id pen = tape.l1_pull(beta, 0.87, 0.01);
    tape.backward(pen);
    CHECK(tape.grad(beta).v[0] == doctest::Approx(-0.01).epsilon(1e-12));
  }
  {
    Tape<double> tape;  // subgradient 0 exactly at the kink
    const Id beta = tape.param(Mat<double>::scalar(0.87));
    const Id pen = tape.l1_pull(beta, 0.87, 0.01);
    tape.backward(pen);
    CHECK(tape.grad(beta).v[0] == 0.0);
  }
}

TEST_CASE("tape: backward rejects malformed roots") {
  Tape<double> tape;
  CHECK_THROWS_AS(tape.backward(-1), InputError);
  CHECK_THROWS_AS(tape.backward(5), InputError);

  const Id vec = tape.param(Mat<double>(1, 4, 1.0));
  CHECK_THROWS_AS(tape.backward(vec), InputError);  // non-scalar root

  const Id c = tape.value(Mat<double>::scalar(1.0));
  CHECK_THROWS_AS(tape.backward(c), InputError);  // no trainable inputs
}

TEST_CASE("tape: gradients accumulate across reuse of a node") {
  Tape<double> tape;
  const Id x = tape.param(Mat<double>::scalar(0.4));
  const Id y = tape.add(x, x);  // dy/dx = 2
  tape.backward(y);
  CHECK(tape.grad(x).v[0] == doctest::Approx(2.0).epsilon(1e-12));
}
