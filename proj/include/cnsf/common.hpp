// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)
#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace cnsf {

inline constexpr double kPi = 3.14159265358979323846;
inline constexpr double kTwoPi = 2.0 * kPi;

// ----------------------------------------------------------------------------
// Error types. Library code throws; the CLI maps them onto exit codes.
// ----------------------------------------------------------------------------

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid configuration (bad hyper-parameter, non-integer factor, ...).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Invalid data passed to an operation (length mismatch, negative F0, ...).
class InputError : public Error {
 public:
  using Error::Error;
};

/// Malformed input file. `where()` is a byte offset for binary formats and a
/// 1-based line number for text formats.
class ParseError : public Error {
 public:
  ParseError(const std::string& msg, std::size_t where)
      : Error(msg), where_(where) {}
  std::size_t where() const { return where_; }

 private:
  std::size_t where_ = 0;
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// Numerical failure (divergence, NaN loss, ...).
class NumericError : public Error {
 public:
  using Error::Error;
};

// ----------------------------------------------------------------------------
// Small dense matrix, row-major. Rows are channels/frames, cols are time.
// ----------------------------------------------------------------------------

template <typename T>
struct Mat {
  int rows = 0;
  int cols = 0;
  std::vector<T> v;

  Mat() = default;
  Mat(int r, int c, T fill = T(0)) : rows(r), cols(c), v(std::size_t(r) * c, fill) {}

  static Mat scalar(T x) {
    Mat m(1, 1);
    m.v[0] = x;
    return m;
  }
  static Mat from_vector(const std::vector<T>& x) {
    Mat m(1, int(x.size()));
    m.v = x;
    return m;
  }

  T* row(int r) { return v.data() + std::size_t(r) * cols; }
  const T* row(int r) const { return v.data() + std::size_t(r) * cols; }
  T& at(int r, int c) { return v[std::size_t(r) * cols + c]; }
  const T& at(int r, int c) const { return v[std::size_t(r) * cols + c]; }
  std::size_t size() const { return v.size(); }
  bool same_shape(const Mat& o) const { return rows == o.rows && cols == o.cols; }

  template <typename U>
  Mat<U> cast() const {
    Mat<U> m(rows, cols);
    for (std::size_t i = 0; i < v.size(); ++i) m.v[i] = U(v[i]);
    return m;
  }
};

// ----------------------------------------------------------------------------
// Deterministic RNG. Gaussian draws use Box-Muller on explicit uniforms so the
// stream does not depend on the standard library's distribution internals.
// ----------------------------------------------------------------------------

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : eng_(seed) {}

  /// Uniform in [0, 1).
  double uniform() { return double(eng_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Standard normal.
  double gaussian() {
    double u1 = 1.0 - uniform();  // (0, 1]
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(kTwoPi * u2);
  }

  std::uint64_t next_u64() { return eng_(); }

 private:
  std::mt19937_64 eng_;
};

}  // namespace cnsf
