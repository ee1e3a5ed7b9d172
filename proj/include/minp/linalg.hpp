#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "minp/errors.hpp"

namespace minp {

using Vec = std::vector<double>;

// Dense row-major matrix. Every matrix in this library is small (a design
// matrix T x q with q <= 12, or a covariance block k x k with k <= 8), so
// plain loops beat any sparse or blocked scheme.
class Matrix {
 public:
  Matrix() = default;
  Matrix(int rows, int cols, double fill = 0.0)
      : rows_(rows), cols_(cols), d_(static_cast<size_t>(rows) * cols, fill) {}

  double& operator()(int i, int j) { return d_[static_cast<size_t>(i) * cols_ + j]; }
  double operator()(int i, int j) const { return d_[static_cast<size_t>(i) * cols_ + j]; }

  int rows() const { return rows_; }
  int cols() const { return cols_; }
  const double* row_ptr(int i) const { return d_.data() + static_cast<size_t>(i) * cols_; }
  double* row_ptr(int i) { return d_.data() + static_cast<size_t>(i) * cols_; }
  const std::vector<double>& data() const { return d_; }

 private:
  int rows_ = 0;
  int cols_ = 0;
  std::vector<double> d_;
};

// Symmetric real matrix. Construction validates finiteness and symmetry to
// 1e-12 relative tolerance; asymmetric or non-finite input is a caller bug.
class SymMatrix {
 public:
  SymMatrix() = default;

  explicit SymMatrix(Matrix m) : m_(std::move(m)) {
    if (m_.rows() != m_.cols()) throw std::invalid_argument("SymMatrix: not square");
    double scale = 0.0;
    for (int i = 0; i < m_.rows(); ++i)
      for (int j = 0; j < m_.cols(); ++j) {
        if (!std::isfinite(m_(i, j))) throw std::invalid_argument("SymMatrix: non-finite entry");
        scale = std::max(scale, std::fabs(m_(i, j)));
      }
    for (int i = 0; i < m_.rows(); ++i)
      for (int j = i + 1; j < m_.cols(); ++j)
        if (std::fabs(m_(i, j) - m_(j, i)) > 1e-12 * std::max(scale, 1e-300))
          throw std::invalid_argument("SymMatrix: asymmetric beyond tolerance");
  }

  static SymMatrix identity(int dim) {
    Matrix m(dim, dim);
    for (int i = 0; i < dim; ++i) m(i, i) = 1.0;
    return SymMatrix(std::move(m));
  }

  int dim() const { return m_.rows(); }
  double operator()(int i, int j) const { return m_(i, j); }
  const Matrix& mat() const { return m_; }

 private:
  Matrix m_;
};

struct CholFactor {
  Matrix lower;  // L with L L' = A, strictly positive diagonal
  int dim() const { return lower.rows(); }
};

// Left-looking Cholesky. A pivot at or below 1e-12 x (max diagonal entry)
// signals genuine rank deficiency rather than roundoff and is surfaced as a
// typed error; nothing is regularized silently.
inline CholFactor cholesky(const SymMatrix& a) {
  const int n = a.dim();
  double max_diag = 0.0;
  for (int i = 0; i < n; ++i) max_diag = std::max(max_diag, a(i, i));
  const double floor = 1e-12 * max_diag;

  Matrix l(n, n);
  for (int j = 0; j < n; ++j) {
    double d = a(j, j);
    for (int t = 0; t < j; ++t) d -= l(j, t) * l(j, t);
    if (!(d > floor))
      throw NotPositiveDefinite("cholesky: pivot " + std::to_string(d) +
                                " at index " + std::to_string(j));
    const double ljj = std::sqrt(d);
    l(j, j) = ljj;
    for (int i = j + 1; i < n; ++i) {
      double s = a(i, j);
      for (int t = 0; t < j; ++t) s -= l(i, t) * l(j, t);
      l(i, j) = s / ljj;
    }
  }
  return CholFactor{std::move(l)};
}

// Solve L y = b in place (forward substitution).
inline void forward_solve(const Matrix& l, Vec& b) {
  const int n = l.rows();
  for (int i = 0; i < n; ++i) {
    double s = b[i];
    const double* row = l.row_ptr(i);
    for (int j = 0; j < i; ++j) s -= row[j] * b[j];
    b[i] = s / row[i];
  }
}

// Solve L' x = y in place (back substitution against the lower factor).
inline void backward_solve(const Matrix& l, Vec& y) {
  const int n = l.rows();
  for (int i = n - 1; i >= 0; --i) {
    double s = y[i];
    for (int j = i + 1; j < n; ++j) s -= l(j, i) * y[j];
    y[i] = s / l(i, i);
  }
}

inline Vec solve_chol(const CholFactor& f, Vec b) {
  forward_solve(f.lower, b);
  backward_solve(f.lower, b);
  return b;
}

inline Vec solve_pd(const SymMatrix& a, const Vec& b) {
  if (static_cast<int>(b.size()) != a.dim())
    throw std::invalid_argument("solve_pd: size mismatch");
  return solve_chol(cholesky(a), b);
}

inline SymMatrix inverse_pd(const SymMatrix& a) {
  const int n = a.dim();
  const CholFactor f = cholesky(a);
  Matrix inv(n, n);
  Vec e(n, 0.0);
  for (int j = 0; j < n; ++j) {
    std::fill(e.begin(), e.end(), 0.0);
    e[j] = 1.0;
    Vec col = solve_chol(f, e);
    for (int i = 0; i < n; ++i) inv(i, j) = col[i];
  }
  // symmetrize exactly so the result passes SymMatrix validation
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) {
      const double v = 0.5 * (inv(i, j) + inv(j, i));
      inv(i, j) = v;
      inv(j, i) = v;
    }
  return SymMatrix(std::move(inv));
}

namespace detail {

inline uint64_t splitmix64(uint64_t& state) {
  uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

inline uint64_t mix64(uint64_t a, uint64_t b) {
  uint64_t x = a + 0x9E3779B97F4A7C15ULL * (b + 1);
  (void)splitmix64(x);
  return splitmix64(x);
}

inline uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

}  // namespace detail

// Splittable seeded random stream (xoshiro256++ state derived from the
// (seed, stream_id) pair via splitmix64). Identical (seed, stream_id) gives
// an identical sequence on any platform and any worker count; substream(j)
// derives an independent child stream, so callers can key streams by
// replication index, bootstrap index, or chunk index and stay independent
// of execution order. A live stream is consumed by exactly one task.
class RngStream {
 public:
  RngStream(uint64_t seed, uint64_t stream_id) : seed_(seed), stream_id_(stream_id) {
    uint64_t x = seed_ ^ detail::mix64(stream_id_, 0x5851F42D4C957F2DULL);
    for (auto& w : s_) w = detail::splitmix64(x);
    if ((s_[0] | s_[1] | s_[2] | s_[3]) == 0) s_[0] = 0x9E3779B97F4A7C15ULL;
  }

  RngStream substream(uint64_t child) const {
    return RngStream(seed_, detail::mix64(stream_id_, child));
  }

  uint64_t seed() const { return seed_; }
  uint64_t stream_id() const { return stream_id_; }

  uint64_t next_u64() {
    const uint64_t result = detail::rotl(s_[0] + s_[3], 23) + s_[0];
    const uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = detail::rotl(s_[3], 45);
    return result;
  }

  // uniform on [0, 1) with 53 random bits
  double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // uniform integer on [0, n); multiply-shift (bias < n / 2^64, negligible)
  uint64_t uniform_index(uint64_t n) {
    return static_cast<uint64_t>(
        (static_cast<unsigned __int128>(next_u64()) * n) >> 64);
  }

  // standard normal via the polar method; pairs are cached
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u, v, s;
    do {
      u = 2.0 * uniform01() - 1.0;
      v = 2.0 * uniform01() - 1.0;
      s = u * u + v * v;
    } while (s >= 1.0 || s == 0.0);
    const double f = std::sqrt(-2.0 * std::log(s) / s);
    spare_ = v * f;
    has_spare_ = true;
    return u * f;
  }

 private:
  uint64_t seed_;
  uint64_t stream_id_;
  uint64_t s_[4];
  double spare_ = 0.0;
  bool has_spare_ = false;
};

// Draw L z with z a vector of independent standard normals from rng.
inline Vec mvn_draw(const CholFactor& chol, RngStream& rng) {
  const int n = chol.dim();
  Vec z(n);
  for (int i = 0; i < n; ++i) z[i] = rng.normal();
  Vec out(n, 0.0);
  for (int i = 0; i < n; ++i) {
    const double* row = chol.lower.row_ptr(i);
    double s = 0.0;
    for (int j = 0; j <= i; ++j) s += row[j] * z[j];
    out[i] = s;
  }
  return out;
}

}  // namespace minp
