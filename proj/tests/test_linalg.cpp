#include <catch2/catch_amalgamated.hpp>

#include "minp/linalg.hpp"

using namespace minp;

namespace {

Matrix from_rows(std::initializer_list<std::initializer_list<double>> rows) {
  const int n = static_cast<int>(rows.size());
  const int m = static_cast<int>(rows.begin()->size());
  Matrix out(n, m);
  int i = 0;
  for (const auto& row : rows) {
    int j = 0;
    for (double v : row) out(i, j++) = v;
    ++i;
  }
  return out;
}

SymMatrix random_pd(int k, RngStream& rng, double ridge = 0.3) {
  Matrix a(k, k);
  for (int i = 0; i < k; ++i)
    for (int j = 0; j < k; ++j) a(i, j) = rng.normal();
  Matrix g(k, k);
  double trace = 0.0;
  for (int i = 0; i < k; ++i)
    for (int j = 0; j < k; ++j) {
      double s = 0.0;
      for (int t = 0; t < k; ++t) s += a(i, t) * a(j, t);
      g(i, j) = s;
      if (i == j) trace += s;
    }
  for (int i = 0; i < k; ++i) g(i, i) += ridge * trace / k;
  for (int i = 0; i < k; ++i)
    for (int j = 0; j < i; ++j) g(i, j) = g(j, i);
  return SymMatrix(std::move(g));
}

}  // namespace

TEST_CASE("cholesky identity and hand-verified factor") {
  auto f = cholesky(SymMatrix::identity(2));
  CHECK(f.lower(0, 0) == 1.0);
  CHECK(f.lower(1, 1) == 1.0);
  CHECK(f.lower(1, 0) == 0.0);

  auto f2 = cholesky(SymMatrix(from_rows({{4, 2}, {2, 5}})));
  CHECK(f2.lower(0, 0) == Catch::Approx(2.0));
  CHECK(f2.lower(1, 0) == Catch::Approx(1.0));
  CHECK(f2.lower(1, 1) == Catch::Approx(2.0));
}

TEST_CASE("cholesky rejects an indefinite matrix") {
  CHECK_THROWS_AS(cholesky(SymMatrix(from_rows({{1, 2}, {2, 1}}))), NotPositiveDefinite);
}

TEST_CASE("cholesky is bitwise deterministic") {
  RngStream rng(1, 0);
  const SymMatrix a = random_pd(6, rng);
  const auto f1 = cholesky(a);
  const auto f2 = cholesky(a);
  for (int i = 0; i < 6; ++i)
    for (int j = 0; j < 6; ++j) CHECK(f1.lower(i, j) == f2.lower(i, j));
}

TEST_CASE("solve_pd identity and hand case") {
  const Vec x = solve_pd(SymMatrix::identity(3), {1, 2, 3});
  CHECK(x == Vec{1, 2, 3});
  const Vec y = solve_pd(SymMatrix(from_rows({{4, 2}, {2, 5}})), {6, 7});
  CHECK(y[0] == Catch::Approx(1.0));
  CHECK(y[1] == Catch::Approx(1.0));
}

TEST_CASE("solve_pd residual oracle on random systems") {
  RngStream rng(2, 0);
  for (int trial = 0; trial < 50; ++trial) {
    const int k = 1 + static_cast<int>(rng.uniform_index(8));
    const SymMatrix a = random_pd(k, rng);
    Vec b(k);
    double bnorm = 0.0;
    for (double& v : b) {
      v = rng.normal();
      bnorm += v * v;
    }
    bnorm = std::sqrt(bnorm);
    const Vec x = solve_pd(a, b);
    double rnorm = 0.0;
    for (int i = 0; i < k; ++i) {
      double ax = 0.0;
      for (int j = 0; j < k; ++j) ax += a(i, j) * x[j];
      rnorm += (ax - b[i]) * (ax - b[i]);
    }
    CHECK(std::sqrt(rnorm) <= 1e-9 * std::max(bnorm, 1.0));
  }
}

TEST_CASE("solve_pd recovers a planted solution") {
  RngStream rng(3, 0);
  for (int trial = 0; trial < 50; ++trial) {
    const int k = 1 + static_cast<int>(rng.uniform_index(8));
    const SymMatrix a = random_pd(k, rng);
    Vec x(k);
    double xnorm = 0.0;
    for (double& v : x) {
      v = rng.normal();
      xnorm += v * v;
    }
    xnorm = std::sqrt(xnorm);
    Vec b(k, 0.0);
    for (int i = 0; i < k; ++i)
      for (int j = 0; j < k; ++j) b[i] += a(i, j) * x[j];
    const Vec got = solve_pd(a, b);
    for (int i = 0; i < k; ++i) CHECK(std::fabs(got[i] - x[i]) <= 1e-8 * std::max(1.0, xnorm));
  }
}

TEST_CASE("inverse_pd closed forms") {
  const SymMatrix i4 = inverse_pd(SymMatrix::identity(4));
  for (int i = 0; i < 4; ++i) CHECK(i4(i, i) == Catch::Approx(1.0));

  const SymMatrix d = inverse_pd(SymMatrix(from_rows({{1, 0}, {0, 4}})));
  CHECK(d(0, 0) == Catch::Approx(1.0));
  CHECK(d(1, 1) == Catch::Approx(0.25));

  const SymMatrix c = inverse_pd(SymMatrix(from_rows({{1, 0.9}, {0.9, 1}})));
  CHECK(c(0, 0) == Catch::Approx(1.0 / 0.19));
  CHECK(c(0, 1) == Catch::Approx(-0.9 / 0.19));
}

TEST_CASE("inverse_pd reproduces the identity") {
  RngStream rng(4, 0);
  const int k = 7;
  const SymMatrix a = random_pd(k, rng);
  const SymMatrix ainv = inverse_pd(a);
  for (int i = 0; i < k; ++i)
    for (int j = 0; j < k; ++j) {
      double s = 0.0;
      for (int t = 0; t < k; ++t) s += a(i, t) * ainv(t, j);
      CHECK(std::fabs(s - (i == j ? 1.0 : 0.0)) <= 1e-9);
    }
}

TEST_CASE("SymMatrix validates its input") {
  CHECK_THROWS_AS(SymMatrix(from_rows({{1, 2}, {3, 1}})), std::invalid_argument);
  Matrix bad(2, 2);
  bad(0, 0) = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(SymMatrix(std::move(bad)), std::invalid_argument);
}

TEST_CASE("rng streams replay exactly") {
  RngStream a(42, 7);
  RngStream b(42, 7);
  for (int i = 0; i < 1000; ++i) CHECK(a.next_u64() == b.next_u64());
  RngStream c(42, 7);
  RngStream d(42, 7);
  for (int i = 0; i < 1000; ++i) CHECK(c.normal() == d.normal());
}

TEST_CASE("distinct substreams are nearly uncorrelated") {
  RngStream base(5, 0);
  RngStream a = base.substream(1);
  RngStream b = base.substream(2);
  const int n = 10000;
  double sa = 0, sb = 0, saa = 0, sbb = 0, sab = 0;
  for (int i = 0; i < n; ++i) {
    const double x = a.uniform01();
    const double y = b.uniform01();
    sa += x;
    sb += y;
    saa += x * x;
    sbb += y * y;
    sab += x * y;
  }
  const double cov = sab / n - (sa / n) * (sb / n);
  const double corr = cov / std::sqrt((saa / n - (sa / n) * (sa / n)) *
                                      (sbb / n - (sb / n) * (sb / n)));
  CHECK(std::fabs(corr) < 0.05);
}

TEST_CASE("mvn_draw identity factor returns the raw normals") {
  const auto chol = cholesky(SymMatrix::identity(3));
  RngStream rng(6, 0);
  RngStream replay(6, 0);
  const Vec v = mvn_draw(chol, rng);
  for (int i = 0; i < 3; ++i) CHECK(v[i] == replay.normal());
}

TEST_CASE("mvn_draw determinism for a fixed stream") {
  RngStream rng(7, 3);
  RngStream rng2(7, 3);
  const auto chol = cholesky(SymMatrix(from_rows({{2, 0.6}, {0.6, 1}})));
  const Vec a = mvn_draw(chol, rng);
  const Vec b = mvn_draw(chol, rng2);
  CHECK(a == b);
}

TEST_CASE("mvn_draw sample covariance matches the target") {
  const Matrix sigma = from_rows({{2, 0.6}, {0.6, 1}});
  const auto chol = cholesky(SymMatrix(Matrix(sigma)));
  RngStream rng(8, 0);
  const long n = 1000000;
  double s11 = 0, s12 = 0, s22 = 0;
  for (long i = 0; i < n; ++i) {
    const Vec v = mvn_draw(chol, rng);
    s11 += v[0] * v[0];
    s12 += v[0] * v[1];
    s22 += v[1] * v[1];
  }
  CHECK(std::fabs(s11 / n - 2.0) < 0.01 * 2.0);
  CHECK(std::fabs(s12 / n - 0.6) < 0.01 * 2.0);
  CHECK(std::fabs(s22 / n - 1.0) < 0.01 * 2.0);
}
