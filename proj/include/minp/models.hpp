#pragma once

#include <numeric>
#include <utility>

#include "minp/cone.hpp"
#include "minp/linalg.hpp"

namespace minp {

enum class ModelFamily { Linear, Arch, RandomCoef };

inline const char* family_name(ModelFamily f) {
  switch (f) {
    case ModelFamily::Linear: return "linear";
    case ModelFamily::Arch: return "arch";
    case ModelFamily::RandomCoef: return "rc";
  }
  return "?";
}

// Observed sample. Z holds the sign-constrained covariates (empty for ARCH,
// where the tested quantities are lag coefficients of squared residuals),
// X the free covariates with the intercept column last by convention.
struct Dataset {
  Vec y;
  Matrix z;
  Matrix x;
  ModelFamily family = ModelFamily::Linear;
  int k_lags = 0;

  int t() const { return static_cast<int>(y.size()); }
  int k() const { return family == ModelFamily::Arch ? k_lags : z.cols(); }
  int m() const { return x.cols(); }
};

inline void validate_dataset(const Dataset& d) {
  const int t = d.t();
  if (d.family == ModelFamily::Arch) {
    if (d.z.cols() != 0) throw std::invalid_argument("Dataset: ARCH carries no Z columns");
    if (d.k_lags < 1) throw std::invalid_argument("Dataset: ARCH needs k_lags >= 1");
  } else if (d.z.rows() != t) {
    throw std::invalid_argument("Dataset: Z row count mismatch");
  }
  if (d.x.rows() != t) throw std::invalid_argument("Dataset: X row count mismatch");
  if (t <= d.m() + d.k() + 1) throw std::invalid_argument("Dataset: too few observations");
  for (double v : d.y)
    if (!std::isfinite(v)) throw std::invalid_argument("Dataset: non-finite response");
  for (double v : d.z.data())
    if (!std::isfinite(v)) throw std::invalid_argument("Dataset: non-finite Z entry");
  for (double v : d.x.data())
    if (!std::isfinite(v)) throw std::invalid_argument("Dataset: non-finite X entry");
}

// Null-model fit. residuals are exactly y minus fitted values over the full
// sample; sigma2_hat averages squared residuals over [range_begin, range_end),
// the observations that enter the score sums.
struct RestrictedFit {
  Vec psi_hat;
  double sigma2_hat = 0.0;
  Vec residuals;
  int range_begin = 0;
  int range_end = 0;
};

// Score vector for the tested block and its variance estimate.
struct ScorePack {
  Vec u;
  SymMatrix g;
  ModelFamily family = ModelFamily::Linear;
  int t = 0;
  int k = 0;
};

namespace detail {

inline void cross_products(const Matrix& design, const Vec& y, Matrix& xtx, Vec& xty) {
  const int n = design.rows(), p = design.cols();
  xtx = Matrix(p, p);
  xty.assign(p, 0.0);
  for (int i = 0; i < n; ++i) {
    const double* row = design.row_ptr(i);
    const double yi = y[i];
    for (int a = 0; a < p; ++a) {
      xty[a] += row[a] * yi;
      for (int b = a; b < p; ++b) xtx(a, b) += row[a] * row[b];
    }
  }
  for (int a = 0; a < p; ++a)
    for (int b = 0; b < a; ++b) xtx(a, b) = xtx(b, a);
}

// OLS via normal equations; NotPositiveDefinite propagates to the caller,
// which maps it to the error type its contract names.
inline Vec ols(const Matrix& design, const Vec& y) {
  Matrix xtx;
  Vec xty;
  cross_products(design, y, xtx, xty);
  return solve_pd(SymMatrix(std::move(xtx)), xty);
}

inline Matrix concat_cols(const Matrix& a, const Matrix& b) {
  const int n = std::max(a.rows(), b.rows());
  Matrix out(n, a.cols() + b.cols());
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < a.cols(); ++j) out(i, j) = a(i, j);
    for (int j = 0; j < b.cols(); ++j) out(i, a.cols() + j) = b(i, j);
  }
  return out;
}

}  // namespace detail

// Estimate the model with the tested block pinned at zero.
//   Linear      - OLS of y on X alone.
//   Arch        - OLS of y on X; sigma2_hat is the mean squared residual over
//                 the lag-complete range [k_lags, T).
//   RandomCoef  - OLS of y on (Z, X): the mean coefficients stay free under
//                 the null, only the coefficient variances are pinned.
inline RestrictedFit fit_restricted(const Dataset& data) {
  validate_dataset(data);
  RestrictedFit fit;
  const int t = data.t();
  const Matrix* design = &data.x;
  Matrix zx;
  if (data.family == ModelFamily::RandomCoef) {
    zx = detail::concat_cols(data.z, data.x);
    design = &zx;
  }
  try {
    fit.psi_hat = detail::ols(*design, data.y);
  } catch (const NotPositiveDefinite& e) {
    throw RankDeficient(std::string("fit_restricted: collinear design (") + e.what() + ")");
  }

  fit.residuals.resize(t);
  for (int i = 0; i < t; ++i) {
    const double* row = design->row_ptr(i);
    double fitted = 0.0;
    for (size_t j = 0; j < fit.psi_hat.size(); ++j) fitted += row[j] * fit.psi_hat[j];
    fit.residuals[i] = data.y[i] - fitted;
  }

  fit.range_begin = data.family == ModelFamily::Arch ? data.k_lags : 0;
  fit.range_end = t;
  double ss = 0.0;
  for (int i = fit.range_begin; i < fit.range_end; ++i) ss += fit.residuals[i] * fit.residuals[i];
  fit.sigma2_hat = ss / (fit.range_end - fit.range_begin);

  double yms = 0.0;
  for (double v : data.y) yms += v * v;
  yms /= t;
  if (fit.sigma2_hat <= 1e-12 * yms)
    throw DegenerateVariance("fit_restricted: residual variance " +
                             std::to_string(fit.sigma2_hat) + " is degenerate");
  return fit;
}

namespace detail {

// Score machinery shared by the variance-type families: regress c_n on the
// regressor rows w_n (tested block first, intercept last); the slope block is
// the score vector. Its variance estimate is kappa (sum ww')^{-1} with kappa
// the mean of c_n^2 - a scalar fourth-moment studentization, valid under
// excess error kurtosis.
struct QuadraticScore {
  Vec u;
  SymMatrix g;
};

inline QuadraticScore quadratic_score(const Matrix& w, const Vec& c, int k) {
  const int n = w.rows(), p = w.cols();
  Matrix a(p, p);
  Vec s(p, 0.0);
  double kappa = 0.0;
  for (int i = 0; i < n; ++i) {
    const double* row = w.row_ptr(i);
    const double ci = c[i];
    kappa += ci * ci;
    for (int x = 0; x < p; ++x) {
      s[x] += ci * row[x];
      for (int y = x; y < p; ++y) a(x, y) += row[x] * row[y];
    }
  }
  kappa /= n;
  for (int x = 0; x < p; ++x)
    for (int y = 0; y < x; ++y) a(x, y) = a(y, x);

  SymMatrix asym;
  CholFactor af;
  try {
    asym = SymMatrix(std::move(a));
    af = cholesky(asym);
  } catch (const NotPositiveDefinite& e) {
    throw SingularCovariance(std::string("score_pack: singular regressor cross-product (") +
                             e.what() + ")");
  } catch (const std::invalid_argument& e) {
    throw SingularCovariance(std::string("score_pack: invalid cross-product (") + e.what() + ")");
  }

  const Vec u_full = solve_chol(af, s);
  const SymMatrix ainv = inverse_pd(asym);

  QuadraticScore out;
  out.u.assign(u_full.begin(), u_full.begin() + k);
  Matrix gk(k, k);
  for (int i = 0; i < k; ++i)
    for (int j = 0; j < k; ++j) gk(i, j) = kappa * ainv(i, j);
  try {
    out.g = SymMatrix(std::move(gk));
    (void)cholesky(out.g);
  } catch (const NotPositiveDefinite& e) {
    throw SingularCovariance(std::string("score_pack: score variance not PD (") + e.what() + ")");
  } catch (const std::invalid_argument& e) {
    throw SingularCovariance(std::string("score_pack: invalid score variance (") + e.what() + ")");
  }
  return out;
}

}  // namespace detail

// Score vector for the tested block evaluated at the restricted fit, with its
// finite-sample covariance estimate.
//   Linear      - with D = (Z, X): U is the leading block of (D'D)^{-1} D' e
//                 (e the restricted residuals) and G = sigma2 [(D'D)^{-1}]_kk.
//   Arch        - squared residuals regressed on an intercept and their k
//                 lags; slope block, kurtosis-studentized.
//   RandomCoef  - same with regressors (z_1^2, ..., z_k^2, 1).
inline ScorePack score_pack(const Dataset& data, const RestrictedFit& fit) {
  if (static_cast<int>(fit.residuals.size()) != data.t())
    throw std::invalid_argument("score_pack: fit does not match data");
  const int t = data.t();
  const int k = data.k();
  ScorePack pack;
  pack.family = data.family;
  pack.t = t;
  pack.k = k;

  if (data.family == ModelFamily::Linear) {
    const Matrix d = detail::concat_cols(data.z, data.x);
    const int p = d.cols();
    Matrix dtd;
    Vec dte;
    detail::cross_products(d, fit.residuals, dtd, dte);
    SymMatrix dtd_sym;
    CholFactor f;
    try {
      dtd_sym = SymMatrix(std::move(dtd));
      f = cholesky(dtd_sym);
    } catch (const NotPositiveDefinite& e) {
      throw SingularCovariance(std::string("score_pack: D'D not PD (") + e.what() + ")");
    }
    const Vec u_full = solve_chol(f, dte);
    pack.u.assign(u_full.begin(), u_full.begin() + k);

    const SymMatrix cinv = inverse_pd(dtd_sym);
    Matrix gk(k, k);
    for (int i = 0; i < k; ++i)
      for (int j = 0; j < k; ++j) gk(i, j) = fit.sigma2_hat * cinv(i, j);
    pack.g = SymMatrix(std::move(gk));
    (void)p;
    return pack;
  }

  if (data.family == ModelFamily::Arch) {
    const int n = t - data.k_lags;
    Matrix w(n, k + 1);
    Vec c(n);
    Vec eps2(t);
    for (int i = 0; i < t; ++i) eps2[i] = fit.residuals[i] * fit.residuals[i];
    for (int r = 0; r < n; ++r) {
      const int row = data.k_lags + r;
      for (int j = 0; j < k; ++j) w(r, j) = eps2[row - 1 - j];
      w(r, k) = 1.0;
      c[r] = eps2[row] - fit.sigma2_hat;
    }
    auto qs = detail::quadratic_score(w, c, k);
    pack.u = std::move(qs.u);
    pack.g = std::move(qs.g);
    return pack;
  }

  // RandomCoef
  Matrix w(t, k + 1);
  Vec c(t);
  for (int i = 0; i < t; ++i) {
    for (int j = 0; j < k; ++j) w(i, j) = data.z(i, j) * data.z(i, j);
    w(i, k) = 1.0;
    c[i] = fit.residuals[i] * fit.residuals[i] - fit.sigma2_hat;
  }
  auto qs = detail::quadratic_score(w, c, k);
  pack.u = std::move(qs.u);
  pack.g = std::move(qs.g);
  return pack;
}

// Resample the null model: shocks are drawn i.i.d. with replacement from the
// centered residuals and added back onto the restricted systematic part.
// Covariates carry over unchanged, so the bootstrap world satisfies the null
// by construction.
inline Dataset bootstrap_dataset(const Dataset& data, const RestrictedFit& fit,
                                 RngStream& rng) {
  const int t = data.t();
  double mean = std::accumulate(fit.residuals.begin(), fit.residuals.end(), 0.0) / t;
  Dataset out;
  out.z = data.z;
  out.x = data.x;
  out.family = data.family;
  out.k_lags = data.k_lags;
  out.y.resize(t);
  for (int i = 0; i < t; ++i) {
    const double fitted = data.y[i] - fit.residuals[i];
    const double shock = fit.residuals[rng.uniform_index(t)] - mean;
    out.y[i] = fitted + shock;
  }
  return out;
}

}  // namespace minp
