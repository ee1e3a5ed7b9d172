#pragma once

#include <algorithm>
#include <cstdint>
#include <vector>

#include "minp/linalg.hpp"
#include "minp/parallel.hpp"
#include "minp/special.hpp"

namespace minp {

// Weighted projection of a point onto the non-negative orthant:
// u_bar minimizes (U - u)' G^{-1} (U - u) over u >= 0, and t_c is the
// quadratic form of the projection.
struct ConeProjection {
  Vec u_bar;
  double t_c = 0.0;
  std::vector<int> active_set;  // indices with u_bar_i = 0
  Vec multipliers;              // G^{-1} (u_bar - U)
};

// One-sided joint t direction: d maximizes, over the shell
// {d >= 0, d' G^{-1} d = 1}, the minimum of d' G^{-1} gamma across the
// orthant's standardized extreme rays gamma^(i) = e_i / sqrt((G^{-1})_ii).
struct MaximinDirection {
  Vec d;
  double attained_min = 0.0;
  bool constraint_ok = true;  // whether G^{-1} d >= 0 holds
};

struct ChiBarWeights {
  Vec w;  // w[i] = probability the orthant projection has exactly i positive components
};

namespace detail {

// Scratch buffers for the active-set solver so hot loops stay allocation-free.
struct OrthantWorkspace {
  Vec g, w, u, z, sub, rhs;
  std::vector<int> free_idx;
  std::vector<char> in_free;
  void resize(int k) {
    g.resize(k);
    w.resize(k);
    u.resize(k);
    z.resize(k);
    sub.resize(static_cast<size_t>(k) * k);
    rhs.resize(k);
    free_idx.clear();
    free_idx.reserve(k);
    in_free.assign(k, 0);
  }
};

// In-place Cholesky solve of an n x n system held in `a` (row-major,
// lower triangle used), rhs in `b`. Returns false on a non-positive pivot.
inline bool chol_solve_inplace(double* a, double* b, int n) {
  for (int j = 0; j < n; ++j) {
    double d = a[j * n + j];
    for (int t = 0; t < j; ++t) d -= a[j * n + t] * a[j * n + t];
    if (!(d > 0.0)) return false;
    const double ljj = std::sqrt(d);
    a[j * n + j] = ljj;
    for (int i = j + 1; i < n; ++i) {
      double s = a[i * n + j];
      for (int t = 0; t < j; ++t) s -= a[i * n + t] * a[j * n + t];
      a[i * n + j] = s / ljj;
    }
  }
  for (int i = 0; i < n; ++i) {
    double s = b[i];
    for (int j = 0; j < i; ++j) s -= a[i * n + j] * b[j];
    b[i] = s / a[i * n + i];
  }
  for (int i = n - 1; i >= 0; --i) {
    double s = b[i];
    for (int j = i + 1; j < n; ++j) s -= a[j * n + i] * b[j];
    b[i] = s / a[i * n + i];
  }
  return true;
}

// Lawson-Hanson active-set pass for min_{u>=0} (U-u)' Ginv (U-u), written
// against the normal equations in the Ginv metric: on the free set F the
// optimum solves Ginv_FF u_F = (Ginv U)_F. Terminates exactly; the iteration
// cap (3k outer additions) marks an internal bug, not a tuning knob.
inline void nnls_orthant(const Matrix& ginv, const double* uvec, int k,
                         OrthantWorkspace& ws) {
  ws.resize(k);
  double gscale = 0.0;
  for (int i = 0; i < k; ++i) {
    double s = 0.0;
    for (int j = 0; j < k; ++j) s += ginv(i, j) * uvec[j];
    ws.g[i] = s;
    gscale = std::max(gscale, std::fabs(s));
  }
  const double tol = 1e-10 * std::max(gscale, 1e-300);
  std::fill(ws.u.begin(), ws.u.end(), 0.0);
  ws.w = ws.g;

  int additions = 0;
  for (;;) {
    int enter = -1;
    double wmax = tol;
    for (int i = 0; i < k; ++i)
      if (!ws.in_free[i] && ws.w[i] > wmax) {
        wmax = ws.w[i];
        enter = i;
      }
    if (enter < 0) break;
    if (++additions > 3 * k)
      throw NonConvergence("orthant projection: active-set loop exceeded 3k iterations");
    ws.in_free[enter] = 1;
    ws.free_idx.push_back(enter);

    for (;;) {
      const int nf = static_cast<int>(ws.free_idx.size());
      for (int a = 0; a < nf; ++a) {
        const int ia = ws.free_idx[a];
        for (int b = 0; b < nf; ++b) ws.sub[a * nf + b] = ginv(ia, ws.free_idx[b]);
        ws.rhs[a] = ws.g[ia];
      }
      if (!chol_solve_inplace(ws.sub.data(), ws.rhs.data(), nf))
        throw NotPositiveDefinite("orthant projection: singular free-set system");
      bool interior = true;
      for (int a = 0; a < nf; ++a)
        if (!(ws.rhs[a] > 0.0)) {
          interior = false;
          break;
        }
      if (interior) {
        std::fill(ws.u.begin(), ws.u.end(), 0.0);
        for (int a = 0; a < nf; ++a) ws.u[ws.free_idx[a]] = ws.rhs[a];
        break;
      }
      double alpha = 1.0;
      int blocker = -1;
      for (int a = 0; a < nf; ++a)
        if (ws.rhs[a] <= 0.0) {
          const double ui = ws.u[ws.free_idx[a]];
          const double ratio = ui / (ui - ws.rhs[a]);
          if (ratio < alpha) {
            alpha = ratio;
            blocker = a;
          }
        }
      double umax = 0.0;
      for (int a = 0; a < nf; ++a) {
        const int ia = ws.free_idx[a];
        ws.u[ia] += alpha * (ws.rhs[a] - ws.u[ia]);
        umax = std::max(umax, ws.u[ia]);
      }
      // drop the blocking coordinate (exactly zero in exact arithmetic)
      // and any others the step drove to the boundary
      for (int a = nf - 1; a >= 0; --a) {
        const int ia = ws.free_idx[a];
        if (ws.rhs[a] <= 0.0 && (a == blocker || ws.u[ia] <= 1e-10 * umax + 1e-300)) {
          ws.u[ia] = 0.0;
          ws.in_free[ia] = 0;
          ws.free_idx.erase(ws.free_idx.begin() + a);
        }
      }
    }
    for (int i = 0; i < k; ++i) {
      double s = ws.g[i];
      for (int j = 0; j < k; ++j) s -= ginv(i, j) * ws.u[j];
      ws.w[i] = s;
    }
  }
}

// Number of strictly positive components of the orthant projection of z.
// k <= 2 has a closed-form case split; larger k runs the generic solver.
inline int orthant_positive_count(const Matrix& ginv, const double* z, int k,
                                  OrthantWorkspace& ws) {
  if (k == 1) return z[0] > 0.0 ? 1 : 0;
  if (k == 2) {
    const double z1 = z[0], z2 = z[1];
    if (z1 >= 0.0 && z2 >= 0.0) return (z1 > 0.0) + (z2 > 0.0);
    const double a = ginv(0, 0), b = ginv(0, 1), c = ginv(1, 1);
    const double g1 = a * z1 + b * z2;
    const double g2 = b * z1 + c * z2;
    if (g1 <= 0.0 && g2 <= 0.0) return 0;
    const double u1 = g1 / a;
    if (u1 > 0.0 && g2 - b * u1 <= 0.0) return 1;
    return g2 / c > 0.0 ? 1 : 0;
  }
  nnls_orthant(ginv, z, k, ws);
  int n = 0;
  for (int i = 0; i < k; ++i)
    if (ws.u[i] > 0.0) ++n;
  return n;
}

// Projected gradient ascent on {d >= 0, Ginv d >= 0, d' Ginv d = 1} for the
// maximin objective, used to repair a direction that violates Ginv d >= 0.
// 200 iterations with step halving starting from d0.
inline Vec refine_direction(const Matrix& ginv, const Vec& d0) {
  const int k = static_cast<int>(d0.size());
  Vec inv_sqrt_diag(k);
  for (int i = 0; i < k; ++i) inv_sqrt_diag[i] = 1.0 / std::sqrt(ginv(i, i));
  auto ginv_times = [&](const Vec& d, Vec& out) {
    for (int i = 0; i < k; ++i) {
      double s = 0.0;
      for (int j = 0; j < k; ++j) s += ginv(i, j) * d[j];
      out[i] = s;
    }
  };
  auto normalize = [&](Vec& d, Vec& gd) {
    ginv_times(d, gd);
    double q = 0.0;
    for (int i = 0; i < k; ++i) q += d[i] * gd[i];
    const double s = 1.0 / std::sqrt(q);
    for (int i = 0; i < k; ++i) {
      d[i] *= s;
      gd[i] *= s;
    }
  };
  auto objective = [&](const Vec& gd) {
    double m = gd[0] * inv_sqrt_diag[0];
    for (int i = 1; i < k; ++i) m = std::min(m, gd[i] * inv_sqrt_diag[i]);
    return m;
  };

  Vec d = d0, gd(k), cand(k), cand_gd(k);
  for (int i = 0; i < k; ++i) d[i] = std::max(d[i], 0.0);
  normalize(d, gd);
  double best = objective(gd);
  double eta = 0.5;
  for (int it = 0; it < 200; ++it) {
    int argmin = 0;
    double m = gd[0] * inv_sqrt_diag[0];
    for (int i = 1; i < k; ++i) {
      const double v = gd[i] * inv_sqrt_diag[i];
      if (v < m) {
        m = v;
        argmin = i;
      }
    }
    bool accepted = false;
    double step = eta;
    for (int half = 0; half < 20; ++half, step *= 0.5) {
      for (int i = 0; i < k; ++i)
        cand[i] = std::max(d[i] + step * ginv(argmin, i) * inv_sqrt_diag[argmin], 0.0);
      normalize(cand, cand_gd);
      bool feasible = true;
      for (int i = 0; i < k; ++i)
        if (cand_gd[i] < -1e-12) {
          feasible = false;
          break;
        }
      if (!feasible) continue;
      const double val = objective(cand_gd);
      if (val > best + 1e-15) {
        d = cand;
        gd = cand_gd;
        best = val;
        accepted = true;
        break;
      }
    }
    if (!accepted) eta *= 0.5;
    if (eta < 1e-14) break;
  }
  return d;
}

}  // namespace detail

inline ConeProjection project_orthant(const Vec& u, const SymMatrix& g) {
  const int k = static_cast<int>(u.size());
  if (k < 1 || g.dim() != k) throw std::invalid_argument("project_orthant: dimension mismatch");
  const SymMatrix ginv = inverse_pd(g);
  detail::OrthantWorkspace ws;
  detail::nnls_orthant(ginv.mat(), u.data(), k, ws);

  ConeProjection out;
  out.u_bar = ws.u;
  out.multipliers.resize(k);
  double tc = 0.0;
  for (int i = 0; i < k; ++i) {
    double row = 0.0;
    for (int j = 0; j < k; ++j) row += ginv(i, j) * (out.u_bar[j] - u[j]);
    out.multipliers[i] = row;
    if (out.u_bar[i] == 0.0) out.active_set.push_back(i);
  }
  for (int i = 0; i < k; ++i) {
    double s = 0.0;
    for (int j = 0; j < k; ++j) s += ginv(i, j) * out.u_bar[j];
    tc += out.u_bar[i] * s;
  }
  out.t_c = tc;
  return out;
}

// Maximin direction by the minimum-norm point of the convex hull of the
// whitened unit rays. Their Gram matrix is exactly the correlation matrix of
// G^{-1}, so hull faces are enumerated directly on it (2^k - 1 subsets): the
// face whose affine minimizer has non-negative barycentric weights and the
// smallest norm carries the minimum-norm point, and the direction is the
// matching non-negative combination of the standardized rays.
inline MaximinDirection maximin_direction(const SymMatrix& g) {
  const int k = g.dim();
  const SymMatrix ginv = inverse_pd(g);
  Vec sqrt_diag(k);
  for (int i = 0; i < k; ++i) sqrt_diag[i] = std::sqrt(ginv(i, i));

  Matrix corr(k, k);
  for (int i = 0; i < k; ++i)
    for (int j = 0; j < k; ++j) corr(i, j) = ginv(i, j) / (sqrt_diag[i] * sqrt_diag[j]);

  double best_norm2 = std::numeric_limits<double>::infinity();
  Vec best_lambda(k, 0.0);
  std::vector<int> idx;
  Vec sub, rhs;
  for (uint32_t mask = 1; mask < (1u << k); ++mask) {
    idx.clear();
    for (int i = 0; i < k; ++i)
      if (mask & (1u << i)) idx.push_back(i);
    const int n = static_cast<int>(idx.size());
    sub.assign(static_cast<size_t>(n) * n, 0.0);
    rhs.assign(n, 1.0);
    for (int a = 0; a < n; ++a)
      for (int b = 0; b < n; ++b) sub[a * n + b] = corr(idx[a], idx[b]);
    if (!detail::chol_solve_inplace(sub.data(), rhs.data(), n)) continue;
    double total = 0.0;
    for (int a = 0; a < n; ++a) total += rhs[a];
    if (!(total > 0.0)) continue;
    bool feasible = true;
    for (int a = 0; a < n; ++a)
      if (rhs[a] < -1e-12 * total) {
        feasible = false;
        break;
      }
    if (!feasible) continue;
    const double norm2 = 1.0 / total;  // lambda' M lambda at lambda = rhs / total
    if (norm2 < best_norm2) {
      best_norm2 = norm2;
      std::fill(best_lambda.begin(), best_lambda.end(), 0.0);
      for (int a = 0; a < n; ++a) best_lambda[idx[a]] = rhs[a] / total;
    }
  }
  if (!std::isfinite(best_norm2))
    throw NonConvergence("maximin_direction: no feasible hull face");

  const double mnorm = std::sqrt(best_norm2);
  MaximinDirection out;
  out.d.resize(k);
  for (int i = 0; i < k; ++i) out.d[i] = best_lambda[i] / (sqrt_diag[i] * mnorm);

  Vec gd(k);
  double attained = std::numeric_limits<double>::infinity();
  double gd_scale = 0.0;
  for (int i = 0; i < k; ++i) {
    double s = 0.0;
    for (int j = 0; j < k; ++j) s += ginv(i, j) * out.d[j];
    gd[i] = s;
    gd_scale = std::max(gd_scale, std::fabs(s));
    attained = std::min(attained, s / sqrt_diag[i]);
  }
  out.attained_min = attained;
  out.constraint_ok = true;
  for (int i = 0; i < k; ++i)
    if (gd[i] < -1e-8 * std::max(gd_scale, 1.0)) out.constraint_ok = false;

  if (!out.constraint_ok) {
    out.d = detail::refine_direction(ginv.mat(), out.d);
    attained = std::numeric_limits<double>::infinity();
    for (int i = 0; i < k; ++i) {
      double s = 0.0;
      for (int j = 0; j < k; ++j) s += ginv(i, j) * out.d[j];
      attained = std::min(attained, s / sqrt_diag[i]);
    }
    out.attained_min = attained;
  }
  return out;
}

// Monte Carlo level probabilities: w_i is the frequency with which the
// orthant projection of Z ~ N(0, G) has exactly i strictly positive
// components. Draws are chunked with one substream per chunk, so the result
// depends only on (seed, n_draws), not on the worker count.
inline ChiBarWeights chibar_weights(const SymMatrix& g, long n_draws,
                                    const RngStream& rng, int workers = 1) {
  if (n_draws < 10000) throw std::invalid_argument("chibar_weights: n_draws below 1e4");
  const int k = g.dim();
  const CholFactor chol = cholesky(g);
  const SymMatrix ginv = inverse_pd(g);

  constexpr long kChunk = 65536;
  const long nchunks = (n_draws + kChunk - 1) / kChunk;
  std::vector<std::vector<long>> chunk_counts(nchunks);

  parallel_for(nchunks, workers, [&](long c) {
    std::vector<long> counts(k + 1, 0);
    RngStream stream = rng.substream(static_cast<uint64_t>(c));
    detail::OrthantWorkspace ws;
    Vec z(k), x(k);
    const long lo = c * kChunk;
    const long hi = std::min(n_draws, lo + kChunk);
    for (long t = lo; t < hi; ++t) {
      for (int i = 0; i < k; ++i) z[i] = stream.normal();
      for (int i = 0; i < k; ++i) {
        const double* row = chol.lower.row_ptr(i);
        double s = 0.0;
        for (int j = 0; j <= i; ++j) s += row[j] * z[j];
        x[i] = s;
      }
      ++counts[detail::orthant_positive_count(ginv.mat(), x.data(), k, ws)];
    }
    chunk_counts[c] = std::move(counts);
  });

  ChiBarWeights out;
  out.w.assign(k + 1, 0.0);
  std::vector<long> total(k + 1, 0);
  for (const auto& counts : chunk_counts)
    for (int i = 0; i <= k; ++i) total[i] += counts[i];
  for (int i = 0; i <= k; ++i) out.w[i] = static_cast<double>(total[i]) / n_draws;
  return out;
}

// Tail probability of the chi-bar-squared mixture sum_i w_i chi^2_i, where
// the zero-dof component is a point mass at zero.
inline double chibar_survival(double t, const ChiBarWeights& w) {
  if (t < 0.0) throw std::domain_error("chibar_survival: negative statistic");
  double s = 0.0;
  for (size_t i = 0; i < w.w.size(); ++i)
    if (w.w[i] != 0.0) s += w.w[i] * chi_square_survival(static_cast<int>(i), t);
  return s;
}

}  // namespace minp
