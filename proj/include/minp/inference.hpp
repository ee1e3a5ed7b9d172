#pragma once

#include <algorithm>
#include <functional>
#include <numeric>
#include <optional>
#include <string>

#include "minp/cone.hpp"
#include "minp/models.hpp"
#include "minp/parallel.hpp"

namespace minp {

// Observed test statistics: the cone-projection statistic, the one-sided
// joint t along the maximin direction, and the componentwise standardized
// scores t_i = U_i / sqrt(G_ii).
struct StatVector {
  double t_c = 0.0;
  double t_t = 0.0;
  Vec t_i;
  ConeProjection projection;
  MaximinDirection direction;
};

inline StatVector compute_stats(const ScorePack& pack) {
  StatVector s;
  s.projection = project_orthant(pack.u, pack.g);
  s.t_c = s.projection.t_c;
  s.direction = maximin_direction(pack.g);
  const SymMatrix ginv = inverse_pd(pack.g);
  const int k = pack.k;
  double tt = 0.0;
  for (int i = 0; i < k; ++i) {
    double gi = 0.0;
    for (int j = 0; j < k; ++j) gi += ginv(i, j) * pack.u[j];
    tt += s.direction.d[i] * gi;
  }
  s.t_t = tt;
  s.t_i.resize(k);
  for (int i = 0; i < k; ++i) s.t_i[i] = pack.u[i] / std::sqrt(pack.g(i, i));
  return s;
}

enum class MinPVariant { S, SC, ST };

inline const char* variant_name(MinPVariant v) {
  switch (v) {
    case MinPVariant::S: return "s";
    case MinPVariant::SC: return "sc";
    case MinPVariant::ST: return "st";
  }
  return "?";
}

// B bootstrap rows of statistics (columns: t_c, t_t, t_1..t_k) plus the
// within-pool rank p-values. Rank counts are self-inclusive, so every pool
// p-value has floor 1/B; all critical values are read off this one pool.
struct BootstrapPool {
  int b = 0;
  int k = 0;
  Matrix stats;
  Matrix pool_pvalues;
  long redraws = 0;

  static constexpr int kColTc = 0;
  static constexpr int kColTt = 1;
  static int col_of_hypothesis(int i) { return 2 + i; }

  Vec column(int j) const {
    Vec out(b);
    for (int r = 0; r < b; ++r) out[r] = stats(r, j);
    return out;
  }
};

namespace detail {

inline void fill_pool_pvalues(BootstrapPool& pool) {
  const int b = pool.b;
  const int ncol = pool.k + 2;
  pool.pool_pvalues = Matrix(b, ncol);
  Vec sorted(b);
  for (int j = 0; j < ncol; ++j) {
    for (int r = 0; r < b; ++r) sorted[r] = pool.stats(r, j);
    std::sort(sorted.begin(), sorted.end());
    for (int r = 0; r < b; ++r) {
      const double v = pool.stats(r, j);
      const auto lo = std::lower_bound(sorted.begin(), sorted.end(), v);
      pool.pool_pvalues(r, j) =
          static_cast<double>(b - (lo - sorted.begin())) / b;
    }
  }
}

inline BootstrapPool pool_from_stats(Matrix stats, int k) {
  BootstrapPool pool;
  pool.b = stats.rows();
  pool.k = k;
  pool.stats = std::move(stats);
  fill_pool_pvalues(pool);
  return pool;
}

}  // namespace detail

// Resample B null-model samples, refit and recompute the statistics on each,
// then rank every statistic within its own column. Draw b always uses the
// substream keyed by b (and by attempt, when a singular resample forces a
// redraw), so the pool is identical for any worker count.
inline BootstrapPool build_pool(const Dataset& data, const RestrictedFit& fit, int b,
                                const RngStream& rng, int workers = 1) {
  if (b < 99) throw std::invalid_argument("build_pool: B below 99");
  const int k = data.k();
  BootstrapPool pool;
  pool.b = b;
  pool.k = k;
  pool.stats = Matrix(b, k + 2);
  std::vector<int> failures(b, 0);
  std::vector<char> filled(b, 0);

  parallel_for(b, workers, [&](long draw) {
    const RngStream base = rng.substream(static_cast<uint64_t>(draw));
    for (int attempt = 0; attempt < 3; ++attempt) {
      RngStream stream = base.substream(static_cast<uint64_t>(attempt));
      try {
        const Dataset bs = bootstrap_dataset(data, fit, stream);
        const RestrictedFit refit = fit_restricted(bs);
        const ScorePack pack = score_pack(bs, refit);
        const StatVector st = compute_stats(pack);
        pool.stats(draw, 0) = st.t_c;
        pool.stats(draw, 1) = st.t_t;
        for (int i = 0; i < k; ++i) pool.stats(draw, 2 + i) = st.t_i[i];
        filled[draw] = 1;
        return;
      } catch (const NumericError&) {
        ++failures[draw];
      }
    }
  });

  long failed_draws = 0;
  long redraws = 0;
  bool unfilled = false;
  for (int i = 0; i < b; ++i) {
    if (failures[i] > 0) ++failed_draws;
    redraws += failures[i];
    if (!filled[i]) unfilled = true;
  }
  pool.redraws = redraws;
  if (unfilled || failed_draws > b / 100)
    throw BootstrapDegenerate("build_pool: " + std::to_string(failed_draws) + " of " +
                              std::to_string(b) + " draws degenerate (" +
                              std::to_string(redraws) + " redraws)");
  detail::fill_pool_pvalues(pool);
  return pool;
}

// Upper-tail rank p-value of an observed statistic against a pool column.
// All statistics here reject for large values.
inline double rank_pvalue(const Vec& pool_column, double observed) {
  if (pool_column.empty()) throw std::invalid_argument("rank_pvalue: empty pool");
  long count = 0;
  for (double v : pool_column)
    if (v >= observed) ++count;
  return static_cast<double>(count) / pool_column.size();
}

// Minimum of the admitted p-values. Variant S admits the individual
// p-values only; SC and ST prepend a global p-value.
inline double minp_stat(std::optional<double> p_g, const Vec& p_i, MinPVariant variant) {
  if (p_i.empty()) throw std::invalid_argument("minp_stat: no individual p-values");
  if (variant == MinPVariant::S) {
    if (p_g.has_value()) throw ArityMismatch("minp_stat: variant s admits no global p-value");
  } else if (!p_g.has_value()) {
    throw ArityMismatch("minp_stat: variants sc/st require a global p-value");
  }
  double m = *std::min_element(p_i.begin(), p_i.end());
  if (p_g.has_value()) m = std::min(m, *p_g);
  return m;
}

namespace detail {

// floor(alpha * b) with a one-ulp guard so exact multiples do not round down
inline long quantile_index(double alpha, int b) {
  return static_cast<long>(std::floor(alpha * b + 1e-9));
}

inline double minima_quantile(const BootstrapPool& pool, const std::vector<int>& columns,
                              double alpha) {
  const long m = quantile_index(alpha, pool.b);
  if (m <= 0) return 0.0;
  Vec minima(pool.b);
  for (int r = 0; r < pool.b; ++r) {
    double v = pool.pool_pvalues(r, columns[0]);
    for (size_t c = 1; c < columns.size(); ++c)
      v = std::min(v, pool.pool_pvalues(r, columns[c]));
    minima[r] = v;
  }
  std::nth_element(minima.begin(), minima.begin() + (m - 1), minima.end());
  return minima[m - 1];
}

}  // namespace detail

// alpha-quantile of the per-draw minima of pool p-values over a hypothesis
// subset. The left-continuous order statistic keeps the finite-sample level
// at or below alpha; index 0 means the test can never reject.
inline double critical_value(const BootstrapPool& pool, const std::vector<int>& subset,
                             double alpha) {
  if (subset.empty()) throw std::invalid_argument("critical_value: empty subset");
  if (!(alpha > 0.0 && alpha < 1.0)) throw std::invalid_argument("critical_value: bad alpha");
  std::vector<int> cols;
  cols.reserve(subset.size());
  for (int i : subset) {
    if (i < 0 || i >= pool.k) throw std::invalid_argument("critical_value: index out of range");
    cols.push_back(BootstrapPool::col_of_hypothesis(i));
  }
  return detail::minima_quantile(pool, cols, alpha);
}

// Global-variant critical value: the admitted set is every individual column,
// plus the matching global column for SC/ST.
inline double global_critical_value(const BootstrapPool& pool, MinPVariant variant,
                                    double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0))
    throw std::invalid_argument("global_critical_value: bad alpha");
  std::vector<int> cols;
  if (variant == MinPVariant::SC) cols.push_back(BootstrapPool::kColTc);
  if (variant == MinPVariant::ST) cols.push_back(BootstrapPool::kColTt);
  for (int i = 0; i < pool.k; ++i) cols.push_back(BootstrapPool::col_of_hypothesis(i));
  return detail::minima_quantile(pool, cols, alpha);
}

struct GlobalTestResult {
  double p_m = 1.0;
  double c_m = 0.0;
  bool reject = false;
  double p_c = 1.0;
  double p_t = 1.0;
  Vec p_i;
};

namespace detail {

// A zero critical value encodes "never reject" (quantile index underflow).
inline bool rejects(double p, double c) { return c > 0.0 && p <= c; }

}  // namespace detail

inline GlobalTestResult global_test(const BootstrapPool& pool, const StatVector& observed,
                                    MinPVariant variant, double alpha) {
  if (static_cast<int>(observed.t_i.size()) != pool.k)
    throw std::invalid_argument("global_test: k mismatch between pool and observed");
  GlobalTestResult r;
  r.p_c = rank_pvalue(pool.column(BootstrapPool::kColTc), observed.t_c);
  r.p_t = rank_pvalue(pool.column(BootstrapPool::kColTt), observed.t_t);
  r.p_i.resize(pool.k);
  for (int i = 0; i < pool.k; ++i)
    r.p_i[i] = rank_pvalue(pool.column(BootstrapPool::col_of_hypothesis(i)), observed.t_i[i]);
  std::optional<double> p_g;
  if (variant == MinPVariant::SC) p_g = r.p_c;
  if (variant == MinPVariant::ST) p_g = r.p_t;
  r.p_m = minp_stat(p_g, r.p_i, variant);
  r.c_m = global_critical_value(pool, variant, alpha);
  r.reject = detail::rejects(r.p_m, r.c_m);
  return r;
}

struct StepdownStep {
  int hypothesis = -1;
  double p_value = 1.0;
  double critical_value = 0.0;
  bool reject = false;
};

struct StepdownResult {
  std::vector<int> order;           // hypotheses sorted by ascending p-value
  std::vector<StepdownStep> steps;  // recorded walk; empty when the global test accepts
  std::vector<int> k_hat;           // rejected hypotheses, ascending
};

// Core stepdown walk, separated from the pool so the recursion can be
// hand-traced in tests. The first gate uses the global critical value; each
// later step recomputes the critical value over the not-yet-rejected set and
// the walk stops at the first acceptance.
inline StepdownResult stepdown_walk(
    const Vec& pvalues, bool global_reject, double c_global,
    const std::function<double(const std::vector<int>&)>& subset_cv) {
  const int k = static_cast<int>(pvalues.size());
  StepdownResult r;
  r.order.resize(k);
  std::iota(r.order.begin(), r.order.end(), 0);
  std::stable_sort(r.order.begin(), r.order.end(),
                   [&](int a, int b) { return pvalues[a] < pvalues[b]; });
  if (!global_reject) return r;
  for (int pos = 0; pos < k; ++pos) {
    const int hyp = r.order[pos];
    double c;
    if (pos == 0) {
      c = c_global;
    } else {
      std::vector<int> remaining(r.order.begin() + pos, r.order.end());
      c = subset_cv(remaining);
    }
    StepdownStep step;
    step.hypothesis = hyp;
    step.p_value = pvalues[hyp];
    step.critical_value = c;
    step.reject = detail::rejects(step.p_value, c);
    r.steps.push_back(step);
    if (!step.reject) break;
    r.k_hat.push_back(hyp);
  }
  std::sort(r.k_hat.begin(), r.k_hat.end());
  return r;
}

inline StepdownResult stepdown(const BootstrapPool& pool, const GlobalTestResult& global,
                               MinPVariant /*variant*/, double alpha) {
  return stepdown_walk(
      global.p_i, global.reject, global.c_m,
      [&](const std::vector<int>& subset) { return critical_value(pool, subset, alpha); });
}

}  // namespace minp
