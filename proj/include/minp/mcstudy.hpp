#pragma once

#include <chrono>
#include <cstdio>
#include <sstream>

#include "minp/inference.hpp"
#include "minp/special.hpp"

namespace minp {

enum class ErrorDist { Normal, StudentT };

// One simulation cell: a model family, sample size and true tested block,
// plus the nuisance constants of the data-generating process. Student-t
// errors are standardized to unit variance.
struct DgpSpec {
  ModelFamily family = ModelFamily::Linear;
  int t = 100;
  Vec gamma_true;
  ErrorDist error_dist = ErrorDist::Normal;
  int df = 5;
  double rho = 0.0;          // Linear: common covariate correlation
  bool local_scaling = false;  // divide gamma_true by sqrt(T)
  Vec beta{1.0, 1.0};
  double omega = 1.0;        // Arch baseline variance
  double sigma_eps2 = 1.0;   // RandomCoef shock variance
  Vec xi;                    // RandomCoef mean coefficients; default all-ones
  int burn_in = 1000;        // Arch recursion warmup

  int k() const { return static_cast<int>(gamma_true.size()); }
  Vec effective_gamma() const {
    Vec g = gamma_true;
    if (local_scaling)
      for (double& v : g) v /= std::sqrt(static_cast<double>(t));
    return g;
  }
};

inline void validate_dgp(const DgpSpec& spec) {
  const int k = spec.k();
  if (k < 1) throw ConfigInvalid("gamma_true", "needs at least one entry");
  for (double g : spec.gamma_true)
    if (!(g >= 0.0)) throw ConfigInvalid("gamma_true", "entries must be non-negative");
  if (spec.beta.size() != 2) throw ConfigInvalid("beta", "expects two entries (slope, intercept)");
  if (spec.t <= 2 + k + 1) throw ConfigInvalid("t", "sample size too small for the design");
  if (spec.error_dist == ErrorDist::StudentT && spec.df <= 2)
    throw ConfigInvalid("df", "needs df > 2 to standardize to unit variance");
  if (spec.family == ModelFamily::Linear) {
    if (!(spec.rho > -1.0 / k && spec.rho < 1.0))
      throw ConfigInvalid("rho", "must lie in (-1/k, 1)");
  }
  if (spec.family == ModelFamily::Arch) {
    if (spec.burn_in < 0) throw ConfigInvalid("burn_in", "must be non-negative");
    const Vec a = spec.effective_gamma();
    double s = 0.0;
    for (double v : a) s += v;
    if (s >= 1.0)
      throw ExplosiveVariance("arch lag coefficients sum to " + std::to_string(s));
  }
  if (spec.family == ModelFamily::RandomCoef) {
    if (!spec.xi.empty() && static_cast<int>(spec.xi.size()) != k)
      throw ConfigInvalid("xi", "length must match gamma_true");
    if (!(spec.sigma_eps2 > 0.0)) throw ConfigInvalid("sigma_eps2", "must be positive");
  }
  if (!(spec.omega > 0.0)) throw ConfigInvalid("omega", "must be positive");
}

namespace detail {

// unit-variance error draw
inline double draw_error(ErrorDist dist, int df, RngStream& rng) {
  if (dist == ErrorDist::Normal) return rng.normal();
  double chi2 = 0.0;
  for (int i = 0; i < df; ++i) {
    const double z = rng.normal();
    chi2 += z * z;
  }
  const double t = rng.normal() / std::sqrt(chi2 / df);
  return t / std::sqrt(static_cast<double>(df) / (df - 2));
}

}  // namespace detail

// Joint draw of (z_n, x_n^d) i.i.d. N(0, Sigma) with
// Sigma = (1-rho)^{-1} [I - rho (1 + k rho)^{-1} 1 1'], whose inverse is the
// equicorrelation matrix with unit diagonal and off-diagonals rho.
inline Dataset gen_linear(const DgpSpec& spec, RngStream& rng) {
  validate_dgp(spec);
  const int k = spec.k(), t = spec.t;
  const Vec gamma = spec.effective_gamma();

  Matrix sigma(k + 1, k + 1);
  const double c = spec.rho / (1.0 + k * spec.rho);
  for (int i = 0; i <= k; ++i)
    for (int j = 0; j <= k; ++j)
      sigma(i, j) = ((i == j ? 1.0 : 0.0) - c) / (1.0 - spec.rho);
  const CholFactor chol = cholesky(SymMatrix(std::move(sigma)));

  Dataset d;
  d.family = ModelFamily::Linear;
  d.y.resize(t);
  d.z = Matrix(t, k);
  d.x = Matrix(t, 2);
  for (int n = 0; n < t; ++n) {
    const Vec v = mvn_draw(chol, rng);
    for (int j = 0; j < k; ++j) d.z(n, j) = v[j];
    d.x(n, 0) = v[k];
    d.x(n, 1) = 1.0;
  }
  for (int n = 0; n < t; ++n) {
    double y = spec.beta[0] * d.x(n, 0) + spec.beta[1];
    for (int j = 0; j < k; ++j) y += gamma[j] * d.z(n, j);
    d.y[n] = y + detail::draw_error(spec.error_dist, spec.df, rng);
  }
  return d;
}

// AR(1) covariate x_n^d = 0.8 x_{n-1}^d + e_n with e_n ~ N(0,4); disturbances
// follow sigma_n^2 = omega + sum_j gamma_j eps_{n-j}^2 with a discarded
// warmup of burn_in steps.
inline Dataset gen_arch(const DgpSpec& spec, RngStream& rng) {
  validate_dgp(spec);
  const int k = spec.k(), t = spec.t;
  const Vec alpha = spec.effective_gamma();

  Dataset d;
  d.family = ModelFamily::Arch;
  d.k_lags = k;
  d.y.resize(t);
  d.x = Matrix(t, 2);
  d.x(0, 0) = std::sqrt(4.0 / (1.0 - 0.64)) * rng.normal();  // stationary start
  d.x(0, 1) = 1.0;
  for (int n = 1; n < t; ++n) {
    d.x(n, 0) = 0.8 * d.x(n - 1, 0) + 2.0 * rng.normal();
    d.x(n, 1) = 1.0;
  }

  const int total = spec.burn_in + t;
  Vec eps(total, 0.0);
  for (int n = 0; n < total; ++n) {
    double s2 = spec.omega;
    for (int j = 0; j < k; ++j)
      if (n - 1 - j >= 0) s2 += alpha[j] * eps[n - 1 - j] * eps[n - 1 - j];
    eps[n] = std::sqrt(s2) * detail::draw_error(spec.error_dist, spec.df, rng);
  }
  for (int n = 0; n < t; ++n)
    d.y[n] = spec.beta[0] * d.x(n, 0) + spec.beta[1] + eps[spec.burn_in + n];
  return d;
}

// x_n^d i.i.d. N(0,4); z_n multivariate normal with unit variances and 0.2
// equicorrelation; coefficients on z are xi + eta_n with
// eta_n ~ N(0, diag(gamma)).
inline Dataset gen_rc(const DgpSpec& spec, RngStream& rng) {
  validate_dgp(spec);
  const int k = spec.k(), t = spec.t;
  const Vec gamma = spec.effective_gamma();
  const Vec xi = spec.xi.empty() ? Vec(k, 1.0) : spec.xi;

  Matrix zcov(k, k);
  for (int i = 0; i < k; ++i)
    for (int j = 0; j < k; ++j) zcov(i, j) = (i == j) ? 1.0 : 0.2;
  const CholFactor zchol = cholesky(SymMatrix(std::move(zcov)));

  Vec eta_sd(k);
  for (int j = 0; j < k; ++j) eta_sd[j] = std::sqrt(gamma[j]);
  const double eps_sd = std::sqrt(spec.sigma_eps2);

  Dataset d;
  d.family = ModelFamily::RandomCoef;
  d.y.resize(t);
  d.z = Matrix(t, k);
  d.x = Matrix(t, 2);
  for (int n = 0; n < t; ++n) {
    d.x(n, 0) = 2.0 * rng.normal();
    d.x(n, 1) = 1.0;
    const Vec z = mvn_draw(zchol, rng);
    double y = spec.beta[0] * d.x(n, 0) + spec.beta[1];
    for (int j = 0; j < k; ++j) {
      d.z(n, j) = z[j];
      y += z[j] * (xi[j] + eta_sd[j] * rng.normal());
    }
    d.y[n] = y + eps_sd * detail::draw_error(spec.error_dist, spec.df, rng);
  }
  return d;
}

inline Dataset generate_dataset(const DgpSpec& spec, RngStream& rng) {
  switch (spec.family) {
    case ModelFamily::Linear: return gen_linear(spec, rng);
    case ModelFamily::Arch: return gen_arch(spec, rng);
    case ModelFamily::RandomCoef: return gen_rc(spec, rng);
  }
  throw std::invalid_argument("generate_dataset: unknown family");
}

// Classical reference tests with asymptotic critical values: the chi-bar
// test compares the projection statistic against a mixture with level
// probabilities estimated from the fitted covariance, and the one-sided t
// compares t_t against the standard normal upper-alpha quantile.
inline std::pair<bool, bool> reference_tests(const ScorePack& pack, const StatVector& stats,
                                             double alpha, const RngStream& rng) {
  const ChiBarWeights w = chibar_weights(pack.g, 100000, rng, 1);
  const bool chibar_reject = chibar_survival(stats.t_c, w) <= alpha;
  const bool t_reject = stats.t_t > normal_quantile(1.0 - alpha);
  return {chibar_reject, t_reject};
}

struct McConfig {
  DgpSpec spec;
  int replications = 2000;
  int b = 999;
  double alpha = 0.05;
  uint64_t seed = 0;
  std::vector<MinPVariant> variants{MinPVariant::SC, MinPVariant::ST, MinPVariant::S};
  bool include_reference = true;
};

inline void validate_config(const McConfig& cfg) {
  if (cfg.replications < 1) throw ConfigInvalid("replications", "must be >= 1");
  if (cfg.b < 99) throw ConfigInvalid("b", "bootstrap count must be >= 99");
  if (!(cfg.alpha > 0.0 && cfg.alpha < 1.0)) throw ConfigInvalid("alpha", "must lie in (0,1)");
  if (cfg.variants.size() > 3) throw ConfigInvalid("variants", "at most the three variants");
  validate_dgp(cfg.spec);
}

struct VariantRates {
  MinPVariant variant = MinPVariant::SC;
  double reject_h0 = 0.0;
  double fwer = 0.0;
  Vec h0i;
};

struct McResult {
  DgpSpec spec;
  int replications = 0;
  int b = 0;
  double alpha = 0.05;
  std::vector<VariantRates> rates;
  bool include_reference = false;
  double chibar_rate = 0.0;
  double t_rate = 0.0;
  long redraw_total = 0;
  double mean_rep_ms = 0.0;
  // structural checks evaluated on every replication
  long cm_order_violations = 0;    // c_m2 > c_m1 occurrences
  long consonance_violations = 0;  // variant s: global rejection without an individual one
  long agreement_violations = 0;   // first-step rejection by all three but K_hat differs
};

inline double mc_standard_error(double rate, int replications) {
  return std::sqrt(rate * (1.0 - rate) / replications);
}

namespace detail {

struct RepRecord {
  uint32_t reject = 0;       // bit per requested variant
  uint32_t khat[3] = {0, 0, 0};
  bool chibar = false;
  bool t = false;
  long redraws = 0;
  bool cm_order_ok = true;
  bool consonance_ok = true;
  bool agreement_ok = true;
  float ms = 0.0f;
};

}  // namespace detail

// Replication r owns substream r of the master stream; data, pool and
// reference draws live on fixed child substreams, so the whole study is a
// pure function of (config, seed) whatever the worker count. Pool-level
// parallelism stays off inside the replication loop.
inline McResult run_study(const McConfig& cfg, int workers = 1) {
  validate_config(cfg);
  const int k = cfg.spec.k();
  const int nv = static_cast<int>(cfg.variants.size());
  const RngStream master(cfg.seed, 0);
  std::vector<detail::RepRecord> records(cfg.replications);

  const bool have_all_three = nv == 3;

  parallel_for(cfg.replications, workers, [&](long r) {
    try {
      const auto start = std::chrono::steady_clock::now();
      const RngStream rep = master.substream(static_cast<uint64_t>(r));
      RngStream data_rng = rep.substream(0);
      const RngStream pool_rng = rep.substream(1);
      const RngStream ref_rng = rep.substream(2);

      const Dataset data = generate_dataset(cfg.spec, data_rng);
      const RestrictedFit fit = fit_restricted(data);
      const ScorePack pack = score_pack(data, fit);
      const StatVector stats = compute_stats(pack);
      const BootstrapPool pool = build_pool(data, fit, cfg.b, pool_rng, 1);

      detail::RepRecord rec;
      rec.redraws = pool.redraws;

      const double c_m1 = global_critical_value(pool, MinPVariant::S, cfg.alpha);
      const double c_sc = global_critical_value(pool, MinPVariant::SC, cfg.alpha);
      const double c_st = global_critical_value(pool, MinPVariant::ST, cfg.alpha);
      rec.cm_order_ok = c_sc <= c_m1 + 1e-15 && c_st <= c_m1 + 1e-15;

      bool first_rejected[3] = {false, false, false};
      for (int v = 0; v < nv; ++v) {
        const GlobalTestResult g = global_test(pool, stats, cfg.variants[v], cfg.alpha);
        const StepdownResult sd = stepdown(pool, g, cfg.variants[v], cfg.alpha);
        if (g.reject) rec.reject |= 1u << v;
        for (int h : sd.k_hat) rec.khat[v] |= 1u << h;
        first_rejected[v] = !sd.steps.empty() && sd.steps.front().reject;
        if (cfg.variants[v] == MinPVariant::S && g.reject && sd.k_hat.empty())
          rec.consonance_ok = false;
      }
      if (have_all_three && first_rejected[0] && first_rejected[1] && first_rejected[2])
        rec.agreement_ok = rec.khat[0] == rec.khat[1] && rec.khat[1] == rec.khat[2];

      if (cfg.include_reference) {
        const auto [cb, tt] = reference_tests(pack, stats, cfg.alpha, ref_rng);
        rec.chibar = cb;
        rec.t = tt;
      }
      rec.ms = static_cast<float>(std::chrono::duration<double, std::milli>(
                                      std::chrono::steady_clock::now() - start)
                                      .count());
      records[r] = rec;
    } catch (const NumericError& e) {
      throw NumericError("replication " + std::to_string(r) + ": " + e.what());
    } catch (const DataError& e) {
      throw DataError("replication " + std::to_string(r) + ": " + e.what());
    }
  });

  uint32_t zero_mask = 0;
  for (int i = 0; i < k; ++i)
    if (cfg.spec.gamma_true[i] == 0.0) zero_mask |= 1u << i;

  McResult out;
  out.spec = cfg.spec;
  out.replications = cfg.replications;
  out.b = cfg.b;
  out.alpha = cfg.alpha;
  out.include_reference = cfg.include_reference;
  const double inv_r = 1.0 / cfg.replications;

  for (int v = 0; v < nv; ++v) {
    VariantRates rates;
    rates.variant = cfg.variants[v];
    rates.h0i.assign(k, 0.0);
    long rej = 0, fwer = 0;
    std::vector<long> hyp(k, 0);
    for (const auto& rec : records) {
      if (rec.reject & (1u << v)) ++rej;
      if (zero_mask != 0 && (rec.khat[v] & zero_mask) != 0) ++fwer;
      for (int i = 0; i < k; ++i)
        if (rec.khat[v] & (1u << i)) ++hyp[i];
    }
    rates.reject_h0 = rej * inv_r;
    rates.fwer = zero_mask == 0 ? 0.0 : fwer * inv_r;
    for (int i = 0; i < k; ++i) rates.h0i[i] = hyp[i] * inv_r;
    out.rates.push_back(std::move(rates));
  }

  long cb = 0, tt = 0;
  double ms = 0.0;
  for (const auto& rec : records) {
    if (rec.chibar) ++cb;
    if (rec.t) ++tt;
    out.redraw_total += rec.redraws;
    if (!rec.cm_order_ok) ++out.cm_order_violations;
    if (!rec.consonance_ok) ++out.consonance_violations;
    if (!rec.agreement_ok) ++out.agreement_violations;
    ms += rec.ms;
  }
  out.chibar_rate = cb * inv_r;
  out.t_rate = tt * inv_r;
  out.mean_rep_ms = ms * inv_r;
  return out;
}

enum class TableFormat { Csv, Markdown };

namespace detail {

inline std::string format_gamma(const Vec& gamma) {
  std::string s = "(";
  char buf[32];
  for (size_t i = 0; i < gamma.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "%g", gamma[i]);
    if (i) s += " ";
    s += buf;
  }
  return s + ")";
}

inline std::string format_pct(double rate) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.1f", 100.0 * rate);
  return buf;
}

inline const VariantRates* find_rates(const McResult& r, MinPVariant v) {
  for (const auto& vr : r.rates)
    if (vr.variant == v) return &vr;
  return nullptr;
}

}  // namespace detail

// Render results as one row per (gamma, T) cell. Variant columns follow the
// fixed order sc, st, s; a result with no variants yields the header only.
// Percentages carry one decimal.
inline std::string emit_table(const std::vector<McResult>& results, TableFormat format) {
  std::vector<MinPVariant> order;
  bool reference = false;
  int k = 0;
  if (!results.empty()) {
    for (MinPVariant v : {MinPVariant::SC, MinPVariant::ST, MinPVariant::S})
      if (detail::find_rates(results.front(), v)) order.push_back(v);
    reference = results.front().include_reference;
    k = results.front().spec.k();
  }

  std::vector<std::string> header{"gamma", "T"};
  for (MinPVariant v : order) {
    const std::string tag = std::string("minp_") + variant_name(v);
    header.push_back(tag + "_h0");
    header.push_back(tag + "_fwer");
    for (int i = 1; i <= k; ++i) header.push_back(tag + "_h0" + std::to_string(i));
  }
  if (reference) {
    header.push_back("chibar_h0");
    header.push_back("t_h0");
  }

  std::vector<std::vector<std::string>> rows;
  if (!order.empty()) {
    for (const auto& r : results) {
      std::vector<std::string> row{detail::format_gamma(r.spec.gamma_true),
                                   std::to_string(r.spec.t)};
      for (MinPVariant v : order) {
        const VariantRates* vr = detail::find_rates(r, v);
        if (!vr) throw std::invalid_argument("emit_table: inconsistent variant sets");
        row.push_back(detail::format_pct(vr->reject_h0));
        row.push_back(detail::format_pct(vr->fwer));
        for (int i = 0; i < k; ++i) row.push_back(detail::format_pct(vr->h0i[i]));
      }
      if (reference) {
        row.push_back(detail::format_pct(r.chibar_rate));
        row.push_back(detail::format_pct(r.t_rate));
      }
      rows.push_back(std::move(row));
    }
  }

  std::ostringstream os;
  if (format == TableFormat::Csv) {
    for (size_t i = 0; i < header.size(); ++i) os << (i ? "," : "") << header[i];
    os << "\n";
    for (const auto& row : rows) {
      for (size_t i = 0; i < row.size(); ++i) os << (i ? "," : "") << row[i];
      os << "\n";
    }
  } else {
    os << "|";
    for (const auto& h : header) os << " " << h << " |";
    os << "\n|";
    for (size_t i = 0; i < header.size(); ++i) os << " --- |";
    os << "\n";
    for (const auto& row : rows) {
      os << "|";
      for (const auto& cell : row) os << " " << cell << " |";
      os << "\n";
    }
  }
  return os.str();
}

}  // namespace minp
