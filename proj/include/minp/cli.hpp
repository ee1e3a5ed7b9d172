#pragma once

#include <charconv>
#include <chrono>
#include <fstream>
#include <map>
#include <string>

#include <json.hpp>

#include "minp/mcstudy.hpp"

namespace minp::cli {

using nlohmann::json;

inline ModelFamily family_from_string(const std::string& s) {
  if (s == "linear") return ModelFamily::Linear;
  if (s == "arch") return ModelFamily::Arch;
  if (s == "rc") return ModelFamily::RandomCoef;
  throw ConfigInvalid("family", "expected linear|arch|rc, got '" + s + "'");
}

inline MinPVariant variant_from_string(const std::string& s) {
  if (s == "s") return MinPVariant::S;
  if (s == "sc") return MinPVariant::SC;
  if (s == "st") return MinPVariant::ST;
  throw ConfigInvalid("variant", "expected s|sc|st, got '" + s + "'");
}

namespace detail {

inline std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

inline std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  size_t start = 0;
  for (;;) {
    const size_t pos = line.find(sep, start);
    if (pos == std::string::npos) {
      out.push_back(trim(line.substr(start)));
      return out;
    }
    out.push_back(trim(line.substr(start, pos - start)));
    start = pos + 1;
  }
}

inline bool parse_double(const std::string& cell, double& out) {
  const char* begin = cell.data();
  const char* end = begin + cell.size();
  const auto res = std::from_chars(begin, end, out);
  return res.ec == std::errc() && res.ptr == end && !cell.empty() && std::isfinite(out);
}

}  // namespace detail

// Column-name bound CSV reader. Linear/rc files carry y, z1..zk and free
// covariates; ARCH files carry y and free covariates (k is the lag count).
// An all-ones intercept column is appended unless the flag is off or a column
// named "const" is already present.
inline Dataset parse_csv(const std::string& path, ModelFamily family, int k,
                         bool intercept) {
  if (k < 1) throw ConfigInvalid("k", "must be >= 1");
  std::ifstream in(path);
  if (!in) throw DataError("cannot open input file: " + path);
  std::vector<std::string> lines;
  for (std::string line; std::getline(in, line);) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!detail::trim(line).empty()) lines.push_back(line);
  }
  if (lines.empty()) throw TooFewRows("empty file: " + path);

  const std::vector<std::string> header = detail::split(lines[0], ',');
  std::map<std::string, int> col_of;
  for (size_t j = 0; j < header.size(); ++j) col_of[header[j]] = static_cast<int>(j);

  if (!col_of.count("y")) throw MissingColumn("y");
  std::vector<int> z_cols;
  if (family != ModelFamily::Arch) {
    for (int i = 1; i <= k; ++i) {
      const std::string name = "z" + std::to_string(i);
      if (!col_of.count(name)) throw MissingColumn(name);
      z_cols.push_back(col_of[name]);
    }
  }
  std::vector<int> x_cols;
  bool has_const = false;
  for (size_t j = 0; j < header.size(); ++j) {
    const int jj = static_cast<int>(j);
    if (jj == col_of["y"]) continue;
    if (std::find(z_cols.begin(), z_cols.end(), jj) != z_cols.end()) continue;
    x_cols.push_back(jj);
    if (header[j] == "const") has_const = true;
  }
  const bool add_ones = intercept && !has_const;

  const int t = static_cast<int>(lines.size()) - 1;
  const int m = static_cast<int>(x_cols.size()) + (add_ones ? 1 : 0);

  Dataset d;
  d.family = family;
  d.k_lags = family == ModelFamily::Arch ? k : 0;
  d.y.resize(t);
  d.z = Matrix(t, static_cast<int>(z_cols.size()));
  d.x = Matrix(t, m);
  for (int r = 0; r < t; ++r) {
    const std::vector<std::string> cells = detail::split(lines[r + 1], ',');
    if (cells.size() != header.size())
      throw DataError("row " + std::to_string(r + 1) + " has " + std::to_string(cells.size()) +
                      " cells, expected " + std::to_string(header.size()));
    auto cell_value = [&](int col) {
      double v;
      if (!detail::parse_double(cells[col], v)) throw NonNumericCell(r + 1, header[col]);
      return v;
    };
    d.y[r] = cell_value(col_of["y"]);
    for (size_t j = 0; j < z_cols.size(); ++j) d.z(r, static_cast<int>(j)) = cell_value(z_cols[j]);
    for (size_t j = 0; j < x_cols.size(); ++j) d.x(r, static_cast<int>(j)) = cell_value(x_cols[j]);
    if (add_ones) d.x(r, m - 1) = 1.0;
  }
  if (t <= m + k + 1)
    throw TooFewRows("need more than " + std::to_string(m + k + 1) + " rows, got " +
                     std::to_string(t));
  return d;
}

constexpr uint64_t kDefaultTestSeed = 12345;

struct TestRequest {
  std::string input;
  ModelFamily family = ModelFamily::Linear;
  int k = 1;
  double alpha = 0.05;
  int b = 999;
  uint64_t seed = kDefaultTestSeed;
  std::vector<MinPVariant> variants{MinPVariant::SC, MinPVariant::ST, MinPVariant::S};
  bool stepdown = false;
  bool intercept = true;
  std::string output;
  int workers = 0;  // 0 = logical core count
};

struct GlobalEntry {
  MinPVariant variant;
  double p_m;
  double c_m;
  bool reject;
};

struct StepdownEntry {
  MinPVariant variant;
  std::vector<int> order;
  std::vector<StepdownStep> steps;
  std::vector<int> k_hat;
};

struct TestReport {
  TestRequest request;
  Vec coefficients;
  double sigma2 = 0.0;
  double t_c = 0.0;
  double t_t = 0.0;
  Vec t_i;
  Vec direction;
  std::vector<int> active_set;
  double p_c = 1.0;
  double p_t = 1.0;
  Vec p_i;
  std::vector<GlobalEntry> global;
  std::vector<StepdownEntry> stepdown;
  long bootstrap_redraws = 0;
  double wall_time_ms = 0.0;
};

inline TestReport run_test(const TestRequest& req) {
  if (!(req.alpha > 0.0 && req.alpha < 1.0)) throw ConfigInvalid("alpha", "must lie in (0,1)");
  const auto start = std::chrono::steady_clock::now();
  const Dataset data = parse_csv(req.input, req.family, req.k, req.intercept);
  const RestrictedFit fit = fit_restricted(data);
  const ScorePack pack = score_pack(data, fit);
  const StatVector stats = compute_stats(pack);
  const int workers = req.workers > 0 ? req.workers : default_workers();
  const BootstrapPool pool = build_pool(data, fit, req.b, RngStream(req.seed, 0), workers);

  TestReport rep;
  rep.request = req;
  rep.coefficients = fit.psi_hat;
  rep.sigma2 = fit.sigma2_hat;
  rep.t_c = stats.t_c;
  rep.t_t = stats.t_t;
  rep.t_i = stats.t_i;
  rep.direction = stats.direction.d;
  rep.active_set = stats.projection.active_set;
  rep.bootstrap_redraws = pool.redraws;

  bool have_pv = false;
  for (MinPVariant v : req.variants) {
    const GlobalTestResult g = global_test(pool, stats, v, req.alpha);
    if (!have_pv) {
      rep.p_c = g.p_c;
      rep.p_t = g.p_t;
      rep.p_i = g.p_i;
      have_pv = true;
    }
    rep.global.push_back({v, g.p_m, g.c_m, g.reject});
    if (req.stepdown) {
      const StepdownResult sd = minp::stepdown(pool, g, v, req.alpha);
      rep.stepdown.push_back({v, sd.order, sd.steps, sd.k_hat});
    }
  }
  rep.wall_time_ms =
      std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start)
          .count();
  return rep;
}

inline json request_to_json(const TestRequest& r) {
  json variants = json::array();
  for (MinPVariant v : r.variants) variants.push_back(variant_name(v));
  return json{{"input", r.input},   {"model", family_name(r.family)},
              {"k", r.k},           {"alpha", r.alpha},
              {"b", r.b},           {"seed", r.seed},
              {"variants", variants}, {"stepdown", r.stepdown},
              {"intercept", r.intercept}, {"output", r.output},
              {"workers", r.workers}};
}

inline TestRequest request_from_json(const json& j) {
  TestRequest r;
  r.input = j.at("input").get<std::string>();
  r.family = family_from_string(j.at("model").get<std::string>());
  r.k = j.at("k").get<int>();
  r.alpha = j.at("alpha").get<double>();
  r.b = j.at("b").get<int>();
  r.seed = j.at("seed").get<uint64_t>();
  r.variants.clear();
  for (const auto& v : j.at("variants")) r.variants.push_back(variant_from_string(v));
  r.stepdown = j.at("stepdown").get<bool>();
  r.intercept = j.at("intercept").get<bool>();
  r.output = j.at("output").get<std::string>();
  r.workers = j.at("workers").get<int>();
  return r;
}

inline json report_to_json(const TestReport& r) {
  json global = json::object();
  for (const auto& g : r.global)
    global[variant_name(g.variant)] = {{"p_m", g.p_m}, {"c_m", g.c_m}, {"reject", g.reject}};
  json stepdown = json::object();
  for (const auto& sd : r.stepdown) {
    json steps = json::array();
    for (const auto& s : sd.steps)
      steps.push_back({{"hypothesis", s.hypothesis + 1},
                       {"p_value", s.p_value},
                       {"critical_value", s.critical_value},
                       {"reject", s.reject}});
    json khat = json::array();
    for (int h : sd.k_hat) khat.push_back(h + 1);
    json order = json::array();
    for (int h : sd.order) order.push_back(h + 1);
    stepdown[variant_name(sd.variant)] = {
        {"order", order}, {"steps", steps}, {"k_hat", khat}};
  }
  return json{
      {"request", request_to_json(r.request)},
      {"fit", {{"coefficients", r.coefficients}, {"sigma2", r.sigma2}}},
      {"statistics",
       {{"t_c", r.t_c},
        {"t_t", r.t_t},
        {"t_i", r.t_i},
        {"direction", r.direction},
        {"active_set", r.active_set}}},
      {"pvalues", {{"p_c", r.p_c}, {"p_t", r.p_t}, {"p_i", r.p_i}}},
      {"global", global},
      {"stepdown", stepdown},
      {"diagnostics",
       {{"bootstrap_redraws", r.bootstrap_redraws}, {"wall_time_ms", r.wall_time_ms}}}};
}

inline TestReport report_from_json(const json& j) {
  TestReport r;
  r.request = request_from_json(j.at("request"));
  r.coefficients = j.at("fit").at("coefficients").get<Vec>();
  r.sigma2 = j.at("fit").at("sigma2").get<double>();
  const json& st = j.at("statistics");
  r.t_c = st.at("t_c").get<double>();
  r.t_t = st.at("t_t").get<double>();
  r.t_i = st.at("t_i").get<Vec>();
  r.direction = st.at("direction").get<Vec>();
  r.active_set = st.at("active_set").get<std::vector<int>>();
  const json& pv = j.at("pvalues");
  r.p_c = pv.at("p_c").get<double>();
  r.p_t = pv.at("p_t").get<double>();
  r.p_i = pv.at("p_i").get<Vec>();
  for (const auto& [name, g] : j.at("global").items())
    r.global.push_back({variant_from_string(name), g.at("p_m").get<double>(),
                        g.at("c_m").get<double>(), g.at("reject").get<bool>()});
  for (const auto& [name, sd] : j.at("stepdown").items()) {
    StepdownEntry e;
    e.variant = variant_from_string(name);
    for (const auto& h : sd.at("order")) e.order.push_back(h.get<int>() - 1);
    for (const auto& s : sd.at("steps"))
      e.steps.push_back({s.at("hypothesis").get<int>() - 1, s.at("p_value").get<double>(),
                         s.at("critical_value").get<double>(), s.at("reject").get<bool>()});
    for (const auto& h : sd.at("k_hat")) e.k_hat.push_back(h.get<int>() - 1);
    r.stepdown.push_back(std::move(e));
  }
  const json& diag = j.at("diagnostics");
  r.bootstrap_redraws = diag.at("bootstrap_redraws").get<long>();
  r.wall_time_ms = diag.at("wall_time_ms").get<double>();
  return r;
}

// Study configuration mirroring McConfig (snake_case keys, nested dgp spec).
inline McConfig parse_study_config(const json& j) {
  McConfig cfg;
  auto require = [&](const json& obj, const char* field) -> const json& {
    if (!obj.contains(field)) throw ConfigInvalid(field, "missing");
    return obj.at(field);
  };
  const json& spec = require(j, "spec");
  try {
    cfg.spec.family = family_from_string(require(spec, "family").get<std::string>());
    cfg.spec.t = require(spec, "t").get<int>();
    cfg.spec.gamma_true = require(spec, "gamma_true").get<Vec>();
    if (spec.contains("error_dist")) {
      const std::string d = spec.at("error_dist").get<std::string>();
      if (d == "normal") {
        cfg.spec.error_dist = ErrorDist::Normal;
      } else if (d == "student_t") {
        cfg.spec.error_dist = ErrorDist::StudentT;
        cfg.spec.df = require(spec, "df").get<int>();
      } else {
        throw ConfigInvalid("error_dist", "expected normal|student_t");
      }
    }
    if (spec.contains("rho")) cfg.spec.rho = spec.at("rho").get<double>();
    if (spec.contains("local_scaling")) cfg.spec.local_scaling = spec.at("local_scaling").get<bool>();
    if (spec.contains("beta")) cfg.spec.beta = spec.at("beta").get<Vec>();
    if (spec.contains("omega")) cfg.spec.omega = spec.at("omega").get<double>();
    if (spec.contains("sigma_eps2")) cfg.spec.sigma_eps2 = spec.at("sigma_eps2").get<double>();
    if (spec.contains("xi")) cfg.spec.xi = spec.at("xi").get<Vec>();
    if (spec.contains("burn_in")) cfg.spec.burn_in = spec.at("burn_in").get<int>();
    cfg.replications = require(j, "replications").get<int>();
    cfg.b = require(j, "b").get<int>();
    if (j.contains("alpha")) cfg.alpha = j.at("alpha").get<double>();
    cfg.seed = require(j, "seed").get<uint64_t>();  // seeds are mandatory here
    if (j.contains("variants")) {
      cfg.variants.clear();
      for (const auto& v : j.at("variants"))
        cfg.variants.push_back(variant_from_string(v.get<std::string>()));
    }
    if (j.contains("include_reference")) cfg.include_reference = j.at("include_reference").get<bool>();
  } catch (const json::exception& e) {
    throw ConfigInvalid("config", e.what());
  }
  validate_config(cfg);
  return cfg;
}

inline std::string mcse_lines(const McResult& r) {
  std::ostringstream os;
  char buf[160];
  auto line = [&](const std::string& cell, double rate) {
    std::snprintf(buf, sizeof(buf), "mcse %-14s rate=%6.1f%%  se=%.2fpp\n", cell.c_str(),
                  100.0 * rate, 100.0 * mc_standard_error(rate, r.replications));
    os << buf;
  };
  for (const auto& vr : r.rates) {
    const std::string tag = std::string("minp_") + variant_name(vr.variant);
    line(tag + "_h0", vr.reject_h0);
    line(tag + "_fwer", vr.fwer);
    for (size_t i = 0; i < vr.h0i.size(); ++i)
      line(tag + "_h0" + std::to_string(i + 1), vr.h0i[i]);
  }
  if (r.include_reference) {
    line("chibar_h0", r.chibar_rate);
    line("t_h0", r.t_rate);
  }
  return os.str();
}

// Inline matrix syntax "a,b;b,c" or a CSV file of rows.
inline SymMatrix parse_cov(const std::string& arg) {
  std::string text = arg;
  if (arg.find(';') == std::string::npos) {
    std::ifstream in(arg);
    if (in) {
      std::ostringstream buf;
      std::string line;
      bool first = true;
      while (std::getline(in, line)) {
        if (detail::trim(line).empty()) continue;
        if (!first) buf << ";";
        buf << line;
        first = false;
      }
      text = buf.str();
    }
  }
  const auto rows = detail::split(text, ';');
  const int n = static_cast<int>(rows.size());
  Matrix m(n, n);
  for (int i = 0; i < n; ++i) {
    const auto cells = detail::split(rows[i], ',');
    if (static_cast<int>(cells.size()) != n)
      throw DataError("covariance matrix is not square");
    for (int j = 0; j < n; ++j) {
      double v;
      if (!detail::parse_double(cells[j], v)) throw NonNumericCell(i + 1, "cov");
      m(i, j) = v;
    }
  }
  try {
    return SymMatrix(std::move(m));
  } catch (const std::invalid_argument& e) {
    throw DataError(std::string("covariance matrix: ") + e.what());
  }
}

inline Vec parse_vector(const std::string& arg) {
  const auto cells = detail::split(arg, ',');
  Vec v(cells.size());
  for (size_t i = 0; i < cells.size(); ++i)
    if (!detail::parse_double(cells[i], v[i])) throw NonNumericCell(1, "u");
  return v;
}

}  // namespace minp::cli
