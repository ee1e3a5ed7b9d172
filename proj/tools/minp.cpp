// Batch front end: run the tests on CSV data, drive simulation studies from
// JSON configs, and expose the projection / chi-bar weight primitives for
// inspection. Exit codes: 0 success, 2 data error, 3 numerical error.

#include <CLI11.hpp>

#include <fstream>
#include <iostream>

#include "minp/cli.hpp"

namespace {

using minp::cli::json;

int run_guarded(const std::function<void()>& body) {
  try {
    body();
    return 0;
  } catch (const minp::DataError& e) {
    std::cerr << json{{"error", {{"category", "data"}, {"message", e.what()}}}}.dump()
              << "\n";
    return 2;
  } catch (const minp::NumericError& e) {
    std::cerr << json{{"error", {{"category", "numeric"}, {"message", e.what()}}}}.dump()
              << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << json{{"error", {{"category", "internal"}, {"message", e.what()}}}}.dump()
              << "\n";
    return 1;
  }
}

void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path);
  if (!out) throw minp::DataError("cannot write to " + path);
  out << content;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"One-sided score tests with bootstrap MinP combining"};
  app.require_subcommand(1);

  // ---- test ----------------------------------------------------------
  auto* test = app.add_subcommand("test", "run the tests on a CSV dataset");
  minp::cli::TestRequest req;
  std::string model = "linear";
  std::vector<std::string> variant_args;
  bool no_intercept = false;
  test->add_option("--input", req.input, "input CSV")->required();
  test->add_option("--model", model, "linear|arch|rc")->required();
  test->add_option("--k", req.k, "tested column count / ARCH lag count")->required();
  test->add_option("--alpha", req.alpha, "significance level");
  test->add_option("--boot", req.b, "bootstrap draws");
  test->add_option("--seed", req.seed, "rng seed");
  test->add_option("--variant", variant_args, "s|sc|st (repeatable)");
  test->add_flag("--stepdown", req.stepdown, "run the stepdown multiple test");
  test->add_flag("--no-intercept", no_intercept, "do not append an intercept column");
  test->add_option("--output", req.output, "report JSON path")->required();
  test->add_option("--workers", req.workers, "bootstrap worker threads");

  // ---- simulate ------------------------------------------------------
  auto* sim = app.add_subcommand("simulate", "run a simulation study from a JSON config");
  std::string config_path, out_path, format = "csv";
  int sim_workers = 0;
  sim->add_option("--config", config_path, "study config JSON")->required();
  sim->add_option("--out", out_path, "output table path")->required();
  sim->add_option("--format", format, "csv|md");
  sim->add_option("--workers", sim_workers, "replication worker threads");

  // ---- project -------------------------------------------------------
  auto* proj = app.add_subcommand("project", "orthant projection of a point");
  std::string cov_arg, u_arg;
  proj->add_option("--cov", cov_arg, "covariance, inline \"a,b;b,c\" or CSV file")->required();
  proj->add_option("--u", u_arg, "point, inline \"u1,u2,...\"")->required();

  // ---- weights -------------------------------------------------------
  auto* wts = app.add_subcommand("weights", "chi-bar-squared level probabilities");
  std::string wcov_arg;
  long draws = 1000000;
  uint64_t wseed = minp::cli::kDefaultTestSeed;
  int w_workers = 0;
  wts->add_option("--cov", wcov_arg, "covariance, inline or CSV file")->required();
  wts->add_option("--draws", draws, "Monte Carlo draws");
  wts->add_option("--seed", wseed, "rng seed");
  wts->add_option("--workers", w_workers, "worker threads");

  CLI11_PARSE(app, argc, argv);

  if (test->parsed()) {
    return run_guarded([&] {
      req.family = minp::cli::family_from_string(model);
      req.intercept = !no_intercept;
      if (!variant_args.empty()) {
        req.variants.clear();
        for (const auto& v : variant_args)
          req.variants.push_back(minp::cli::variant_from_string(v));
      }
      const minp::cli::TestReport rep = minp::cli::run_test(req);
      write_file(req.output, minp::cli::report_to_json(rep).dump(2) + "\n");
      for (const auto& g : rep.global)
        std::cout << "minp-" << minp::variant_name(g.variant) << ": p_m=" << g.p_m
                  << " c_m=" << g.c_m << (g.reject ? " reject" : " accept") << "\n";
    });
  }

  if (sim->parsed()) {
    return run_guarded([&] {
      std::ifstream in(config_path);
      if (!in) throw minp::DataError("cannot open config: " + config_path);
      json j;
      try {
        in >> j;
      } catch (const json::exception& e) {
        throw minp::ConfigInvalid("config", e.what());
      }
      const minp::McConfig cfg = minp::cli::parse_study_config(j);
      const int workers = sim_workers > 0 ? sim_workers : minp::default_workers();
      const minp::McResult result = minp::run_study(cfg, workers);
      const auto fmt = format == "md" ? minp::TableFormat::Markdown : minp::TableFormat::Csv;
      write_file(out_path, minp::emit_table({result}, fmt));
      std::cout << minp::cli::mcse_lines(result);
      std::cout << "bootstrap redraws: " << result.redraw_total
                << ", mean ms/replication: " << result.mean_rep_ms << "\n";
    });
  }

  if (proj->parsed()) {
    return run_guarded([&] {
      const minp::SymMatrix g = minp::cli::parse_cov(cov_arg);
      const minp::Vec u = minp::cli::parse_vector(u_arg);
      const minp::ConeProjection p = minp::project_orthant(u, g);
      json active = json::array();
      for (int i : p.active_set) active.push_back(i + 1);
      std::cout << json{{"u_bar", p.u_bar},
                        {"t_c", p.t_c},
                        {"active_set", active},
                        {"multipliers", p.multipliers}}
                       .dump(2)
                << "\n";
    });
  }

  if (wts->parsed()) {
    return run_guarded([&] {
      const minp::SymMatrix g = minp::cli::parse_cov(wcov_arg);
      const int workers = w_workers > 0 ? w_workers : minp::default_workers();
      const minp::ChiBarWeights w =
          minp::chibar_weights(g, draws, minp::RngStream(wseed, 0), workers);
      std::cout << json{{"weights", w.w}, {"draws", draws}}.dump(2) << "\n";
    });
  }

  return 0;
}
