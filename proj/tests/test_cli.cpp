#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "minp/cli.hpp"

using namespace minp;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir() {
  const fs::path dir = fs::temp_directory_path() / "minp_cli_tests";
  fs::create_directories(dir);
  return dir;
}

void write_file(const fs::path& p, const std::string& content) {
  std::ofstream out(p);
  out << content;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string dataset_csv(const Dataset& d, bool with_z) {
  std::ostringstream os;
  os.precision(17);
  os << "y";
  if (with_z)
    for (int j = 1; j <= d.z.cols(); ++j) os << ",z" << j;
  os << ",x1\n";
  for (int i = 0; i < d.t(); ++i) {
    os << d.y[i];
    if (with_z)
      for (int j = 0; j < d.z.cols(); ++j) os << "," << d.z(i, j);
    os << "," << d.x(i, 0) << "\n";
  }
  return os.str();
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(MINP_CLI_PATH) + " " + args + " >/dev/null 2>/dev/null";
  const int status = std::system(cmd.c_str());
  return WEXITSTATUS(status);
}

}  // namespace

TEST_CASE("csv schema mapping with an appended intercept") {
  const fs::path p = temp_dir() / "schema.csv";
  std::ostringstream os;
  os << "y,z1,z2,x1\n";
  RngStream rng(61, 0);
  for (int i = 0; i < 100; ++i)
    os << rng.normal() << "," << rng.normal() << "," << rng.normal() << "," << rng.normal()
       << "\n";
  write_file(p, os.str());
  const Dataset d = cli::parse_csv(p.string(), ModelFamily::Linear, 2, true);
  CHECK(d.t() == 100);
  CHECK(d.z.cols() == 2);
  CHECK(d.x.cols() == 2);
  for (int i = 0; i < 100; ++i) CHECK(d.x(i, 1) == 1.0);

  const Dataset no_int = cli::parse_csv(p.string(), ModelFamily::Linear, 2, false);
  CHECK(no_int.x.cols() == 1);

  // a "const" column suppresses the appended intercept
  const fs::path pc = temp_dir() / "schema_const.csv";
  std::ostringstream os2;
  os2 << "y,z1,const\n";
  for (int i = 0; i < 40; ++i) os2 << rng.normal() << "," << rng.normal() << ",1\n";
  write_file(pc, os2.str());
  const Dataset dc = cli::parse_csv(pc.string(), ModelFamily::Linear, 1, true);
  CHECK(dc.x.cols() == 1);
}

TEST_CASE("csv errors carry their location") {
  const fs::path dir = temp_dir();
  write_file(dir / "missing.csv", "y,z1,x1\n1,2,3\n");
  try {
    cli::parse_csv((dir / "missing.csv").string(), ModelFamily::Linear, 2, true);
    FAIL("expected MissingColumn");
  } catch (const MissingColumn& e) {
    CHECK(e.column == "z2");
  }

  std::ostringstream os;
  os << "y,z1,x1\n";
  for (int i = 1; i <= 10; ++i) {
    if (i == 7)
      os << "1,2,abc\n";
    else
      os << "1.5,0." << i << ",2\n";
  }
  write_file(dir / "cell.csv", os.str());
  try {
    cli::parse_csv((dir / "cell.csv").string(), ModelFamily::Linear, 1, true);
    FAIL("expected NonNumericCell");
  } catch (const NonNumericCell& e) {
    CHECK(e.row == 7);
    CHECK(e.column == "x1");
  }

  write_file(dir / "short.csv", "y,z1,x1\n1,2,3\n2,1,0\n1,1,1\n0,2,1\n");
  CHECK_THROWS_AS(cli::parse_csv((dir / "short.csv").string(), ModelFamily::Linear, 1, true),
                  TooFewRows);
}

TEST_CASE("null data is accepted end to end") {
  DgpSpec spec;
  spec.family = ModelFamily::Linear;
  spec.t = 120;
  spec.gamma_true = {0.0, 0.0};
  RngStream rng(6001, 0);
  const Dataset d = gen_linear(spec, rng);
  const fs::path p = temp_dir() / "null.csv";
  write_file(p, dataset_csv(d, true));

  cli::TestRequest req;
  req.input = p.string();
  req.family = ModelFamily::Linear;
  req.k = 2;
  req.b = 299;
  req.seed = 777;
  req.stepdown = true;
  req.output = (temp_dir() / "null_report.json").string();
  const cli::TestReport rep = cli::run_test(req);
  for (const auto& g : rep.global) CHECK_FALSE(g.reject);
  for (const auto& sd : rep.stepdown) CHECK(sd.k_hat.empty());
}

TEST_CASE("a strong arch signal is detected and localized") {
  DgpSpec spec;
  spec.family = ModelFamily::Arch;
  spec.t = 400;
  spec.gamma_true = {0.6, 0.0};
  RngStream rng(6002, 0);
  const Dataset d = gen_arch(spec, rng);
  const fs::path p = temp_dir() / "arch.csv";
  write_file(p, dataset_csv(d, false));

  cli::TestRequest req;
  req.input = p.string();
  req.family = ModelFamily::Arch;
  req.k = 2;
  req.b = 299;
  req.seed = 778;
  req.stepdown = true;
  req.output = (temp_dir() / "arch_report.json").string();
  const cli::TestReport rep = cli::run_test(req);
  for (const auto& g : rep.global) CHECK(g.reject);
  for (const auto& sd : rep.stepdown) CHECK(sd.k_hat == std::vector<int>{0});
}

TEST_CASE("a tiny bootstrap count can never reject") {
  DgpSpec spec;
  spec.family = ModelFamily::Linear;
  spec.t = 80;
  spec.gamma_true = {3.0, 3.0};  // overwhelming signal, still no rejection
  RngStream rng(6003, 0);
  const Dataset d = gen_linear(spec, rng);
  const fs::path p = temp_dir() / "b10.csv";
  write_file(p, dataset_csv(d, true));

  cli::TestRequest req;
  req.input = p.string();
  req.family = ModelFamily::Linear;
  req.k = 2;
  req.b = 100;
  req.alpha = 0.005;  // floor(alpha * b) = 0
  req.seed = 779;
  req.output = (temp_dir() / "b10_report.json").string();
  const cli::TestReport rep = cli::run_test(req);
  for (const auto& g : rep.global) {
    CHECK(g.c_m == 0.0);
    CHECK_FALSE(g.reject);
  }
}

TEST_CASE("reports survive a json round trip") {
  DgpSpec spec;
  spec.family = ModelFamily::Linear;
  spec.t = 100;
  spec.gamma_true = {0.5, 0.0};
  RngStream rng(6004, 0);
  const Dataset d = gen_linear(spec, rng);
  const fs::path p = temp_dir() / "rt.csv";
  write_file(p, dataset_csv(d, true));

  cli::TestRequest req;
  req.input = p.string();
  req.family = ModelFamily::Linear;
  req.k = 2;
  req.b = 199;
  req.seed = 780;
  req.stepdown = true;
  req.output = (temp_dir() / "rt_report.json").string();
  const cli::TestReport rep = cli::run_test(req);

  const cli::json j = cli::report_to_json(rep);
  const cli::TestReport back = cli::report_from_json(j);
  CHECK(cli::report_to_json(back) == j);

  CHECK(back.p_c == rep.p_c);
  CHECK(back.p_i == rep.p_i);
  CHECK(back.global.size() == rep.global.size());
  // entries are keyed by variant; json objects do not preserve write order
  auto find_global = [](const cli::TestReport& t, MinPVariant v) -> const cli::GlobalEntry& {
    for (const auto& g : t.global)
      if (g.variant == v) return g;
    FAIL("variant missing");
    return t.global.front();
  };
  auto find_stepdown = [](const cli::TestReport& t, MinPVariant v) -> const cli::StepdownEntry& {
    for (const auto& s : t.stepdown)
      if (s.variant == v) return s;
    FAIL("variant missing");
    return t.stepdown.front();
  };
  for (const auto& g : rep.global) {
    const auto& b = find_global(back, g.variant);
    CHECK(b.p_m == g.p_m);
    CHECK(b.c_m == g.c_m);
    CHECK(b.reject == g.reject);
  }
  for (const auto& sd : rep.stepdown) {
    const auto& b = find_stepdown(back, sd.variant);
    CHECK(b.order == sd.order);
    CHECK(b.k_hat == sd.k_hat);
  }
}

TEST_CASE("study configs parse and validate") {
  cli::json j = {{"spec",
                  {{"family", "linear"},
                   {"t", 60},
                   {"gamma_true", {0.3, 0.0}},
                   {"rho", 0.0}}},
                 {"replications", 5},
                 {"b", 99},
                 {"alpha", 0.05},
                 {"seed", 11},
                 {"variants", {"sc"}},
                 {"include_reference", false}};
  const McConfig cfg = cli::parse_study_config(j);
  CHECK(cfg.spec.t == 60);
  CHECK(cfg.variants.size() == 1);

  cli::json bad = j;
  bad["replications"] = 0;
  CHECK_THROWS_WITH(cli::parse_study_config(bad),
                    Catch::Matchers::ContainsSubstring("replications"));

  bad = j;
  bad.erase("seed");
  CHECK_THROWS_WITH(cli::parse_study_config(bad), Catch::Matchers::ContainsSubstring("seed"));

  bad = j;
  bad["spec"].erase("gamma_true");
  CHECK_THROWS_AS(cli::parse_study_config(bad), ConfigInvalid);
}

TEST_CASE("covariance arguments accept inline text and csv files") {
  const SymMatrix inline_cov = cli::parse_cov("1,0.9;0.9,1");
  CHECK(inline_cov(0, 1) == 0.9);

  const fs::path p = temp_dir() / "cov.csv";
  write_file(p, "2,0.5\n0.5,1\n");
  const SymMatrix file_cov = cli::parse_cov(p.string());
  CHECK(file_cov.dim() == 2);
  CHECK(file_cov(0, 0) == 2.0);
  CHECK(file_cov(1, 0) == 0.5);

  CHECK_THROWS_AS(cli::parse_cov("1,2;3"), DataError);
  CHECK_THROWS_AS(cli::parse_cov("1,x;x,1"), NonNumericCell);
}

TEST_CASE("cli exit codes separate data from numerical failures") {
  const fs::path dir = temp_dir();

  // data error: missing column
  write_file(dir / "bad.csv", "y,z1,x1\n1,2,3\n2,1,0\n");
  CHECK(run_cli("test --input " + (dir / "bad.csv").string() +
                " --model linear --k 2 --output " + (dir / "o1.json").string()) == 2);

  // numerical error: indefinite covariance in the projection
  CHECK(run_cli("project --cov \"1,2;2,1\" --u \"1,-1\"") == 3);

  // success path
  DgpSpec spec;
  spec.family = ModelFamily::Linear;
  spec.t = 80;
  spec.gamma_true = {0.0};
  RngStream rng(6005, 0);
  const Dataset d = gen_linear(spec, rng);
  write_file(dir / "ok.csv", dataset_csv(d, true));
  CHECK(run_cli("test --input " + (dir / "ok.csv").string() +
                " --model linear --k 1 --boot 99 --seed 5 --output " +
                (dir / "o2.json").string()) == 0);
  CHECK(fs::exists(dir / "o2.json"));
  const cli::json rep = cli::json::parse(read_file(dir / "o2.json"));
  CHECK(rep.contains("request"));
  CHECK(rep.contains("statistics"));
  CHECK(rep.contains("pvalues"));
  CHECK(rep.contains("global"));
  CHECK(rep.contains("diagnostics"));

  // config error: zero replications
  write_file(dir / "bad_config.json",
             R"({"spec":{"family":"linear","t":60,"gamma_true":[0.0]},)"
             R"("replications":0,"b":99,"seed":1})");
  CHECK(run_cli("simulate --config " + (dir / "bad_config.json").string() + " --out " +
                (dir / "t.csv").string()) == 2);
}

TEST_CASE("projection subcommand prints the debug fields") {
  const fs::path out = temp_dir() / "proj.json";
  const std::string cmd = std::string(MINP_CLI_PATH) +
                          " project --cov \"1,0.9;0.9,1\" --u \"1,-1\" > " + out.string() +
                          " 2>/dev/null";
  REQUIRE(WEXITSTATUS(std::system(cmd.c_str())) == 0);
  const cli::json j = cli::json::parse(read_file(out));
  CHECK(j.at("u_bar")[0].get<double>() == Catch::Approx(1.9).margin(1e-9));
  CHECK(j.at("u_bar")[1].get<double>() == 0.0);
  CHECK(j.at("t_c").get<double>() == Catch::Approx(19.0).margin(1e-8));
  CHECK(j.at("active_set") == cli::json::array({2}));
}

TEST_CASE("weights subcommand estimates level probabilities") {
  const fs::path out = temp_dir() / "weights.json";
  const std::string cmd = std::string(MINP_CLI_PATH) +
                          " weights --cov \"1,0;0,1\" --draws 100000 --seed 3 > " +
                          out.string() + " 2>/dev/null";
  REQUIRE(WEXITSTATUS(std::system(cmd.c_str())) == 0);
  const cli::json j = cli::json::parse(read_file(out));
  CHECK(j.at("weights")[1].get<double>() == Catch::Approx(0.5).margin(0.01));
}

TEST_CASE("simulations replay byte for byte") {
  const fs::path dir = temp_dir();
  write_file(dir / "study.json",
             R"({"spec":{"family":"linear","t":60,"gamma_true":[0.3,0.0]},)"
             R"("replications":5,"b":99,"seed":17,"include_reference":false})");
  REQUIRE(run_cli("simulate --config " + (dir / "study.json").string() + " --out " +
                  (dir / "run1.csv").string() + " --workers 2") == 0);
  REQUIRE(run_cli("simulate --config " + (dir / "study.json").string() + " --out " +
                  (dir / "run2.csv").string() + " --workers 3") == 0);
  const std::string a = read_file(dir / "run1.csv");
  CHECK(!a.empty());
  CHECK(a == read_file(dir / "run2.csv"));
}
