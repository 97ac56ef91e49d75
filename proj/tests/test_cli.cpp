#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "siflow/cli.hpp"
#include "siflow/error.hpp"

using namespace siflow;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("siflow_test_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string read_file(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
}

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream os(p, std::ios::binary);
  os << text;
}

struct Run {
  int code;
  std::string out;
  std::string err;
};

// Invokes the command-line entry point with captured streams.
Run run_cli(std::vector<std::string> args) {
  args.insert(args.begin(), "siflow");
  std::vector<char*> argv;
  for (auto& a : args) argv.push_back(a.data());
  std::ostringstream out, err;
  auto* old_out = std::cout.rdbuf(out.rdbuf());
  auto* old_err = std::cerr.rdbuf(err.rdbuf());
  const int code = cli::main(static_cast<int>(argv.size()), argv.data());
  std::cout.rdbuf(old_out);
  std::cerr.rdbuf(old_err);
  return {code, out.str(), err.str()};
}

std::string first_line(const std::string& s) { return s.substr(0, s.find('\n')); }

}  // namespace

TEST_CASE("verify thm1 on the tight Gaussian case") {
  const fs::path dir = scratch("thm1");
  const Run r = run_cli({"verify", "thm1", "--target", "gaussian_scaled:4", "--schedule", "linear", "--kappa", "4",
                         "--out", dir.string()});
  CHECK(r.code == 0);
  CHECK(r.out.find("PASS") != std::string::npos);
  const cli::Json s = cli::Json::parse(read_file(dir / "summary.json"));
  CHECK(s.at("pass") == true);
  CHECK(s.at("config").at("target") == "gaussian_scaled:4");
  const cli::Json& end = s.at("report").at("at_end");
  CHECK(end.at("t").get<double>() == 1.0);
  CHECK(std::abs(end.at("margin_dv").get<double>()) <= 1e-12);
  CHECK(std::abs(end.at("margin_df").get<double>()) <= 1e-6);
  CHECK(first_line(read_file(dir / "curves.csv")).rfind("t,lambda,", 0) == 0);
}

TEST_CASE("repeated runs are byte-identical") {
  const fs::path dir = scratch("determinism");
  const std::vector<std::vector<std::string>> commands = {
      {"sde", "run", "--target", "gaussian_scaled:4", "--eps", "0.5", "--n", "200", "--steps", "100", "--seed", "42",
       "--checkpoints", "0.5,1"},
      {"flow", "run", "--target", "quartic1d", "--schedule", "trig", "--steps", "50", "--x0", "0.5;-1", "--jacobian"},
      {"estimate", "run", "--target", "gaussian_scaled:4", "--n-list", "100,300", "--seeds", "2"},
      {"bounds", "eval", "--thm", "2", "--kappa0", "2", "--eta0", "2", "--kappa1", "1", "--schedule", "trig"},
  };
  for (const auto& base : commands) {
    CAPTURE(base[0]);
    std::vector<std::string> args = base;
    args.push_back("--out");
    args.push_back(dir.string());
    REQUIRE(run_cli(args).code <= 1);
    std::vector<std::string> first;
    for (const char* f : {"curves.csv", "summary.json", "samples.csv"}) first.push_back(read_file(dir / f));
    REQUIRE(run_cli(args).code <= 1);
    int k = 0;
    for (const char* f : {"curves.csv", "summary.json", "samples.csv"}) {
      CAPTURE(f);
      CHECK(read_file(dir / f) == first[k++]);
    }
    fs::remove_all(dir);
    fs::create_directories(dir);
  }
}

TEST_CASE("sde run writes samples and checks the Gaussian marginal") {
  const fs::path dir = scratch("sde");
  const Run r = run_cli({"sde", "run", "--target", "gaussian_scaled:4", "--schedule", "linear", "--eps", "0", "--n",
                         "4000", "--steps", "200", "--seed", "1", "--checkpoints", "0.5", "--out", dir.string()});
  CHECK(r.code == 0);
  const std::string samples = read_file(dir / "samples.csv");
  CHECK(std::count(samples.begin(), samples.end(), '\n') == 4001);
}

TEST_CASE("configs with an invalid schedule are rejected") {
  const fs::path dir = scratch("bad_schedule");
  write_file(dir / "cfg.json",
             R"({"schedule": {"kind": "polynomial", "alpha": [1, -1], "beta": [0, 0.9]}, "out": ")" +
                 (dir / "o").generic_string() + "\"}\n");
  const Run r = run_cli({"flow", "run", "--config", (dir / "cfg.json").string()});
  CHECK(r.code == 2);
  CHECK(r.err.find("beta(1)=1") != std::string::npos);
  CHECK_FALSE(fs::exists(dir / "o" / "summary.json"));

  // schedule check reports the failed clause instead of refusing to run
  const Run c = run_cli({"schedule", "check", "--config", (dir / "cfg.json").string()});
  CHECK(c.code == 1);
  CHECK(read_file(dir / "o" / "summary.json").find("beta(1)=1") != std::string::npos);
}

TEST_CASE("syntax errors report line and column") {
  const fs::path dir = scratch("parse");
  write_file(dir / "cfg.json", "{\n  \"schedule\": \"trig\",\n  \"target\": quartic1d\n}\n");
  CHECK_THROWS_WITH_AS(cli::load_config((dir / "cfg.json").string()), doctest::Contains("cfg.json:3:"), ConfigError);
  const Run r = run_cli({"schedule", "check", "--config", (dir / "cfg.json").string()});
  CHECK(r.code == 2);
  CHECK(r.err.find(":3:") != std::string::npos);
}

TEST_CASE("unknown keys and bad values are config errors") {
  const fs::path dir = scratch("unknown");
  CHECK_THROWS_AS(cli::run(cli::Json{{"command", "schedule"}, {"shedule", "trig"}}, std::cout), ConfigError);
  CHECK_THROWS_AS(cli::run(cli::Json{{"command", "sde"}, {"eps", 2.0}, {"out", dir.string()}}, std::cout),
                  ConfigError);
  CHECK(run_cli({"drift", "eval", "--target", "cauchy", "--out", dir.string()}).code == 2);
  CHECK(run_cli({"bounds", "eval", "--thm", "3", "--out", dir.string()}).code == 2);
}

TEST_CASE("flags override config keys") {
  const fs::path dir = scratch("override");
  write_file(dir / "cfg.json", R"({"schedule": "linear", "target": "gaussian_scaled:4", "kappa": 4})");
  const Run r = run_cli({"verify", "thm1", "--config", (dir / "cfg.json").string(), "--schedule", "trig", "--out",
                         (dir / "o").string()});
  CHECK(r.code == 0);
  const cli::Json s = cli::Json::parse(read_file(dir / "o" / "summary.json"));
  CHECK(s.at("config").at("schedule") == "trig");
  CHECK(s.at("config").at("target") == "gaussian_scaled:4");
}

TEST_CASE("schedule check and drift eval") {
  const fs::path dir = scratch("misc");
  CHECK(run_cli({"schedule", "check", "--schedule", "vm:4", "--out", dir.string()}).code == 0);
  CHECK(run_cli({"drift", "eval", "--target", "gaussian_scaled:4", "--schedule", "linear", "--times", "0.5", "--x", "1",
                 "--jacobian", "--out", dir.string()})
            .code == 0);
  const std::string csv = read_file(dir / "curves.csv");
  CHECK(csv.find("-1.2") != std::string::npos);
}
