// End-to-end tests of the qrsim binary; every CLI flag is exercised here.

#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

namespace {

namespace fs = std::filesystem;

std::string scenario(const char* name) {
  return std::string(SCENARIOS_DIR) + "/" + name;
}

struct RunResult {
  int exit_code = -1;
  std::string output;
};

RunResult run_cli(const std::string& args) {
  fs::path out = fs::temp_directory_path() / "qrsim_stdout.txt";
  std::string cmd = std::string(QRSIM_PATH) + " " + args + " > " +
                    out.string() + " 2>&1";
  int rc = std::system(cmd.c_str());
  RunResult r;
  r.exit_code = WEXITSTATUS(rc);
  std::ifstream in(out);
  std::stringstream ss;
  ss << in.rdbuf();
  r.output = ss.str();
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path fresh_dir(const char* name) {
  fs::path d = fs::temp_directory_path() / name;
  fs::remove_all(d);
  return d;
}

}  // namespace

TEST_CASE("a chain scenario runs and writes metrics") {
  fs::path out = fresh_dir("qrsim_run");
  auto r = run_cli("--topology " + scenario("chain.json") + " --scenario " +
                   scenario("chain.json") + " --output " + out.string());
  INFO(r.output);
  CHECK(r.exit_code == 0);
  CHECK(r.output.find("state=active") != std::string::npos);
  std::string metrics = slurp(out / "metrics.txt");
  CHECK(metrics.find("schema qrs-metrics 1") == 0);
  CHECK(metrics.find("conn alice-bob") != std::string::npos);
  CHECK(metrics.find("mean_true_fidelity=") != std::string::npos);
  CHECK(metrics.find("protocol_faults=0") != std::string::npos);
}

TEST_CASE("the same seed reproduces metrics and trace byte for byte") {
  fs::path out1 = fresh_dir("qrsim_d1");
  fs::path out2 = fresh_dir("qrsim_d2");
  fs::path out3 = fresh_dir("qrsim_d3");
  std::string base = "--topology " + scenario("chain.json") + " --scenario " +
                     scenario("chain.json") + " --trace --duration 0.3 ";
  CHECK(run_cli(base + "--seed 42 --output " + out1.string()).exit_code == 0);
  CHECK(run_cli(base + "--seed 42 --output " + out2.string()).exit_code == 0);
  CHECK(run_cli(base + "--seed 43 --output " + out3.string()).exit_code == 0);
  std::string m1 = slurp(out1 / "metrics.txt");
  CHECK(m1 == slurp(out2 / "metrics.txt"));
  CHECK(m1 != slurp(out3 / "metrics.txt"));
  std::string t1 = slurp(out1 / "trace.txt");
  CHECK(!t1.empty());
  CHECK(t1 == slurp(out2 / "trace.txt"));
  CHECK(t1 != slurp(out3 / "trace.txt"));
}

TEST_CASE("route mode prints the path and per-hop costs") {
  auto r = run_cli("--topology " + scenario("chain.json") +
                   " --route 10 12 --index-fidelity 0.9");
  INFO(r.output);
  CHECK(r.exit_code == 0);
  CHECK(r.output.find("route 10 11 12") != std::string::npos);
  CHECK(r.output.find("hop 10-11 seconds_per_pair=") != std::string::npos);
  CHECK(r.output.find("total seconds_per_pair=") != std::string::npos);
}

TEST_CASE("verify-only reports clean generated rulesets without simulating") {
  auto r = run_cli("--topology " + scenario("two_networks.json") +
                   " --scenario " + scenario("two_networks.json") +
                   " --verify-only");
  INFO(r.output);
  CHECK(r.exit_code == 0);
  CHECK(r.output.find("verify cross-border") != std::string::npos);
  CHECK(r.output.find("clean=yes") != std::string::npos);
  // the virtual hop's child segment is verified too
  CHECK(r.output.find("cross-border/child0") != std::string::npos);
}

TEST_CASE("verify-only flags an infeasible scenario unless faults are allowed") {
  fs::path bad = fs::temp_directory_path() / "qrsim_bad.json";
  {
    std::ofstream f(bad);
    f << R"({
      "nodes": [{"address": 1}, {"address": 2}, {"address": 3, "type": "REP1"}],
      "links": [{"a": 1, "b": 3, "attenuation_db_per_km": 0.0,
                 "base_fidelity": 0.9},
                {"a": 3, "b": 2, "attenuation_db_per_km": 0.0,
                 "base_fidelity": 0.9}],
      "connections": [{"name": "hopeless", "initiator": 1, "responder": 2,
                       "min_fidelity": 0.93}]
    })";
  }
  auto strict = run_cli("--topology " + bad.string() + " --verify-only");
  CHECK(strict.exit_code == 3);
  CHECK(strict.output.find("unreachable") != std::string::npos);
  auto lax = run_cli("--topology " + bad.string() +
                     " --verify-only --allow-faults");
  CHECK(lax.exit_code == 0);
}

TEST_CASE("config errors name the offending fields and exit nonzero") {
  fs::path bad = fs::temp_directory_path() / "qrsim_badcfg.json";
  {
    std::ofstream f(bad);
    f << R"({"nodes": [{"address": 1}], "links": [{"a": 1, "b": 9}]})";
  }
  auto r = run_cli("--topology " + bad.string());
  CHECK(r.exit_code == 1);
  CHECK(r.output.find("links[0].b") != std::string::npos);
}

TEST_CASE("duration override shortens the run") {
  fs::path out = fresh_dir("qrsim_short");
  auto r = run_cli("--topology " + scenario("chain.json") + " --scenario " +
                   scenario("chain.json") + " --duration 0.05 --output " +
                   out.string());
  CHECK(r.exit_code == 0);
  std::string metrics = slurp(out / "metrics.txt");
  CHECK(metrics.find("global sim_seconds=0.050000") != std::string::npos);
}
