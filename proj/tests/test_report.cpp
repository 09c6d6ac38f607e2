#include <cstdio>
#include <fstream>
#include <string>

#include <doctest.h>

#include "converge/registry.hpp"
#include "converge/report.hpp"

using namespace converge;

namespace {

ConfigMap cfg_for(const std::string& system, const std::string& property) {
  ConfigMap cfg;
  cfg.set("system", system);
  cfg.set("property", property);
  return cfg;
}

// Candidate files for the lyapunov-check paths land in /tmp so the repo tree
// stays untouched while the suite runs.
std::string write_temp(const std::string& name, const std::string& content) {
  std::string path = "/tmp/converge_test_" + name;
  std::ofstream out(path, std::ios::binary);
  REQUIRE(out.good());
  out << content;
  return path;
}

}  // namespace

TEST_SUITE("report") {

TEST_CASE("config text parses comments, blanks and last-wins keys") {
  ConfigMap cfg = ConfigMap::parse_text(
      "# leading comment\n"
      "system = ex2   # trailing comment\n"
      "\n"
      "  budget =  100\n"
      "budget = 250\n");
  REQUIRE(cfg.get("system") != nullptr);
  CHECK(*cfg.get("system") == "ex2");
  REQUIRE(cfg.get("budget") != nullptr);
  CHECK(*cfg.get("budget") == "250");
  CHECK(cfg.get("missing") == nullptr);
}

TEST_CASE("malformed config lines report their line number") {
  CHECK_THROWS_WITH_AS(ConfigMap::parse_text("system = ex2\nno equals sign\n"),
                       doctest::Contains("line 2"), ConfigError);
  CHECK_THROWS_WITH_AS(ConfigMap::parse_text("= ex2\n"), doctest::Contains("line 1"),
                       ConfigError);
}

TEST_CASE("run_analysis rejects unknown keys, properties and systems") {
  ConfigMap cfg = cfg_for("ex2", "incremental");
  cfg.set("bogus_key", "1");
  CHECK_THROWS_AS(run_analysis(cfg), ConfigError);

  CHECK_THROWS_AS(run_analysis(cfg_for("ex2", "wrong-property")), ConfigError);
  CHECK_THROWS_AS(run_analysis(cfg_for("/nonexistent/path.dsys", "incremental")), ConfigError);

  ConfigMap no_system;
  no_system.set("property", "incremental");
  CHECK_THROWS_AS(run_analysis(no_system), ConfigError);
  ConfigMap no_property;
  no_property.set("system", "ex2");
  CHECK_THROWS_AS(run_analysis(no_property), ConfigError);
}

TEST_CASE("bad option values surface as config errors") {
  ConfigMap cfg = cfg_for("ex2", "incremental");
  cfg.set("budget", "many");
  CHECK_THROWS_AS(run_analysis(cfg), ConfigError);

  cfg = cfg_for("ex2", "incremental");
  cfg.set("box", "10 -10");
  CHECK_THROWS_AS(run_analysis(cfg), ConfigError);

  cfg = cfg_for("ex2", "contraction");
  cfg.set("metric", "psychic");
  CHECK_THROWS_AS(run_analysis(cfg), ConfigError);
}

TEST_CASE("every builtin matches its recorded outcome on every analysis") {
  const char* properties[] = {"incremental", "exponential-incremental", "convergent",
                              "contraction", "demidovic"};
  for (const RegistryEntry& entry : registry()) {
    for (const char* property : properties) {
      CAPTURE(entry.name);
      CAPTURE(property);
      RunResult rr = run_analysis(cfg_for(entry.name, property));
      CHECK(rr.exit_code == 0);
      const auto& sec = rr.report["sections"][0];
      REQUIRE(!sec["expectation"].is_null());
      CHECK(sec["expectation"]["match"].get<bool>());
      CHECK(sec["expectation"]["expected"].get<std::string>() ==
            entry.expected.at(property));
      std::string why;
      CHECK_MESSAGE(validate_report(rr.report, &why), why);
    }
  }
}

TEST_CASE("reports are deterministic across thread counts and reruns") {
  ConfigMap cfg = cfg_for("ex2", "incremental");
  cfg.set("budget", "300");
  cfg.set("horizon", "10");
  cfg.set("threads", "1");
  RunResult one = run_analysis(cfg);
  cfg.set("threads", "4");
  RunResult four = run_analysis(cfg);
  CHECK(report_hash(one.report) == report_hash(four.report));
  RunResult again = run_analysis(cfg);
  CHECK(report_hash(four.report) == report_hash(again.report));

  cfg.set("seed", "43");
  RunResult reseeded = run_analysis(cfg);
  CHECK(report_hash(four.report) != report_hash(reseeded.report));
}

TEST_CASE("an outcome that misses the recorded expectation exits 1") {
  // A one-step washout leaves the probes far apart, so the reference search
  // reports disagreement instead of the recorded divergence.
  ConfigMap cfg = cfg_for("ex4", "convergent");
  cfg.set("washout", "1");
  RunResult rr = run_analysis(cfg);
  CHECK(rr.exit_code == 1);
  const auto& sec = rr.report["sections"][0];
  CHECK(sec["outcome"].get<std::string>() == "no-agreement");
  CHECK(!sec["expectation"]["match"].get<bool>());
  std::string why;
  CHECK_MESSAGE(validate_report(rr.report, &why), why);
}

TEST_CASE("file-defined systems run without an expectation block") {
  ConfigMap cfg = ConfigMap::load_file("assets/affine_demidovic.cfg");
  RunResult rr = run_analysis(cfg);
  CHECK(rr.exit_code == 0);
  const auto& sec = rr.report["sections"][0];
  CHECK(sec["outcome"].get<std::string>() == "certified");
  CHECK(sec["expectation"].is_null());
  CHECK(rr.report["system"]["builtin"].get<bool>() == false);
  CHECK(rr.report["system"]["dim"].get<int>() == 1);

  // rho far below the actual squared gain leaves the inequality infeasible.
  cfg.set("rho", "0.1");
  RunResult tight = run_analysis(cfg);
  CHECK(tight.exit_code == 1);
  CHECK(tight.report["sections"][0]["outcome"].get<std::string>() == "falsified");
}

TEST_CASE("falsification-style analyses exit 0 whatever they find") {
  ConfigMap cfg = cfg_for("assets/affine.dsys", "incremental");
  cfg.set("budget", "400");
  RunResult rr = run_analysis(cfg);
  CHECK(rr.exit_code == 0);
  CHECK(rr.report["sections"][0]["outcome"].get<std::string>() == "inconclusive");

  // A found counterexample is this analysis succeeding, not failing.
  std::string doubling = write_temp("doubling.dsys", "dim 1;\nf1 = 2 * x1;\n");
  ConfigMap grow = cfg_for(doubling, "incremental");
  grow.set("budget", "200");
  RunResult gr = run_analysis(grow);
  CHECK(gr.exit_code == 0);
  CHECK(gr.report["sections"][0]["outcome"].get<std::string>() == "falsified");
  std::remove(doubling.c_str());
}

TEST_CASE("lyapunov-check verifies a pairwise candidate against a builtin") {
  ConfigMap cfg = cfg_for("ex2", "lyapunov-check");
  cfg.set("candidate", "assets/quadratic_pair.lyap");
  RunResult rr = run_analysis(cfg);
  CHECK(rr.exit_code == 0);
  const auto& sec = rr.report["sections"][0];
  CHECK(sec["outcome"].get<std::string>() == "certified");
  CHECK(sec["verdict"]["scope"].get<std::string>() == "on-grid");
  std::string why;
  CHECK_MESSAGE(validate_report(rr.report, &why), why);
}

TEST_CASE("lyapunov-check needs a candidate and a usable reference") {
  CHECK_THROWS_AS(run_analysis(cfg_for("ex2", "lyapunov-check")), ConfigError);

  // Steady-state candidates are unverifiable when no bounded reference exists.
  std::string cand = write_temp("steady.lyap",
                                "dim 1;\nmode convergent;\nV = x1^2;\n"
                                "a1 = s^2;\na2 = s^2;\na3 = 0.5 * s^2;\n");
  ConfigMap cfg = cfg_for("ex2", "lyapunov-check");
  cfg.set("candidate", cand);
  RunResult rr = run_analysis(cfg);
  CHECK(rr.exit_code == 1);
  const auto& sec = rr.report["sections"][0];
  CHECK(sec["outcome"].get<std::string>() == "error");
  CHECK(sec["error"]["type"].get<std::string>() == "reference-unavailable");
  CHECK(sec["error"]["kind"].get<std::string>() == "unbounded");
  std::string why;
  CHECK_MESSAGE(validate_report(rr.report, &why), why);
  std::remove(cand.c_str());
}

TEST_CASE("lyapunov-check certifies a steady-state candidate end to end") {
  ConfigMap cfg = cfg_for("ex1", "lyapunov-check");
  cfg.set("candidate", "assets/radial_energy.lyap");
  cfg.set("axis_points", "9");
  RunResult rr = run_analysis(cfg);
  CHECK(rr.exit_code == 0);
  const auto& sec = rr.report["sections"][0];
  CHECK(sec["outcome"].get<std::string>() == "certified");
  CHECK(sec["reference"]["bound"].get<double>() < 1e-6);
}

TEST_CASE("side files are named after the report stem when out is set") {
  ConfigMap cfg = cfg_for("ex2", "incremental");
  cfg.set("budget", "200");
  cfg.set("out", "/tmp/reports/gap_run.json");
  cfg.set("emit_gnuplot", "1");
  RunResult rr = run_analysis(cfg);
  REQUIRE(rr.side_files.count("gap_run.envelope.csv") == 1);
  CHECK(rr.side_files.at("gap_run.envelope.csv").rfind("s_bucket,lag,max_sep", 0) == 0);
  REQUIRE(rr.side_files.count("gap_run.gnuplot") == 1);
  CHECK(rr.side_files.at("gap_run.gnuplot").find("'gap_run.envelope.csv'") !=
        std::string::npos);
  const auto& sec = rr.report["sections"][0];
  CHECK(sec["envelope"]["file"].get<std::string>() == "gap_run.envelope.csv");
  // The echo omits execution detail so output location never changes the hash.
  CHECK(!rr.report["config"].contains("out"));
  CHECK(!rr.report["config"].contains("emit_gnuplot"));
  CHECK(!rr.report["config"].contains("threads"));
  CHECK(rr.report["config"].contains("budget"));
}

TEST_CASE("without an output path the envelope embeds inline") {
  ConfigMap cfg = cfg_for("ex2", "incremental");
  cfg.set("budget", "200");
  cfg.set("emit_gnuplot", "1");
  RunResult rr = run_analysis(cfg);
  CHECK(rr.side_files.empty());
  const auto& sec = rr.report["sections"][0];
  REQUIRE(sec["envelope"].contains("csv"));
  CHECK(sec["envelope"]["csv"].get<std::string>().rfind("s_bucket,lag,max_sep", 0) == 0);
  REQUIRE(sec.contains("gnuplot"));
  CHECK(sec["gnuplot"].get<std::string>().find("set logscale y") != std::string::npos);
}

TEST_CASE("the report hash ignores timing but sees everything else") {
  ConfigMap cfg = cfg_for("ex2", "incremental");
  cfg.set("budget", "200");
  RunResult rr = run_analysis(cfg);
  nlohmann::json copy = rr.report;
  copy["timing"]["seconds"] = 123.0;
  CHECK(report_hash(copy) == report_hash(rr.report));
  CHECK(report_hash(copy) == rr.report["determinism_hash"].get<std::string>());
  copy["sections"][0]["outcome"] = "certified";
  CHECK(report_hash(copy) != report_hash(rr.report));
}

TEST_CASE("the validator rejects structurally damaged reports") {
  ConfigMap cfg = cfg_for("ex2", "incremental");
  cfg.set("budget", "200");
  RunResult rr = run_analysis(cfg);
  std::string why;
  REQUIRE(validate_report(rr.report, &why));

  nlohmann::json broken = rr.report;
  broken["schema"] = "other-schema";
  CHECK(!validate_report(broken, &why));
  CHECK(why == "bad schema tag");

  broken = rr.report;
  broken.erase("sections");
  CHECK(!validate_report(broken, &why));

  broken = rr.report;
  broken["sections"][0]["verdict"]["status"] = "maybe";
  CHECK(!validate_report(broken, &why));

  broken = rr.report;
  broken.erase("determinism_hash");
  CHECK(!validate_report(broken, &why));
}

TEST_CASE("registry lookups and the published truth table") {
  CHECK(registry().size() == 4);
  REQUIRE(find_example("ex1") != nullptr);
  CHECK(find_example("ex1")->dim == 2);
  CHECK(find_example("nonesuch") == nullptr);
  CHECK_THROWS_AS(load_example("nonesuch"), ConfigError);

  SystemDef ex3 = load_example("ex3");
  CHECK(ex3.n == 1);
  CHECK(ex3.has_jacobian());

  CHECK(registry_rule_violations().empty());
}

}  // TEST_SUITE
