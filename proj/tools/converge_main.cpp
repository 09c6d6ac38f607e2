#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include "converge/dynamics_core.hpp"
#include "converge/registry.hpp"
#include "converge/report.hpp"

namespace {

using namespace converge;

std::string dir_of(const std::string& path) {
  std::size_t slash = path.find_last_of('/');
  return slash == std::string::npos ? std::string() : path.substr(0, slash + 1);
}

void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write " + path);
  out << content;
}

SystemDef load_system(const std::string& name) {
  if (find_example(name)) return load_example(name);
  std::ifstream in(name, std::ios::binary);
  if (!in) throw ConfigError("not a builtin example and not a readable file: " + name);
  std::ostringstream os;
  os << in.rdbuf();
  SystemDef def = parse_system(os.str());
  def.name = name;
  return def;
}

int run_report(ConfigMap cfg, const std::optional<int>& threads,
               const std::optional<long long>& seed, const std::string& out,
               bool emit_gnuplot) {
  if (threads)
    cfg.set("threads", std::to_string(*threads));
  else if (const char* env = std::getenv("CONVERGE_THREADS"))
    cfg.set("threads", env);
  if (seed) cfg.set("seed", std::to_string(*seed));
  if (!out.empty()) cfg.set("out", out);
  if (emit_gnuplot) cfg.set("emit_gnuplot", "1");

  RunResult rr = run_analysis(cfg);
  std::string dump = rr.report.dump(2);
  dump.push_back('\n');
  if (out.empty()) {
    std::cout << dump;
  } else {
    write_file(out, dump);
    std::string dir = dir_of(out);
    for (const auto& [name, content] : rr.side_files) write_file(dir + name, content);
    const auto& sec = rr.report["sections"][0];
    std::cout << rr.report["system"]["name"].get<std::string>() << " "
              << sec["property"].get<std::string>() << ": "
              << sec["outcome"].get<std::string>();
    if (!sec["expectation"].is_null())
      std::cout << (sec["expectation"]["match"].get<bool>() ? " (expected: MATCH)"
                                                            : " (expected: MISMATCH)");
    std::cout << " -> " << out << "\n";
  }
  return rr.exit_code;
}

int cmd_examples() {
  std::printf("%-5s %-3s %-3s %-4s %-3s %-4s %-5s %s\n", "name", "dim", "is", "eis", "cd",
              "ecd", "contr", "title");
  for (const auto& e : registry()) {
    auto flag = [&](const char* key) { return e.truth.at(key) ? "yes" : "no"; };
    std::printf("%-5s %-3d %-3s %-4s %-3s %-4s %-5s %s\n", e.name.c_str(), e.dim, flag("is"),
                flag("eis"), flag("cd"), flag("ecd"), flag("contracting"), e.title.c_str());
  }
  std::vector<std::string> bad = registry_rule_violations();
  for (const auto& v : bad) std::cerr << "rule violation: " << v << "\n";
  return bad.empty() ? 0 : 1;
}

int cmd_simulate(const std::string& system, long long k0, const std::string& xi_text,
                 long long steps) {
  SystemDef def = load_system(system);
  Vec xi;
  std::istringstream is(xi_text);
  double v;
  while (is >> v) xi.push_back(v);
  if (static_cast<int>(xi.size()) != def.n)
    throw ConfigError("--xi needs " + std::to_string(def.n) + " numbers");

  Trajectory tr = simulate(def, k0, xi, steps);
  std::cout << "k";
  for (int i = 1; i <= def.n; ++i) std::cout << ",x" << i;
  std::cout << "\n";
  char buf[32];
  for (long long k = tr.k0; k <= tr.last_k(); ++k) {
    std::cout << k;
    for (double x : tr.at(k)) {
      std::snprintf(buf, sizeof buf, "%.17g", x);
      std::cout << "," << buf;
    }
    std::cout << "\n";
  }
  if (tr.truncated())
    std::cout << "# stopped at k=" << tr.stop.at_k << ": " << tr.stop.detail << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"certify or falsify convergence properties of discrete-time systems"};
  app.require_subcommand(1);

  std::optional<int> threads;
  std::optional<long long> seed;
  std::string out_path;
  bool emit_gnuplot = false;

  std::string config_path;
  CLI::App* run = app.add_subcommand("run", "run a configured analysis and emit a report");
  run->add_option("config", config_path, "key = value config file")->required();
  run->add_option("--threads", threads, "worker threads (default: CONVERGE_THREADS or all)");
  run->add_option("--seed", seed, "sampling seed override");
  run->add_option("--out", out_path, "report path; envelope CSVs land next to it");
  run->add_flag("--emit-gnuplot", emit_gnuplot, "also emit a plot script for the envelope");

  CLI::App* examples = app.add_subcommand("examples", "list builtin systems and their truth table");

  std::string sim_system, sim_xi = "0";
  long long sim_k0 = 0, sim_steps = 10;
  CLI::App* sim = app.add_subcommand("simulate", "print a trajectory as CSV");
  sim->add_option("system", sim_system, "builtin name or .dsys path")->required();
  sim->add_option("--k0", sim_k0, "start time");
  sim->add_option("--xi", sim_xi, "initial state, space separated");
  sim->add_option("--steps", sim_steps, "horizon");

  std::string chk_system, chk_candidate;
  CLI::App* chk = app.add_subcommand("check-lyapunov", "verify a candidate function on a grid");
  chk->add_option("system", chk_system, "builtin name or .dsys path")->required();
  chk->add_option("candidate", chk_candidate, "candidate .lyap path")->required();
  chk->add_option("--threads", threads, "worker threads");
  chk->add_option("--seed", seed, "sampling seed override");
  chk->add_option("--out", out_path, "report path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (run->parsed())
      return run_report(ConfigMap::load_file(config_path), threads, seed, out_path,
                        emit_gnuplot);
    if (examples->parsed()) return cmd_examples();
    if (sim->parsed()) return cmd_simulate(sim_system, sim_k0, sim_xi, sim_steps);
    ConfigMap cfg;
    cfg.set("system", chk_system);
    cfg.set("property", "lyapunov-check");
    cfg.set("candidate", chk_candidate);
    return run_report(cfg, threads, seed, out_path, false);
  } catch (const converge::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
