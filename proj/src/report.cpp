#include "converge/report.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "converge/contraction_analysis.hpp"
#include "converge/convergent_analysis.hpp"
#include "converge/incremental_analysis.hpp"
#include "converge/registry.hpp"

namespace converge {

namespace {

std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open file: " + path);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    double d = std::stod(v, &used);
    if (trim(v.substr(used)).empty()) return d;
  } catch (const std::exception&) {
  }
  throw ConfigError("bad numeric value for " + key + ": '" + v + "'");
}

long long to_ll(const std::string& key, const std::string& v) {
  double d = to_double(key, v);
  if (d != std::floor(d)) throw ConfigError("expected integer for " + key + ": '" + v + "'");
  return static_cast<long long>(d);
}

std::vector<double> to_doubles(const std::string& key, const std::string& v) {
  std::istringstream is(v);
  std::vector<double> out;
  std::string tok;
  while (is >> tok) out.push_back(to_double(key, tok));
  return out;
}

std::pair<long long, long long> to_ll_pair(const std::string& key, const std::string& v) {
  std::vector<double> d = to_doubles(key, v);
  if (d.size() != 2 || d[0] != std::floor(d[0]) || d[1] != std::floor(d[1]) || d[0] > d[1])
    throw ConfigError("expected 'lo hi' integers for " + key + ": '" + v + "'");
  return {static_cast<long long>(d[0]), static_cast<long long>(d[1])};
}

const std::set<std::string>& known_keys() {
  static const std::set<std::string> keys = {
      "system",     "property",     "box",       "horizon",   "budget",      "seed",
      "threads",    "tol",          "candidate", "metric",    "metric_kappa", "metric_lambda",
      "metric_m",   "out",          "k0",        "window",    "washout",      "growth_threshold",
      "decay_target", "eta_floor",  "sample_floor", "fit_window", "axis_points", "grid_budget",
      "rho",        "iters",        "emit_gnuplot", "c"};
  return keys;
}

// Effective config: built-in defaults, then the registry row defaults for the
// property, then the user's map. Threads/out/plot flags are execution detail
// and stay out of the report echo so reruns hash identically.
struct Effective {
  std::map<std::string, std::string> kv;

  const std::string* get(const std::string& k) const {
    auto it = kv.find(k);
    return it == kv.end() ? nullptr : &it->second;
  }
  std::string str(const std::string& k, const std::string& def) const {
    const std::string* v = get(k);
    return v ? *v : def;
  }
  double num(const std::string& k, double def) const {
    const std::string* v = get(k);
    return v ? to_double(k, *v) : def;
  }
  long long integer(const std::string& k, long long def) const {
    const std::string* v = get(k);
    return v ? to_ll(k, *v) : def;
  }
  std::pair<long long, long long> ll_pair(const std::string& k,
                                          std::pair<long long, long long> def) const {
    const std::string* v = get(k);
    return v ? to_ll_pair(k, *v) : def;
  }
  Box box(int dim) const {
    const std::string* v = get("box");
    std::vector<double> d = v ? to_doubles("box", *v) : std::vector<double>{-10.0, 10.0};
    Box b;
    if (d.size() == 2) {
      if (d[0] >= d[1]) throw ConfigError("box lo must be below hi");
      for (int i = 0; i < dim; ++i) b.axes.emplace_back(d[0], d[1]);
    } else if (d.size() == 2 * static_cast<std::size_t>(dim)) {
      for (int i = 0; i < dim; ++i) {
        if (d[2 * i] >= d[2 * i + 1]) throw ConfigError("box lo must be below hi");
        b.axes.emplace_back(d[2 * i], d[2 * i + 1]);
      }
    } else {
      throw ConfigError("box needs 2 or 2*dim numbers");
    }
    return b;
  }
};

nlohmann::json vec_json(const Vec& v) {
  nlohmann::json a = nlohmann::json::array();
  for (double x : v) a.push_back(x);
  return a;
}

nlohmann::json fit_json(const RateFit& f) {
  return {{"kappa", f.kappa},
          {"lambda", f.lambda},
          {"residual", f.residual},
          {"window", {f.window.first, f.window.second}},
          {"degenerate", f.degenerate},
          {"exponential", f.exponential()}};
}

std::string status_token(const Verdict& v) { return to_string(v.status); }

struct SectionOut {
  nlohmann::json section;
  std::string outcome;
  std::map<std::string, std::string> csvs;  // suffix -> content
};

PointGrid convergence_samples(const Box& box, std::pair<long long, long long> window,
                              long long K, int budget, std::uint64_t seed, double floor) {
  PointGrid g;
  int n = box.dim();
  for (int i = 0; i < budget; ++i) {
    Rng rng(mix_seed(seed, 0x100000ull + static_cast<std::uint64_t>(i)));
    long long k0 = rng.uniform_int(window.first, window.second - K);
    Vec xi(static_cast<std::size_t>(n));
    for (int tries = 0; tries < 1000; ++tries) {
      for (int d = 0; d < n; ++d) {
        auto [lo, hi] = box.axes[static_cast<std::size_t>(d)];
        xi[static_cast<std::size_t>(d)] = rng.uniform(lo, hi);
      }
      if (norm2(xi) >= floor) break;
    }
    g.pts.emplace_back(k0, xi);
  }
  return g;
}

SectionOut run_incremental(const SystemDef& def, const Effective& eff, int threads) {
  SectionOut out;
  FalsifyOptions opts;
  opts.K = eff.integer("horizon", 20);
  opts.budget = static_cast<int>(eff.integer("budget", 1000));
  opts.seed = static_cast<std::uint64_t>(eff.integer("seed", 42));
  opts.k0_range = eff.ll_pair("k0", {0, 0});
  opts.growth_threshold = eff.num("growth_threshold", 10.0);
  opts.threads = threads;
  Box box = eff.box(def.n);

  FalsifyResult fr = falsify_incremental(def, box, opts);
  out.section["verdict"] = verdict_to_json(fr.verdict);
  out.outcome = status_token(fr.verdict);
  out.csvs["envelope"] = fr.envelope.to_csv();

  // Default fit window: last half of the horizon, past the transient.
  auto fitw = eff.ll_pair("fit_window", {opts.K / 2, opts.K});
  try {
    RateFit fit = fit_exp_rate(fr.series,
                               {static_cast<int>(fitw.first), static_cast<int>(fitw.second)});
    out.section["fit"] = fit_json(fit);
  } catch (const InvalidWindow&) {
    out.section["fit"] = nullptr;
  }
  return out;
}

SectionOut run_convergent(const SystemDef& def, const Effective& eff, int threads) {
  SectionOut out;
  Box box = eff.box(def.n);
  auto window = eff.ll_pair("window", {0, 100});
  long long washout = eff.integer("washout", 100);
  double tol = eff.num("tol", 1e-7);

  ReferenceResult rr = find_reference(def, window, washout, default_probes(box), tol, threads);
  if (!rr.ok()) {
    out.section["failure"] = {{"kind", to_string(rr.failure->kind)},
                              {"detail", rr.failure->detail},
                              {"agreement", rr.failure->agreement}};
    out.outcome = to_string(rr.failure->kind);
    return out;
  }
  const ReferenceTrajectory& ref = *rr.ref;
  out.section["reference"] = {{"bound", ref.bound},
                              {"agreement", ref.agreement},
                              {"washout", ref.washout},
                              {"window", {ref.k_start, ref.k_end}}};
  out.csvs["reference"] = ref.to_csv();

  ConvergenceOptions copts;
  copts.K = eff.integer("horizon", 20);
  copts.growth_threshold = eff.num("growth_threshold", 10.0);
  copts.decay_target = eff.num("decay_target", 0.1);
  copts.threads = threads;
  PointGrid samples = convergence_samples(
      box, window, copts.K, static_cast<int>(eff.integer("budget", 200)),
      static_cast<std::uint64_t>(eff.integer("seed", 42)), eff.num("sample_floor", 0.0));

  ConvergenceCheck cc = check_convergence(def, ref, samples, copts);
  out.section["verdict"] = verdict_to_json(cc.verdict);
  out.section["fit"] = fit_json(cc.fit);
  out.csvs["envelope"] = cc.envelope.to_csv();
  out.outcome = status_token(cc.verdict);
  return out;
}

MetricField make_metric(const SystemDef& def, const Effective& eff) {
  std::string kind = eff.str("metric", def.has_theta() ? "expression" : "q-builder");
  if (kind == "identity") return MetricField::identity(def.n);
  if (kind == "expression") return MetricField::expression(def);
  if (kind == "q-builder")
    return MetricField::q_builder(def, eff.num("metric_kappa", 0.0),
                                  eff.num("metric_lambda", 0.0), eff.integer("metric_m", -1));
  throw ConfigError("unknown metric source: " + kind);
}

PointGrid state_grid(const SystemDef& def, const Effective& eff) {
  return make_point_grid(eff.box(def.n), eff.ll_pair("k0", {-20, 20}),
                         static_cast<int>(eff.integer("axis_points", 41)),
                         static_cast<int>(eff.integer("grid_budget", 4096)),
                         static_cast<std::uint64_t>(eff.integer("seed", 42)));
}

SectionOut run_contraction(const SystemDef& def, const Effective& eff, int threads) {
  SectionOut out;
  MetricField metric = make_metric(def, eff);
  PointGrid grid = state_grid(def, eff);
  ContractionResult cr =
      contraction_margin(def, metric, grid, eff.num("eta_floor", 1e-9), threads);
  out.section["verdict"] = verdict_to_json(cr.verdict);
  out.section["certificate"] = {{"eta", cr.eta},
                                {"rho", cr.rho},
                                {"mu", cr.mu},
                                {"grid", grid.size()},
                                {"worst_point",
                                 {{"k", cr.worst_point.first}, {"x", vec_json(cr.worst_point.second)}}}};
  out.outcome = status_token(cr.verdict);
  return out;
}

nlohmann::json sym_json(const SymMatrix& p) {
  nlohmann::json rows = nlohmann::json::array();
  for (int i = 0; i < p.n; ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (int j = 0; j < p.n; ++j) row.push_back(p(i, j));
    rows.push_back(row);
  }
  return rows;
}

SectionOut run_demidovic(const SystemDef& def, const Effective& eff, int threads) {
  SectionOut out;
  PointGrid grid = state_grid(def, eff);
  double tol = eff.num("tol", 1e-9);
  int iters = static_cast<int>(eff.integer("iters", 150));

  std::vector<double> sweep;
  if (const std::string* r = eff.get("rho"))
    sweep.push_back(to_double("rho", *r));
  else
    sweep = {0.9, 0.7, 0.5, 0.3, 0.1};

  nlohmann::json attempts = nlohmann::json::array();
  std::optional<DemidovicResult> best_cert;
  double best_g = std::numeric_limits<double>::infinity();
  SymMatrix best_p = SymMatrix::identity(def.n);
  double best_rho = sweep.front();

  for (double rho : sweep) {
    SearchPResult sp = search_P(def, grid, rho, iters, tol, threads);
    attempts.push_back({{"rho", rho},
                        {"found", sp.found},
                        {"best_g", sp.best_g},
                        {"iterations", sp.iterations}});
    if (sp.best_g < best_g) {
      best_g = sp.best_g;
      best_p = sp.P;
      best_rho = rho;
    }
    if (!sp.found) continue;
    DemidovicResult dr = demidovic_certify(def, sp.P, rho, grid, true, tol, threads);
    if (dr.verdict.status == VerdictStatus::Certified) best_cert = std::move(dr);
  }

  if (best_cert) {
    out.section["verdict"] = verdict_to_json(best_cert->verdict);
    out.section["certificate"] = {
        {"P", sym_json(best_cert->P)},
        {"rho_d", best_cert->rho},
        {"worst_margin", best_cert->worst_margin},
        {"c", best_cert->c ? nlohmann::json(*best_cert->c) : nlohmann::json()},
        {"convergence_evidence", best_cert->convergence_evidence},
        {"grid", grid.size()},
        {"worst_point",
         {{"k", best_cert->worst_point.first}, {"x", vec_json(best_cert->worst_point.second)}}}};
    out.outcome = status_token(best_cert->verdict);
  } else {
    DemidovicResult dr = demidovic_certify(def, best_p, best_rho, grid, true, tol, threads);
    out.section["verdict"] = verdict_to_json(dr.verdict);
    out.section["certificate"] = {{"P", sym_json(best_p)},
                                  {"rho_d", best_rho},
                                  {"worst_margin", dr.worst_margin},
                                  {"grid", grid.size()},
                                  {"worst_point",
                                   {{"k", dr.worst_point.first},
                                    {"x", vec_json(dr.worst_point.second)}}}};
    out.outcome = status_token(dr.verdict);
  }
  out.section["attempts"] = attempts;
  return out;
}

SectionOut run_lyapunov_check(const SystemDef& def, const Effective& eff, int threads) {
  SectionOut out;
  const std::string* cand_path = eff.get("candidate");
  if (!cand_path) throw ConfigError("lyapunov-check needs candidate = <path>");
  CandidateV cand = parse_candidate(read_file(*cand_path));

  Verdict v;
  if (cand.mode == CandidateMode::Convergent) {
    Box box = eff.box(def.n);
    auto window = eff.ll_pair("window", {0, 100});
    ReferenceResult rr = find_reference(def, window, eff.integer("washout", 100),
                                        default_probes(box), eff.num("tol", 1e-7), threads);
    if (!rr.ok()) {
      out.section["error"] = {{"type", "reference-unavailable"},
                              {"kind", to_string(rr.failure->kind)},
                              {"message", rr.failure->detail}};
      out.outcome = "error";
      return out;
    }
    PointGrid grid = make_point_grid(box, {window.first, window.second - 1},
                                     static_cast<int>(eff.integer("axis_points", 41)),
                                     static_cast<int>(eff.integer("grid_budget", 4096)),
                                     static_cast<std::uint64_t>(eff.integer("seed", 42)));
    v = verify_convergent_lyapunov(def, cand, *rr.ref, grid, eff.num("c", -1.0), threads);
    out.section["reference"] = {{"bound", rr.ref->bound}, {"agreement", rr.ref->agreement}};
  } else {
    PairGrid grid = make_pair_grid(eff.box(def.n), eff.ll_pair("k0", {0, 0}),
                                   static_cast<int>(eff.integer("budget", 1000)),
                                   static_cast<std::uint64_t>(eff.integer("seed", 42)));
    v = verify_incremental_lyapunov(def, cand, grid, threads);
  }
  out.section["verdict"] = verdict_to_json(v);
  out.outcome = status_token(v);
  return out;
}

}  // namespace

ConfigMap ConfigMap::parse_text(const std::string& text) {
  ConfigMap cfg;
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    std::size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    std::size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError("config line " + std::to_string(lineno) + ": empty key");
    cfg.kv[key] = value;
  }
  return cfg;
}

ConfigMap ConfigMap::load_file(const std::string& path) {
  return parse_text(read_file(path));
}

nlohmann::json verdict_to_json(const Verdict& v) {
  nlohmann::json j;
  j["status"] = to_string(v.status);
  j["scope"] = v.scope;
  j["samples_used"] = v.samples_used;
  nlohmann::json consts = nlohmann::json::object();
  for (const auto& [key, val] : v.constants) consts[key] = val;
  j["constants"] = consts;
  j["notes"] = v.notes;
  if (v.witness) {
    j["witness"] = {{"xi1", vec_json(v.witness->xi1)}, {"xi2", vec_json(v.witness->xi2)},
                    {"k0", v.witness->k0},             {"k", v.witness->k},
                    {"observed", v.witness->observed}, {"allowed", v.witness->allowed}};
  } else {
    j["witness"] = nullptr;
  }
  return j;
}

std::string report_hash(const nlohmann::json& report) {
  nlohmann::json canon = report;
  canon.erase("timing");
  canon.erase("determinism_hash");
  std::string dump = canon.dump();
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : dump) {
    h ^= c;
    h *= 1099511628211ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string gnuplot_script(const std::string& envelope_csv_name) {
  std::ostringstream os;
  os << "set datafile separator ','\n"
     << "set key autotitle columnhead\n"
     << "set logscale y\n"
     << "set xlabel 'lag'\n"
     << "set ylabel 'max separation'\n"
     << "plot '" << envelope_csv_name << "' using 2:3 with points\n";
  return os.str();
}

bool validate_report(const nlohmann::json& r, std::string* why) {
  auto fail = [&](const std::string& msg) {
    if (why) *why = msg;
    return false;
  };
  if (!r.is_object()) return fail("report is not an object");
  if (r.value("schema", "") != kReportSchema) return fail("bad schema tag");
  if (!r.contains("tool") || !r["tool"].is_object() || !r["tool"].contains("name") ||
      !r["tool"].contains("version"))
    return fail("missing tool block");
  if (!r.contains("config") || !r["config"].is_object()) return fail("missing config echo");
  if (!r.contains("system") || !r["system"].is_object() || !r["system"].contains("name") ||
      !r["system"].contains("dim") || !r["system"].contains("builtin"))
    return fail("missing system block");
  if (!r.contains("sections") || !r["sections"].is_array() || r["sections"].empty())
    return fail("missing sections");
  static const std::set<std::string> statuses = {"certified", "falsified", "inconclusive"};
  for (const auto& s : r["sections"]) {
    if (!s.is_object() || !s.contains("property") || !s.contains("outcome"))
      return fail("section misses property/outcome");
    bool has_verdict = s.contains("verdict") && s["verdict"].is_object();
    bool has_error = s.contains("error") && s["error"].is_object();
    bool has_failure = s.contains("failure") && s["failure"].is_object();
    if (!has_verdict && !has_error && !has_failure)
      return fail("section carries neither verdict nor error nor failure");
    if (has_verdict) {
      const auto& v = s["verdict"];
      if (!v.contains("status") || !statuses.count(v["status"].get<std::string>()))
        return fail("bad verdict status");
      if (!v.contains("constants") || !v["constants"].is_object())
        return fail("verdict misses constants");
      if (!v.contains("notes") || !v["notes"].is_array()) return fail("verdict misses notes");
    }
    if (s.contains("expectation") && !s["expectation"].is_null()) {
      const auto& e = s["expectation"];
      if (!e.contains("expected") || !e.contains("outcome") || !e.contains("match"))
        return fail("expectation block incomplete");
    }
  }
  if (!r.contains("timing") || !r["timing"].is_object() || !r["timing"].contains("seconds"))
    return fail("missing timing");
  if (!r.contains("determinism_hash") || !r["determinism_hash"].is_string())
    return fail("missing determinism hash");
  return true;
}

RunResult run_analysis(const ConfigMap& cfg) {
  auto started = std::chrono::steady_clock::now();

  for (const auto& [key, val] : cfg.kv)
    if (!known_keys().count(key)) throw ConfigError("unknown config key: " + key);

  const std::string* system = cfg.get("system");
  if (!system) throw ConfigError("config needs system = <builtin or path>");
  const std::string* property = cfg.get("property");
  if (!property) throw ConfigError("config needs property = <analysis>");
  static const std::set<std::string> properties = {
      "incremental", "exponential-incremental", "convergent",
      "contraction", "demidovic",               "lyapunov-check"};
  if (!properties.count(*property)) throw ConfigError("unknown property: " + *property);

  const RegistryEntry* builtin = find_example(*system);
  SystemDef def;
  if (builtin) {
    def = load_example(*system);
  } else {
    def = parse_system(read_file(*system));
    def.name = *system;
  }

  Effective eff;
  if (builtin) {
    auto it = builtin->config.find(*property);
    if (it != builtin->config.end()) eff.kv = it->second;
  }
  for (const auto& [key, val] : cfg.kv) eff.kv[key] = val;

  int threads = static_cast<int>(eff.integer("threads", 0));

  SectionOut sec;
  try {
    if (*property == "incremental" || *property == "exponential-incremental")
      sec = run_incremental(def, eff, threads);
    else if (*property == "convergent")
      sec = run_convergent(def, eff, threads);
    else if (*property == "contraction")
      sec = run_contraction(def, eff, threads);
    else if (*property == "demidovic")
      sec = run_demidovic(def, eff, threads);
    else
      sec = run_lyapunov_check(def, eff, threads);
  } catch (const ConfigError&) {
    throw;
  } catch (const NonSmoothPoint& e) {
    sec.section["error"] = {{"type", "non-smooth"}, {"message", e.what()}};
    sec.outcome = "error";
  } catch (const Error& e) {
    sec.section["error"] = {{"type", "analysis-error"}, {"message", e.what()}};
    sec.outcome = "error";
  }
  sec.section["property"] = *property;
  sec.section["outcome"] = sec.outcome;

  // Side files keyed off the report stem; inline when no output path is set.
  RunResult out;
  const std::string* out_path = eff.get("out");
  std::string stem;
  if (out_path) {
    std::string base = *out_path;
    std::size_t slash = base.find_last_of('/');
    if (slash != std::string::npos) base = base.substr(slash + 1);
    std::size_t dot = base.rfind(".json");
    stem = dot == std::string::npos ? base : base.substr(0, dot);
  }
  std::string envelope_name;
  for (const auto& [suffix, content] : sec.csvs) {
    if (out_path) {
      std::string name = stem + "." + suffix + ".csv";
      out.side_files[name] = content;
      sec.section[suffix] = {{"file", name}};
      if (suffix == "envelope") envelope_name = name;
    } else {
      sec.section[suffix] = {{"csv", content}};
      if (suffix == "envelope") envelope_name = "envelope.csv";
    }
  }
  if (eff.str("emit_gnuplot", "") == "1" && !envelope_name.empty()) {
    if (out_path)
      out.side_files[stem + ".gnuplot"] = gnuplot_script(envelope_name);
    else
      sec.section["gnuplot"] = gnuplot_script(envelope_name);
  }

  bool match = true, has_expectation = false;
  if (builtin) {
    auto it = builtin->expected.find(*property);
    if (it != builtin->expected.end()) {
      has_expectation = true;
      match = sec.outcome == it->second;
      sec.section["expectation"] = {
          {"expected", it->second}, {"outcome", sec.outcome}, {"match", match}};
    }
  }
  if (!has_expectation) sec.section["expectation"] = nullptr;

  nlohmann::json report;
  report["schema"] = kReportSchema;
  report["tool"] = {{"name", kToolName}, {"version", kToolVersion}};
  nlohmann::json echo = nlohmann::json::object();
  for (const auto& [key, val] : eff.kv)
    if (key != "threads" && key != "out" && key != "emit_gnuplot") echo[key] = val;
  report["config"] = echo;
  report["system"] = {{"name", *system}, {"dim", def.n}, {"builtin", builtin != nullptr}};
  report["sections"] = nlohmann::json::array({sec.section});

  double seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  report["timing"] = {{"seconds", seconds}};
  report["determinism_hash"] = report_hash(report);
  out.report = std::move(report);

  static const std::set<std::string> certifying = {"convergent", "contraction", "demidovic",
                                                   "lyapunov-check"};
  if (has_expectation) {
    out.exit_code = match ? 0 : 1;
  } else if (sec.outcome == "error" ||
             (sec.outcome == "falsified" && certifying.count(*property))) {
    out.exit_code = 1;
  } else {
    out.exit_code = 0;
  }
  return out;
}

}  // namespace converge
