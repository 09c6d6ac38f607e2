#include "converge/convergent_analysis.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

namespace converge {

namespace {

constexpr double kBoundednessCap = 1e6;

std::string num_text(double v) {
  std::array<char, 64> buf;
  auto res = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  return std::string(buf.data(), res.ptr);
}

}  // namespace

const char* to_string(ReferenceFailureKind k) {
  switch (k) {
    case ReferenceFailureKind::Diverged: return "diverged";
    case ReferenceFailureKind::NoAgreement: return "no-agreement";
    case ReferenceFailureKind::Unbounded: return "unbounded";
  }
  return "?";
}

std::string ReferenceTrajectory::to_csv() const {
  std::ostringstream os;
  os << "k";
  std::size_t n = trajectory.states.empty() ? 0 : trajectory.states.front().size();
  for (std::size_t d = 0; d < n; ++d) os << ",x" << d + 1;
  os << "\n";
  for (long long k = k_start; k <= k_end; ++k) {
    os << k;
    for (double v : at(k)) os << "," << num_text(v);
    os << "\n";
  }
  return os.str();
}

std::vector<Vec> default_probes(const Box& box) {
  int n = box.dim();
  std::vector<Vec> probes;
  Vec center(static_cast<std::size_t>(n)), half(static_cast<std::size_t>(n));
  for (int d = 0; d < n; ++d) {
    auto [lo, hi] = box.axes[static_cast<std::size_t>(d)];
    center[static_cast<std::size_t>(d)] = (lo + hi) / 2.0;
    half[static_cast<std::size_t>(d)] = (hi - lo) / 2.0;
  }
  for (unsigned i = 0; i < 8; ++i) {
    Vec p = center;
    for (int d = 0; d < n; ++d) {
      double sign = ((i + 1) >> (d % 8)) & 1u ? 1.0 : -1.0;
      p[static_cast<std::size_t>(d)] += sign * half[static_cast<std::size_t>(d)];
    }
    probes.push_back(std::move(p));
  }
  probes.push_back(center);
  return probes;
}

ReferenceResult find_reference(const SystemDef& def, std::pair<long long, long long> window,
                               long long washout, const std::vector<Vec>& probes, double tol,
                               int threads) {
  if (washout < 1) throw InvalidDomain("find_reference: washout below 1");
  if (probes.empty()) throw InvalidDomain("find_reference: no probes");
  if (window.second < window.first) throw InvalidWindow("find_reference: empty window");

  const long long k_start = window.first;
  const long long k_end = window.second;
  const long long horizon = washout + (k_end - k_start);

  std::vector<Trajectory> runs(probes.size());
  parallel_for(probes.size(), threads, [&](std::size_t i) {
    runs[i] = simulate(def, k_start - washout, probes[i], horizon);
  });

  ReferenceResult out;
  for (std::size_t i = 0; i < runs.size(); ++i) {
    if (runs[i].covers(k_start)) continue;
    out.failure = {ReferenceFailureKind::Diverged, 0.0,
                   "probe " + std::to_string(i) + " stopped during washout: " +
                       runs[i].stop.detail};
    return out;
  }

  double agreement = 0.0;
  for (std::size_t i = 0; i < runs.size(); ++i)
    for (std::size_t j = i + 1; j < runs.size(); ++j)
      agreement = std::max(agreement, norm2(sub(runs[i].at(k_start), runs[j].at(k_start))));
  if (agreement > tol) {
    out.failure = {ReferenceFailureKind::NoAgreement, agreement,
                   "probes do not collapse: spread " + num_text(agreement)};
    return out;
  }

  // The median-norm probe keeps the result on a genuine solution.
  std::vector<std::size_t> order(runs.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return norm2(runs[a].at(k_start)) < norm2(runs[b].at(k_start));
  });
  const Trajectory& chosen = runs[order[order.size() / 2]];

  double bound = 0.0;
  for (long long k = k_start; k <= k_end; ++k) {
    if (!chosen.covers(k)) {
      out.failure = {ReferenceFailureKind::Unbounded, 0.0,
                     "overflow inside window: " + chosen.stop.detail};
      return out;
    }
    bound = std::max(bound, norm2(chosen.at(k)));
  }
  if (bound > kBoundednessCap) {
    out.failure = {ReferenceFailureKind::Unbounded, 0.0,
                   "window sup " + num_text(bound) + " exceeds cap"};
    return out;
  }

  // Growth screen: a trajectory that keeps climbing well past the window has
  // no bounded continuation worth reporting.
  long long ext = 10 * std::max<long long>(100, k_end - k_start);
  Trajectory tail = simulate(def, k_end, chosen.at(k_end), ext);
  if (tail.truncated()) {
    out.failure = {ReferenceFailureKind::Unbounded, 0.0,
                   "overflow on extension: " + tail.stop.detail};
    return out;
  }
  bool nondecreasing = true;
  for (long long k = k_end + ext / 2; k < k_end + ext; ++k)
    if (norm2(tail.at(k + 1)) < norm2(tail.at(k))) {
      nondecreasing = false;
      break;
    }
  double final_norm = norm2(tail.at(k_end + ext));
  if (nondecreasing && final_norm >= 2.0 * std::max(1.0, bound)) {
    out.failure = {ReferenceFailureKind::Unbounded, 0.0,
                   "still growing " + num_text(ext) + " steps past the window (|x| " +
                       num_text(final_norm) + ")"};
    return out;
  }

  ReferenceTrajectory ref;
  ref.k_start = k_start;
  ref.k_end = k_end;
  ref.washout = washout;
  ref.agreement = agreement;
  ref.bound = bound;
  ref.trajectory.k0 = k_start;
  for (long long k = k_start; k <= k_end; ++k) ref.trajectory.states.push_back(chosen.at(k));
  out.ref = std::move(ref);
  return out;
}

ConvergenceCheck check_convergence(const SystemDef& def, const ReferenceTrajectory& ref,
                                   const PointGrid& samples, const ConvergenceOptions& opts) {
  if (opts.K < 1) throw InvalidDomain("check_convergence: horizon below 1");
  for (const auto& [k0, xi] : samples.pts)
    if (k0 < ref.k_start || k0 + opts.K > ref.k_end)
      throw InvalidWindow("check_convergence: sample start leaves no room for the horizon");

  ConvergenceCheck out;
  out.series.resize(samples.size());
  parallel_for(samples.size(), opts.threads, [&](std::size_t i) {
    const auto& [k0, xi] = samples.pts[i];
    SeparationSeries s;
    s.xi1 = xi;
    s.xi2 = ref.at(k0);
    s.k0 = k0;
    Trajectory t = simulate(def, k0, xi, opts.K);
    long long lags = t.last_k() - k0;
    for (long long d = 0; d <= lags; ++d)
      s.seps.push_back(norm2(sub(t.at(k0 + d), ref.at(k0 + d))));
    s.truncated = t.truncated();
    out.series[i] = std::move(s);
  });

  out.envelope = build_envelope(out.series, opts.K);
  try {
    out.fit = fit_exp_rate(out.series, {0, static_cast<int>(opts.K)});
  } catch (const InvalidWindow&) {
    out.fit.window = {0, static_cast<int>(opts.K)};  // nothing to fit, keep defaults
  }

  RuleScanResult scan = scan_separation_rules(out.series, opts.K, opts.growth_threshold);
  out.verdict.samples_used = samples.size();
  out.verdict.constants["growth_threshold"] = opts.growth_threshold;
  out.verdict.constants["horizon"] = static_cast<double>(opts.K);
  if (scan.falsified) {
    out.verdict.status = VerdictStatus::Falsified;
    out.verdict.witness = scan.witness;
    return out;
  }

  // Certification requires every nontrivial sample to actually decay.
  for (const auto& s : out.series) {
    double s0 = s.initial();
    if (s0 == 0.0) continue;
    double last = s.seps.back();
    if (static_cast<long long>(s.seps.size()) != opts.K + 1 ||
        last > opts.decay_target * s0) {
      out.verdict.status = VerdictStatus::Inconclusive;
      out.verdict.notes.push_back("deviation from " + num_text(s0) + " only reached " +
                                  num_text(last) + " at the horizon");
      return out;
    }
  }
  out.verdict.status = VerdictStatus::Certified;
  out.verdict.scope = "on-samples";
  if (!out.fit.degenerate) {
    out.verdict.constants["kappa"] = out.fit.kappa;
    out.verdict.constants["lambda"] = out.fit.lambda;
    if (out.fit.exponential()) out.verdict.notes.push_back("exponential rate fit");
  }
  return out;
}

Verdict uniqueness_probe(const SystemDef& def, const ReferenceTrajectory& ref,
                         const std::vector<Vec>& alt_probes, long long lookback, double tol,
                         int threads) {
  if (lookback < 1) throw InvalidDomain("uniqueness_probe: lookback below 1");

  struct ProbeResult {
    bool bounded = false;
    double residual = 0.0;
  };
  std::vector<ProbeResult> results(alt_probes.size());
  parallel_for(alt_probes.size(), threads, [&](std::size_t i) {
    Trajectory t = simulate(def, ref.k_start - lookback, alt_probes[i], lookback);
    ProbeResult r;
    if (t.covers(ref.k_start)) {
      double sup = 0.0;
      for (const auto& x : t.states) sup = std::max(sup, norm2(x));
      if (sup <= kBoundednessCap) {
        r.bounded = true;
        r.residual = norm2(sub(t.at(ref.k_start), ref.at(ref.k_start)));
      }
    }
    results[i] = r;
  });

  Verdict verdict;
  double worst = -1.0;
  std::size_t worst_idx = alt_probes.size(), bounded = 0;
  for (std::size_t i = 0; i < results.size(); ++i) {
    if (!results[i].bounded) {
      verdict.notes.push_back("probe " + std::to_string(i) + " not bounded over the lookback");
      continue;
    }
    ++bounded;
    if (results[i].residual > worst) {
      worst = results[i].residual;
      worst_idx = i;
    }
  }
  verdict.samples_used = bounded;
  if (bounded == 0) {
    verdict.status = VerdictStatus::Inconclusive;
    verdict.notes.push_back("no bounded probes");
    return verdict;
  }
  verdict.constants["max_residual"] = worst;
  if (worst <= tol) {
    verdict.status = VerdictStatus::Certified;
    verdict.scope = "on-samples";
  } else {
    verdict.status = VerdictStatus::Falsified;
    verdict.witness = {alt_probes[worst_idx], ref.at(ref.k_start), ref.k_start - lookback,
                       ref.k_start, worst, tol};
    verdict.notes.push_back("residual above tol; lookback may be too short");
  }
  return verdict;
}

Verdict verify_convergent_lyapunov(const SystemDef& def, const CandidateV& cand,
                                   const ReferenceTrajectory& ref, const PointGrid& grid,
                                   double c, int threads) {
  if (cand.mode != CandidateMode::Convergent)
    throw InvalidDomain("verify_convergent_lyapunov: candidate mode must be convergent");
  if (cand.n > def.n) throw InvalidShape("verify_convergent_lyapunov: candidate dimension");
  for (const auto& [k, x] : grid.pts)
    if (k < ref.k_start || k + 1 > ref.k_end)
      throw InvalidWindow("verify_convergent_lyapunov: grid time outside reference window");
  if (c < 0.0) c = cand.alpha2(ref.bound);

  struct PointResult {
    double violation = -std::numeric_limits<double>::infinity();
    double observed = 0.0;
    double allowed = 0.0;
    int which = -1;  // 0 lower, 1 upper, 2 decrement, 3 V(k,0) cap
    bool domain_error = false;
  };
  std::vector<PointResult> results(grid.size());
  const Vec zero(static_cast<std::size_t>(def.n), 0.0);

  parallel_for(grid.size(), threads, [&](std::size_t i) {
    const auto& [k, x] = grid.pts[i];
    PointResult r;
    try {
      double s = norm2(sub(x, ref.at(k)));
      double v0 = eval_candidate(cand, k, x);
      double tol = 1e-9 * std::max(1.0, std::abs(v0));
      Vec fx = eval_map(def, k, x);
      double v1 = eval_candidate(cand, k + 1, fx);
      double v_at_zero = eval_candidate(cand, k, zero);
      double dec = v1 - v0;

      std::array<double, 4> viol = {cand.alpha1(s) - v0 - tol, v0 - cand.alpha2(s) - tol,
                                    dec + cand.alpha3(s) - tol, v_at_zero - c - tol};
      auto it = std::max_element(viol.begin(), viol.end());
      r.violation = *it;
      r.which = static_cast<int>(it - viol.begin());
      switch (r.which) {
        case 0: r.observed = v0; r.allowed = cand.alpha1(s); break;
        case 1: r.observed = v0; r.allowed = cand.alpha2(s); break;
        case 2: r.observed = dec; r.allowed = -cand.alpha3(s); break;
        default: r.observed = v_at_zero; r.allowed = c; break;
      }
    } catch (const EvalDomainError&) {
      r.domain_error = true;
    }
    results[i] = r;
  });

  Verdict verdict;
  std::size_t checked = 0, skipped = 0;
  double worst = 0.0;
  std::size_t worst_idx = grid.size();
  for (std::size_t i = 0; i < results.size(); ++i) {
    if (results[i].domain_error) {
      ++skipped;
      continue;
    }
    ++checked;
    if (results[i].violation > worst) {
      worst = results[i].violation;
      worst_idx = i;
    }
  }
  verdict.samples_used = checked;
  verdict.constants["c"] = c;
  if (skipped > 0)
    verdict.notes.push_back(std::to_string(skipped) + " grid points skipped on domain errors");
  if (worst_idx != grid.size()) {
    const auto& [k, x] = grid.pts[worst_idx];
    const auto& r = results[worst_idx];
    verdict.status = VerdictStatus::Falsified;
    verdict.witness = {x, ref.at(k), k, r.which == 2 ? k + 1 : k, r.observed, r.allowed};
    static const char* kWhat[] = {"lower bound violated", "upper bound violated",
                                  "decrement bound violated", "V(k,0) exceeds c"};
    verdict.notes.push_back(kWhat[r.which]);
    verdict.constants["worst_violation"] = worst;
  } else {
    verdict.status = VerdictStatus::Certified;
    verdict.scope = "on-grid";
  }
  return verdict;
}

}  // namespace converge
