#include "converge/incremental_analysis.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

namespace converge {

const char* to_string(VerdictStatus s) {
  switch (s) {
    case VerdictStatus::Certified: return "certified";
    case VerdictStatus::Falsified: return "falsified";
    case VerdictStatus::Inconclusive: return "inconclusive";
  }
  return "?";
}

namespace {

std::string num_text(double v) {
  std::array<char, 64> buf;
  auto res = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  return std::string(buf.data(), res.ptr);
}

SeparationSeries pair_series(const SystemDef& def, long long k0, const Vec& xi1, const Vec& xi2,
                             long long K) {
  SeparationSeries s;
  s.xi1 = xi1;
  s.xi2 = xi2;
  s.k0 = k0;
  Trajectory t1 = simulate(def, k0, xi1, K);
  Trajectory t2 = simulate(def, k0, xi2, K);
  long long lags = std::min(t1.last_k(), t2.last_k()) - k0;
  s.seps.reserve(static_cast<std::size_t>(lags) + 1);
  for (long long d = 0; d <= lags; ++d)
    s.seps.push_back(norm2(sub(t1.at(k0 + d), t2.at(k0 + d))));
  s.truncated = t1.truncated() || t2.truncated();
  return s;
}

}  // namespace

RuleScanResult scan_separation_rules(const std::vector<SeparationSeries>& series, long long K,
                                     double growth_threshold) {
  RuleScanResult res;
  const double T = growth_threshold;

  // Divergence by overflow: the pair left the representable range.
  for (const auto& s : series) {
    if (!s.truncated) continue;
    res.falsified = true;
    res.witness = {s.xi1, s.xi2, s.k0,
                   s.k0 + static_cast<long long>(s.seps.size()),
                   std::numeric_limits<double>::infinity(), T * s.initial()};
    return res;
  }

  // Cross-pair comparison: pair A grows past T * s_A at lag d while some pair
  // with initial separation >= s_A sits below s_A at the same lag. A single
  // class-KL envelope cannot track both.
  std::vector<std::size_t> order(series.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return series[a].initial() < series[b].initial();
  });
  std::vector<double> suffix_min(series.size() + 1);
  for (long long d = 1; d <= K; ++d) {
    suffix_min[series.size()] = std::numeric_limits<double>::infinity();
    for (std::size_t p = series.size(); p-- > 0;) {
      const auto& s = series[order[p]];
      double v = d < static_cast<long long>(s.seps.size())
                     ? s.seps[static_cast<std::size_t>(d)]
                     : std::numeric_limits<double>::infinity();
      suffix_min[p] = std::min(suffix_min[p + 1], v);
    }
    for (std::size_t p = 0; p < series.size(); ++p) {
      const auto& a = series[order[p]];
      double sa = a.initial();
      if (sa <= 0.0 || d >= static_cast<long long>(a.seps.size())) continue;
      double sep_ad = a.seps[static_cast<std::size_t>(d)];
      if (sep_ad > T * sa && suffix_min[p] < sa) {
        res.falsified = true;
        res.witness = {a.xi1, a.xi2, a.k0, a.k0 + d, sep_ad, T * sa};
        return res;
      }
    }
  }

  // Divergence by sustained growth over the tail of the horizon.
  long long W = std::max<long long>(1, K / 2);
  for (const auto& s : series) {
    if (static_cast<long long>(s.seps.size()) != K + 1) continue;
    double s0 = s.initial();
    if (s0 <= 0.0) continue;
    double last = s.seps.back();
    if (!(last > T * s0)) continue;
    bool monotone = true;
    for (long long d = K - W; d < K; ++d)
      if (!(s.seps[static_cast<std::size_t>(d + 1)] > s.seps[static_cast<std::size_t>(d)])) {
        monotone = false;
        break;
      }
    if (monotone) {
      res.falsified = true;
      res.witness = {s.xi1, s.xi2, s.k0, s.k0 + K, last, T * s0};
      return res;
    }
  }
  return res;
}

EnvelopeTable build_envelope(const std::vector<SeparationSeries>& series, long long K) {
  EnvelopeTable table;
  for (long long d = 0; d <= K; ++d) table.lags.push_back(d);

  double smin = std::numeric_limits<double>::infinity();
  double smax = 0.0;
  for (const auto& s : series) {
    double v = s.initial();
    if (v > 0.0) {
      smin = std::min(smin, v);
      smax = std::max(smax, v);
    }
  }
  if (smax == 0.0) {
    table.s_buckets.push_back(0.0);
    table.max_sep.assign(1, std::vector<double>(table.lags.size(), 0.0));
    return table;
  }

  int hi = static_cast<int>(std::ceil(std::log2(smax)));
  int lo = static_cast<int>(std::floor(std::log2(smin)));
  lo = std::max(lo, hi - 40);
  for (int m = lo; m <= hi; ++m) table.s_buckets.push_back(std::pow(2.0, m));

  table.max_sep.assign(table.s_buckets.size(), std::vector<double>(table.lags.size(), 0.0));
  for (const auto& s : series) {
    double s0 = s.initial();
    if (s0 <= 0.0) continue;
    std::size_t b = 0;
    while (b + 1 < table.s_buckets.size() && table.s_buckets[b] < s0) ++b;
    for (std::size_t d = 0; d < s.seps.size() && d < table.lags.size(); ++d)
      table.max_sep[b][d] = std::max(table.max_sep[b][d], s.seps[d]);
  }
  // Cumulative over ascending buckets: e(s, d) is monotone in s by construction.
  for (std::size_t b = 1; b < table.max_sep.size(); ++b)
    for (std::size_t d = 0; d < table.lags.size(); ++d)
      table.max_sep[b][d] = std::max(table.max_sep[b][d], table.max_sep[b - 1][d]);
  return table;
}

std::string EnvelopeTable::to_csv() const {
  std::ostringstream os;
  os << "s_bucket,lag,max_sep\n";
  for (std::size_t b = 0; b < s_buckets.size(); ++b)
    for (std::size_t d = 0; d < lags.size(); ++d)
      os << num_text(s_buckets[b]) << "," << lags[d] << "," << num_text(max_sep[b][d]) << "\n";
  return os.str();
}

FalsifyResult falsify_incremental(const SystemDef& def, const Box& box,
                                  const FalsifyOptions& opts) {
  if (box.dim() != def.n) throw InvalidShape("falsify_incremental: box dimension mismatch");
  if (opts.budget < 2) throw InvalidDomain("falsify_incremental: budget below 2");
  if (opts.K < 1 || opts.K > kMaxHorizon) throw InvalidDomain("falsify_incremental: bad horizon");
  if (opts.growth_threshold < 1.0)
    throw InvalidDomain("falsify_incremental: growth threshold below 1");

  const int n = def.n;
  const int half = opts.budget / 2;
  std::vector<SeparationSeries> series(static_cast<std::size_t>(opts.budget));

  parallel_for(static_cast<std::size_t>(opts.budget), opts.threads, [&](std::size_t i) {
    Rng rng(mix_seed(opts.seed, i));
    Vec xi1(static_cast<std::size_t>(n)), xi2(static_cast<std::size_t>(n));
    if (static_cast<int>(i) < half) {
      // Small separation at a base point drawn from a geometric radius stratum.
      double scale = std::pow(2.0, -static_cast<double>(i % 10));
      for (int d = 0; d < n; ++d) {
        auto [lo, hi] = box.axes[static_cast<std::size_t>(d)];
        double c = (lo + hi) / 2.0, h = (hi - lo) / 2.0;
        xi1[static_cast<std::size_t>(d)] = c + scale * h * rng.uniform(-1.0, 1.0);
      }
      Vec dir(static_cast<std::size_t>(n));
      double len = 0.0;
      for (int d = 0; d < n; ++d) {
        dir[static_cast<std::size_t>(d)] = rng.uniform(-1.0, 1.0);
        len += dir[static_cast<std::size_t>(d)] * dir[static_cast<std::size_t>(d)];
      }
      len = std::sqrt(len);
      double mag = rng.uniform();
      for (int d = 0; d < n; ++d)
        xi2[static_cast<std::size_t>(d)] =
            xi1[static_cast<std::size_t>(d)] +
            (len > 0.0 ? mag * dir[static_cast<std::size_t>(d)] / len : 0.0);
    } else {
      for (int d = 0; d < n; ++d) {
        auto [lo, hi] = box.axes[static_cast<std::size_t>(d)];
        xi1[static_cast<std::size_t>(d)] = rng.uniform(lo, hi);
        xi2[static_cast<std::size_t>(d)] = rng.uniform(lo, hi);
      }
    }
    long long k0 = rng.uniform_int(opts.k0_range.first, opts.k0_range.second);
    series[i] = pair_series(def, k0, xi1, xi2, opts.K);
  });

  FalsifyResult res;
  res.series = std::move(series);
  res.envelope = build_envelope(res.series, opts.K);

  RuleScanResult scan = scan_separation_rules(res.series, opts.K, opts.growth_threshold);
  res.verdict.samples_used = static_cast<std::size_t>(opts.budget);
  res.verdict.constants["growth_threshold"] = opts.growth_threshold;
  res.verdict.constants["horizon"] = static_cast<double>(opts.K);
  if (scan.falsified) {
    res.verdict.status = VerdictStatus::Falsified;
    res.verdict.witness = scan.witness;
  } else {
    res.verdict.status = VerdictStatus::Inconclusive;
    res.verdict.notes.push_back("sampling can falsify but never certify; see envelope");
  }
  return res;
}

RateFit fit_exp_rate(const std::vector<SeparationSeries>& series, std::pair<int, int> window) {
  if (window.first < 0 || window.second <= window.first)
    throw InvalidWindow("fit_exp_rate: need at least two lags");

  RateFit fit;
  fit.window = window;

  std::vector<std::pair<double, double>> pts;  // (d, log sep - log s0)
  for (const auto& s : series) {
    double s0 = s.initial();
    for (int d = window.first; d <= window.second; ++d) {
      if (d >= static_cast<int>(s.seps.size())) break;
      double v = s.seps[static_cast<std::size_t>(d)];
      if (v == 0.0 || s0 == 0.0) {
        fit.degenerate = true;
        fit.kappa = 1.0;
        fit.lambda = std::numeric_limits<double>::infinity();
        fit.residual = 0.0;
        return fit;
      }
      pts.emplace_back(static_cast<double>(d), std::log(v) - std::log(s0));
    }
  }

  double dmin = std::numeric_limits<double>::infinity(), dmax = -dmin;
  for (auto& [d, z] : pts) {
    dmin = std::min(dmin, d);
    dmax = std::max(dmax, d);
  }
  if (pts.size() < 2 || dmin == dmax)
    throw InvalidWindow("fit_exp_rate: not enough lags inside window");

  double n = static_cast<double>(pts.size());
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (auto& [d, z] : pts) {
    sx += d;
    sy += z;
    sxx += d * d;
    sxy += d * z;
  }
  double slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
  double intercept = (sy - slope * sx) / n;

  double ss = 0;
  for (auto& [d, z] : pts) {
    double r = z - (intercept + slope * d);
    ss += r * r;
  }
  fit.lambda = std::exp(-slope);
  fit.kappa = std::max(1.0, std::exp(intercept));
  fit.residual = std::sqrt(ss / n);
  return fit;
}

Verdict verify_incremental_lyapunov(const SystemDef& def, const CandidateV& cand,
                                    const PairGrid& grid, int threads) {
  if (cand.mode == CandidateMode::Convergent)
    throw InvalidDomain("verify_incremental_lyapunov: candidate mode is convergent");
  if (cand.n > def.n) throw InvalidShape("verify_incremental_lyapunov: candidate dimension");

  struct PointResult {
    double violation = -std::numeric_limits<double>::infinity();
    double observed = 0.0;
    double allowed = 0.0;
    int which = -1;  // 0: lower bound, 1: upper bound, 2: decrement
    bool domain_error = false;
  };
  std::vector<PointResult> results(grid.size());

  parallel_for(grid.size(), threads, [&](std::size_t i) {
    const auto& [k, x1, x2] = grid.pts[i];
    PointResult r;
    try {
      double s = norm2(sub(x1, x2));
      double v0 = eval_candidate(cand, k, x1, x2);
      double tol = 1e-9 * std::max(1.0, std::abs(v0));
      double lo = cand.alpha1(s), hi = cand.alpha2(s);
      Vec f1 = eval_map(def, k, x1);
      Vec f2 = eval_map(def, k, x2);
      double v1 = eval_candidate(cand, k + 1, f1, f2);
      double dec = v1 - v0;

      double viol_lo = lo - v0 - tol;
      double viol_hi = v0 - hi - tol;
      double viol_dec = dec + cand.alpha3(s) - tol;
      r.violation = std::max({viol_lo, viol_hi, viol_dec});
      if (r.violation == viol_dec) {
        r.which = 2;
        r.observed = dec;
        r.allowed = -cand.alpha3(s);
      } else if (r.violation == viol_hi) {
        r.which = 1;
        r.observed = v0;
        r.allowed = hi;
      } else {
        r.which = 0;
        r.observed = v0;
        r.allowed = lo;
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
  if (skipped > 0)
    verdict.notes.push_back(num_text(static_cast<double>(skipped)) +
                            " grid points skipped on domain errors");
  if (worst_idx != grid.size()) {
    const auto& [k, x1, x2] = grid.pts[worst_idx];
    const auto& r = results[worst_idx];
    verdict.status = VerdictStatus::Falsified;
    verdict.witness = {x1, x2, k, r.which == 2 ? k + 1 : k, r.observed, r.allowed};
    verdict.notes.push_back(r.which == 0   ? "lower bound violated"
                            : r.which == 1 ? "upper bound violated"
                                           : "decrement bound violated");
    verdict.constants["worst_violation"] = worst;
  } else {
    verdict.status = VerdictStatus::Certified;
    verdict.scope = "on-grid";
  }
  return verdict;
}

}  // namespace converge
