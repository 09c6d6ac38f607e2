#pragma once

#include "converge/dynamics_core.hpp"
#include "converge/sampling.hpp"
#include "converge/verdict.hpp"

namespace converge {

// Separations |phi(k0+d; k0, xi1) - phi(k0+d; k0, xi2)| for d = 0..; may be
// shorter than requested when a trajectory overflowed (truncated flags it).
struct SeparationSeries {
  Vec xi1;
  Vec xi2;
  long long k0 = 0;
  std::vector<double> seps;
  bool truncated = false;
  double initial() const { return seps.empty() ? 0.0 : seps.front(); }
};

// kappa * lambda^-d envelope fitted by pooled least squares on log separations.
struct RateFit {
  double kappa = 1.0;
  double lambda = 1.0;
  double residual = 0.0;
  std::pair<int, int> window{0, 0};
  bool degenerate = false;  // zero separation inside the window (lambda = +inf)
  // Classified exponential when the fitted decay clears 1.05 with residual <= 0.1.
  bool exponential() const { return lambda >= 1.05 && residual <= 0.1; }
};

// Empirical envelope e(s, d): max separation at lag d over sampled pairs with
// initial separation <= s. Buckets ascending, so rows are monotone in s.
struct EnvelopeTable {
  std::vector<double> s_buckets;
  std::vector<long long> lags;
  std::vector<std::vector<double>> max_sep;  // [bucket][lag]
  std::string to_csv() const;                // header s_bucket,lag,max_sep
};

struct FalsifyOptions {
  long long K = 20;
  int budget = 1000;
  std::uint64_t seed = 42;
  std::pair<long long, long long> k0_range{0, 0};
  double growth_threshold = 10.0;
  int threads = 0;
};

struct FalsifyResult {
  Verdict verdict;
  EnvelopeTable envelope;
  std::vector<SeparationSeries> series;
};

// Stratified pair sampling: half small separations (<= 1) at base points drawn
// from geometric radius strata across the box (far strata expose envelope
// non-uniformity), half independent uniform pairs. Sampling can only falsify:
// it returns Falsified with a witness, or Inconclusive with the envelope.
//
// Falsification fires when (a) some pair's separation at lag d exceeds
// growth_threshold times its initial separation while another pair with
// initial separation at least as large sits below that initial separation at
// the same lag, or (b) a separation diverges (overflow, or strictly growing
// over the last max(1, K/2) steps with final separation above the threshold).
FalsifyResult falsify_incremental(const SystemDef& def, const Box& box,
                                  const FalsifyOptions& opts);

// Pooled fit of log sep_i(d) = log(kappa * s_i) - d log lambda over the lag
// window. Requires at least two distinct lags; a zero separation inside the
// window yields the degenerate lambda = +inf fit.
RateFit fit_exp_rate(const std::vector<SeparationSeries>& series, std::pair<int, int> window);

// Checks alpha1(|x1-x2|) <= V(k,x1,x2) <= alpha2(|x1-x2|) and the one-step
// decrement <= -alpha3(|x1-x2|) on the grid. Mode must be incremental or
// contraction (quadratic constants).
Verdict verify_incremental_lyapunov(const SystemDef& def, const CandidateV& cand,
                                    const PairGrid& grid, int threads = 0);

// Shared separation-rule engine (also used against reference trajectories).
struct RuleScanResult {
  bool falsified = false;
  Witness witness;
};
RuleScanResult scan_separation_rules(const std::vector<SeparationSeries>& series, long long K,
                                     double growth_threshold);

EnvelopeTable build_envelope(const std::vector<SeparationSeries>& series, long long K);

}  // namespace converge
