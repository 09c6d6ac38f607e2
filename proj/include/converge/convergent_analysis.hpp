#pragma once

#include <optional>

#include "converge/incremental_analysis.hpp"

namespace converge {

// Steady-state trajectory every bounded solution is attracted to, computed on
// a finite window by washout from the distant past.
struct ReferenceTrajectory {
  Trajectory trajectory;  // covers [k_start, k_end]
  long long k_start = 0;
  long long k_end = 0;
  double bound = 0.0;      // sup |xbar(k)| over the window
  long long washout = 0;   // pre-run length m
  double agreement = 0.0;  // max pairwise probe distance at k_start
  const Vec& at(long long k) const { return trajectory.at(k); }
  std::string to_csv() const;  // header: k,x1,...,xn
};

enum class ReferenceFailureKind { Diverged, NoAgreement, Unbounded };
struct ReferenceFailure {
  ReferenceFailureKind kind;
  double agreement = 0.0;  // populated for NoAgreement
  std::string detail;
};
const char* to_string(ReferenceFailureKind k);

struct ReferenceResult {
  std::optional<ReferenceTrajectory> ref;
  std::optional<ReferenceFailure> failure;
  bool ok() const { return ref.has_value(); }
};

// Default probe set: corner-pattern points on the box boundary plus the center.
std::vector<Vec> default_probes(const Box& box);

// Simulates every probe from k_start - m. Accepts when the probe states at
// k_start collapse within tol; the returned trajectory continues the probe of
// median norm at k_start (an actual solution, so it satisfies the dynamics).
// Bounded means sup over the window <= 1e6; on top of that the accepted
// trajectory is extended 10*max(100, window) steps and rejected as Unbounded
// when it keeps growing over the extension's second half to at least twice
// the window sup. Overflow during the washout reports Diverged; overflow on
// the window or extension reports Unbounded.
ReferenceResult find_reference(const SystemDef& def, std::pair<long long, long long> window,
                               long long washout, const std::vector<Vec>& probes, double tol,
                               int threads = 0);

struct ConvergenceOptions {
  long long K = 20;
  double growth_threshold = 10.0;
  double decay_target = 0.1;  // final deviation must drop below this fraction
  int threads = 0;
};

// Deviation series |phi(k;k0,xi) - xbar(k)| for each sample, run through the
// same falsification rules as the pair sampler. Unlike pair sampling this can
// certify on samples: no rule fires and every sample with nonzero initial
// deviation decays below decay_target * initial by the end of the horizon.
struct ConvergenceCheck {
  Verdict verdict;
  EnvelopeTable envelope;
  std::vector<SeparationSeries> series;
  RateFit fit;  // pooled over the full lag window
};
ConvergenceCheck check_convergence(const SystemDef& def, const ReferenceTrajectory& ref,
                                   const PointGrid& samples, const ConvergenceOptions& opts);

// Starts alternative probes at k_start - L and measures their distance to the
// reference at k_start. Probes that overflow or exceed the bounded-ness cap
// are excluded with a note; any remaining residual above tol is a witness
// against uniqueness at this lookback.
Verdict uniqueness_probe(const SystemDef& def, const ReferenceTrajectory& ref,
                         const std::vector<Vec>& alt_probes, long long lookback, double tol,
                         int threads = 0);

// Checks alpha1(|x - xbar(k)|) <= V(k,x) <= alpha2(|x - xbar(k)|), the
// one-step decrement against alpha3, and V(k,0) <= c. Pass c < 0 to use
// alpha2(ref.bound), the value the upper bound already implies at x = 0.
Verdict verify_convergent_lyapunov(const SystemDef& def, const CandidateV& cand,
                                   const ReferenceTrajectory& ref, const PointGrid& grid,
                                   double c = -1.0, int threads = 0);

}  // namespace converge
