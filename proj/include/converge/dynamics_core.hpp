#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include "converge/system_dsl.hpp"

namespace converge {

inline constexpr double kOverflowBound = 1e150;
inline constexpr long long kMaxHorizon = 1000000;

struct StopMark {
  enum class Kind { None, Overflow, DomainError };
  Kind kind = Kind::None;
  long long at_k = 0;  // step index at which the next state was rejected
  std::string detail;
};

// States at k0, k0+1, ..., possibly truncated (see stop).
struct Trajectory {
  long long k0 = 0;
  std::vector<Vec> states;
  StopMark stop;

  bool truncated() const { return stop.kind != StopMark::Kind::None; }
  long long last_k() const { return k0 + static_cast<long long>(states.size()) - 1; }
  bool covers(long long k) const { return k >= k0 && k <= last_k(); }
  const Vec& at(long long k) const { return states[static_cast<std::size_t>(k - k0)]; }
};

// K steps forward from (k0, xi); K+1 states when no overflow occurs.
// A computed state with any non-finite entry or |x_i| > 1e150 truncates the
// trajectory with an overflow mark rather than raising.
Trajectory simulate(const SystemDef& def, long long k0, const Vec& xi, long long K);

enum class JacobianMethod { Analytic, Ad, Fd };

// df/dx at (k, x). Fd uses central differences with per-component step
// 1e-6 * max(1, |x_i|). With method Ad and strict set, a kink raises
// NonSmoothPoint; otherwise *nonsmooth reports the flag.
Matrix jacobian(const SystemDef& def, long long k, const Vec& x, JacobianMethod method,
                bool* nonsmooth = nullptr, bool strict = false);

// Two decoupled copies driven by the same clock; state dimension doubles.
// A declared analytic jacobian carries over block-diagonally; metric grids do not.
SystemDef augment(const SystemDef& def);

// |z|_delta = |first half - second half| / sqrt(2); odd length -> InvalidShape.
double diagonal_distance(const Vec& z);

struct TransferMatrix {
  long long k0 = 0;
  long long k = 0;
  Vec xi;
  Matrix m;
  bool nonsmooth = false;
};

// Product of jacobians along the trajectory from (k0, xi) up to k
// (identity at k == k0). Declared analytic jacobians are preferred; forward
// mode otherwise. Overflow before k -> TransferUnavailable.
TransferMatrix transfer_matrix(const SystemDef& def, long long k0, long long k, const Vec& xi);

}  // namespace converge
