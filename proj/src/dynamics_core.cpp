#include "converge/dynamics_core.hpp"

#include <cmath>

namespace converge {

namespace {

bool state_ok(const Vec& x) {
  for (double v : x)
    if (!std::isfinite(v) || std::abs(v) > kOverflowBound) return false;
  return true;
}

}  // namespace

Trajectory simulate(const SystemDef& def, long long k0, const Vec& xi, long long K) {
  if (K < 0 || K > kMaxHorizon) throw InvalidDomain("simulate: horizon out of range");
  if (static_cast<int>(xi.size()) != def.n) throw InvalidShape("simulate: state dimension mismatch");

  Trajectory traj;
  traj.k0 = k0;
  traj.states.reserve(static_cast<std::size_t>(K) + 1);
  traj.states.push_back(xi);

  Vec x = xi;
  for (long long step = 0; step < K; ++step) {
    long long k = k0 + step;
    Vec next;
    try {
      next = eval_map(def, k, x);
    } catch (const EvalDomainError& e) {
      traj.stop = {StopMark::Kind::DomainError, k + 1, e.node};
      return traj;
    }
    if (!state_ok(next)) {
      traj.stop = {StopMark::Kind::Overflow, k + 1, ""};
      return traj;
    }
    traj.states.push_back(next);
    x = std::move(next);
  }
  return traj;
}

Matrix jacobian(const SystemDef& def, long long k, const Vec& x, JacobianMethod method,
                bool* nonsmooth, bool strict) {
  if (nonsmooth) *nonsmooth = false;
  switch (method) {
    case JacobianMethod::Analytic:
      return eval_jacobian_analytic(def, k, x);
    case JacobianMethod::Ad: {
      AdResult r = eval_jacobian_ad(def, k, x);
      if (r.nonsmooth) {
        if (strict) throw NonSmoothPoint("jacobian: kink at evaluation point");
        if (nonsmooth) *nonsmooth = true;
      }
      return r.jac;
    }
    case JacobianMethod::Fd: {
      Matrix j(def.n);
      Vec lo = x, hi = x;
      for (int c = 0; c < def.n; ++c) {
        double h = 1e-6 * std::max(1.0, std::abs(x[c]));
        hi[c] = x[c] + h;
        lo[c] = x[c] - h;
        Vec fp = eval_map(def, k, hi);
        Vec fm = eval_map(def, k, lo);
        for (int r = 0; r < def.n; ++r) j(r, c) = (fp[r] - fm[r]) / (2.0 * h);
        hi[c] = x[c];
        lo[c] = x[c];
      }
      return j;
    }
  }
  throw InvalidDomain("jacobian: unknown method");
}

namespace {

ExprAst shift_state_indices(const ExprAst& e, int offset) {
  ExprAst out = e;
  if (out.kind == NodeKind::StateX) out.index += offset;
  for (auto& kid : out.kids) kid = shift_state_indices(kid, offset);
  return out;
}

ExprAst zero_node() {
  ExprAst z;
  z.kind = NodeKind::Number;
  z.value = 0.0;
  return z;
}

}  // namespace

SystemDef augment(const SystemDef& def) {
  SystemDef aug;
  aug.n = 2 * def.n;
  aug.name = def.name.empty() ? "" : def.name + "-augmented";
  aug.f.reserve(aug.n);
  for (const auto& e : def.f) aug.f.push_back(e);
  for (const auto& e : def.f) aug.f.push_back(shift_state_indices(e, def.n));

  if (def.has_jacobian()) {
    aug.jac.assign(aug.n, std::vector<ExprAst>(aug.n, zero_node()));
    for (int r = 0; r < def.n; ++r)
      for (int c = 0; c < def.n; ++c) {
        aug.jac[r][c] = def.jac[r][c];
        aug.jac[def.n + r][def.n + c] = shift_state_indices(def.jac[r][c], def.n);
      }
  }
  return aug;
}

double diagonal_distance(const Vec& z) {
  if (z.size() % 2 != 0) throw InvalidShape("diagonal_distance: odd-length state");
  std::size_t n = z.size() / 2;
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double d = z[i] - z[n + i];
    acc += d * d;
  }
  return std::sqrt(acc) / std::sqrt(2.0);
}

TransferMatrix transfer_matrix(const SystemDef& def, long long k0, long long k, const Vec& xi) {
  if (k < k0) throw InvalidWindow("transfer_matrix: k < k0");
  if (k - k0 > kMaxHorizon) throw InvalidDomain("transfer_matrix: horizon out of range");

  Trajectory traj = simulate(def, k0, xi, k - k0);
  if (!traj.covers(k))
    throw TransferUnavailable("transfer_matrix: trajectory stopped at step " +
                              std::to_string(traj.stop.at_k));

  TransferMatrix tm;
  tm.k0 = k0;
  tm.k = k;
  tm.xi = xi;
  tm.m = Matrix::identity(def.n);

  JacobianMethod method = def.has_jacobian() ? JacobianMethod::Analytic : JacobianMethod::Ad;
  for (long long j = k0; j < k; ++j) {
    bool flag = false;
    Matrix jac = jacobian(def, j, traj.at(j), method, &flag);
    if (flag) tm.nonsmooth = true;
    tm.m = jac * tm.m;
  }
  return tm;
}

}  // namespace converge
