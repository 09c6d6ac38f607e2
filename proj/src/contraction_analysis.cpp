#include "converge/contraction_analysis.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "converge/dynamics_core.hpp"

namespace converge {

namespace {

double qform(const SymMatrix& q, const Vec& v) {
  double acc = 0.0;
  for (int i = 0; i < q.n; ++i)
    for (int j = 0; j < q.n; ++j)
      acc += v[static_cast<std::size_t>(i)] * q(i, j) * v[static_cast<std::size_t>(j)];
  return acc;
}

SymMatrix symmetrize(const Matrix& a) {
  SymMatrix s(a.n);
  for (int i = 0; i < a.n; ++i)
    for (int j = i; j < a.n; ++j) s.set(i, j, 0.5 * (a(i, j) + a(j, i)));
  return s;
}

JacobianMethod preferred(const SystemDef& def) {
  return def.has_jacobian() ? JacobianMethod::Analytic : JacobianMethod::Ad;
}

struct RawSum {
  SymMatrix Q;
  double last_term = 0.0;  // frobenius norm of the final summand
  bool nonsmooth = false;
};

RawSum q_sum(const SystemDef& def, const Vec& xi, long long k, long long M) {
  Trajectory t = simulate(def, k, xi, M);
  if (t.last_k() < k + M)
    throw TransferUnavailable("q-sum: trajectory from k=" + std::to_string(k) +
                              " stopped early: " + t.stop.detail);
  RawSum out;
  out.Q = SymMatrix(def.n);
  Matrix phi = Matrix::identity(def.n);
  for (long long j = 0; j <= M; ++j) {
    SymMatrix term = gram(phi);
    for (int r = 0; r < def.n; ++r)
      for (int c = r; c < def.n; ++c) out.Q.set(r, c, out.Q(r, c) + term(r, c));
    out.last_term = frobenius(term.full());
    if (j < M) {
      bool ns = false;
      Matrix jac = jacobian(def, k + j, t.at(k + j), preferred(def), &ns, false);
      out.nonsmooth |= ns;
      phi = jac * phi;
    }
  }
  return out;
}

bool upper_triangular(const Matrix& u) {
  for (int i = 1; i < u.n; ++i)
    for (int j = 0; j < i; ++j)
      if (u(i, j) != 0.0) return false;
  return true;
}

// F = b * u^{-1} for upper-triangular u, by forward substitution on u^T.
Matrix right_divide_upper(const Matrix& b, const Matrix& u) {
  int n = u.n;
  for (int i = 0; i < n; ++i)
    if (std::abs(u(i, i)) < 1e-14) throw SingularFactor("metric factor has a zero pivot");
  Matrix f(n);
  for (int row = 0; row < n; ++row) {
    for (int j = 0; j < n; ++j) {
      double acc = b(row, j);
      for (int m = 0; m < j; ++m) acc -= u(m, j) * f(row, m);
      f(row, j) = acc / u(j, j);
    }
  }
  return f;
}

Matrix right_divide(const Matrix& b, const Matrix& theta) {
  if (upper_triangular(theta)) return right_divide_upper(b, theta);
  return b * invert(theta);
}

}  // namespace

MetricField MetricField::identity(int n) {
  MetricField m;
  m.kind_ = Kind::Identity;
  m.n_ = n;
  return m;
}

MetricField MetricField::expression(const SystemDef& def) {
  if (!def.has_theta()) throw InvalidDomain("metric: system declares no theta grid");
  MetricField m;
  m.kind_ = Kind::Expression;
  m.n_ = def.n;
  m.def_ = def;
  return m;
}

MetricField MetricField::q_builder(const SystemDef& def, double kappa, double lambda,
                                   long long M) {
  MetricField m;
  m.kind_ = Kind::QBuilder;
  m.n_ = def.n;
  m.def_ = def;
  m.declared_ = kappa > 0.0 && lambda > 1.0;
  if (m.declared_) {
    m.kappa_ = kappa;
    m.lambda_ = lambda;
    if (M < 0) {
      double tol = 1e-9;
      double l2 = lambda * lambda;
      double target = tol * (l2 - 1.0) / (kappa * kappa * l2);
      M = static_cast<long long>(std::ceil(std::log(target) / (-2.0 * std::log(lambda))));
      M = std::max<long long>(M, 0);
    }
  } else if (M < 0) {
    M = 200;
  }
  m.m_ = M;
  return m;
}

SymMatrix MetricField::q(long long k, const Vec& x) const {
  switch (kind_) {
    case Kind::Identity:
      return SymMatrix::identity(n_);
    case Kind::Expression:
      return gram(eval_theta(def_, k, x));
    case Kind::QBuilder: {
      RawSum rs = q_sum(def_, x, k, m_);
      if (!declared_ && rs.last_term > 1e-12 * frobenius(rs.Q.full()))
        throw TransferUnavailable("q-sum truncation not converged at k=" + std::to_string(k));
      return rs.Q;
    }
  }
  throw InvalidDomain("metric: unknown kind");
}

Matrix MetricField::theta(long long k, const Vec& x) const {
  switch (kind_) {
    case Kind::Identity:
      return Matrix::identity(n_);
    case Kind::Expression:
      return eval_theta(def_, k, x);
    case Kind::QBuilder:
      return cholesky(q(k, x));
  }
  throw InvalidDomain("metric: unknown kind");
}

QBuild build_Q(const SystemDef& def, const Vec& xi, long long k, long long M, double kappa,
               double lambda) {
  if (!(lambda > 1.0)) throw InvalidDomain("build_Q: lambda must exceed 1");
  if (kappa <= 0.0) throw InvalidDomain("build_Q: kappa must be positive");
  if (M < 0 || M > kMaxHorizon) throw InvalidDomain("build_Q: bad truncation horizon");
  RawSum rs = q_sum(def, xi, k, M);
  QBuild out;
  out.Q = std::move(rs.Q);
  out.nonsmooth = rs.nonsmooth;
  double l2 = lambda * lambda;
  out.tail_bound =
      kappa * kappa * std::pow(lambda, -2.0 * static_cast<double>(M)) * l2 / (l2 - 1.0) * def.n;
  return out;
}

Matrix theta_from_Q(const SymMatrix& Q) { return cholesky(Q); }

namespace {

struct MetricPoint {
  bool ok = false;
  double lmin = 0.0;
  double lmax = 0.0;
  double fmax = 0.0;  // lambda_max(F^T F) when requested
  std::string err;
};

// Shared sweep for metric_bounds and contraction_margin; with_margin adds the
// F computation (and therefore the strict differentiability requirement).
std::vector<MetricPoint> metric_sweep(const SystemDef* def, const MetricField& metric,
                                      const PointGrid& grid, bool with_margin, int threads) {
  std::vector<MetricPoint> pts(grid.size());
  parallel_for(grid.size(), threads, [&](std::size_t i) {
    const auto& [k, x] = grid.pts[i];
    MetricPoint r;
    try {
      Matrix th0 = metric.theta(k, x);
      EigenDecomp e = sym_eig(gram(th0));
      r.lmin = e.values.front();
      r.lmax = e.values.back();
      if (with_margin) {
        bool ns = false;
        Matrix jac = jacobian(*def, k, x, preferred(*def), &ns, true);
        Matrix th1 = metric.theta(k + 1, x);
        Matrix f = right_divide(th1 * jac, th0);
        r.fmax = sym_eig(gram(f)).values.back();
      }
      r.ok = true;
    } catch (const EvalDomainError& ex) {
      r.err = ex.what();
    } catch (const NotPositiveDefinite& ex) {
      r.err = ex.what();
    } catch (const SingularFactor& ex) {
      r.err = ex.what();
    } catch (const TransferUnavailable& ex) {
      r.err = ex.what();
    }
    pts[i] = r;
  });
  return pts;
}

}  // namespace

MetricBoundsResult metric_bounds(const MetricField& metric, const PointGrid& grid,
                                 double eta_floor, int threads) {
  if (grid.size() == 0) throw InvalidDomain("metric_bounds: empty grid");
  std::vector<MetricPoint> pts = metric_sweep(nullptr, metric, grid, false, threads);

  MetricBoundsResult out;
  out.eta = std::numeric_limits<double>::infinity();
  std::size_t bad = grid.size(), argmin = grid.size();
  for (std::size_t i = 0; i < pts.size(); ++i) {
    if (!pts[i].ok) {
      if (bad == grid.size()) bad = i;
      continue;
    }
    if (pts[i].lmin < out.eta) {
      out.eta = pts[i].lmin;
      argmin = i;
    }
    out.rho = std::max(out.rho, pts[i].lmax);
  }
  out.verdict.samples_used = grid.size();
  if (bad != grid.size()) {
    const auto& [k, x] = grid.pts[bad];
    out.worst_point = {k, x};
    out.verdict.status = VerdictStatus::Falsified;
    out.verdict.witness = {x, {}, k, k, 0.0, eta_floor};
    out.verdict.notes.push_back("metric evaluation failed: " + pts[bad].err);
    return out;
  }
  out.worst_point = {std::get<0>(grid.pts[argmin]), std::get<1>(grid.pts[argmin])};
  out.verdict.constants["eta"] = out.eta;
  out.verdict.constants["rho"] = out.rho;
  if (out.eta <= eta_floor) {
    out.verdict.status = VerdictStatus::Falsified;
    const auto& [k, x] = grid.pts[argmin];
    out.verdict.witness = {x, {}, k, k, out.eta, eta_floor};
    out.verdict.notes.push_back("metric lower bound not uniform");
  } else {
    out.verdict.status = VerdictStatus::Certified;
    out.verdict.scope = "on-grid";
  }
  return out;
}

ContractionResult contraction_margin(const SystemDef& def, const MetricField& metric,
                                     const PointGrid& grid, double eta_floor, int threads) {
  if (grid.size() == 0) throw InvalidDomain("contraction_margin: empty grid");
  if (metric.dim() != def.n) throw InvalidShape("contraction_margin: metric dimension");
  std::vector<MetricPoint> pts = metric_sweep(&def, metric, grid, true, threads);

  ContractionResult out;
  out.eta = std::numeric_limits<double>::infinity();
  out.mu = std::numeric_limits<double>::infinity();
  std::size_t bad = grid.size(), argmin_eta = grid.size(), argmin_mu = grid.size();
  for (std::size_t i = 0; i < pts.size(); ++i) {
    if (!pts[i].ok) {
      if (bad == grid.size()) bad = i;
      continue;
    }
    if (pts[i].lmin < out.eta) {
      out.eta = pts[i].lmin;
      argmin_eta = i;
    }
    out.rho = std::max(out.rho, pts[i].lmax);
    if (1.0 - pts[i].fmax < out.mu) {
      out.mu = 1.0 - pts[i].fmax;
      argmin_mu = i;
    }
  }
  out.verdict.samples_used = grid.size();
  if (bad != grid.size()) {
    const auto& [k, x] = grid.pts[bad];
    out.worst_point = {k, x};
    out.verdict.status = VerdictStatus::Falsified;
    out.verdict.witness = {x, {}, k, k, 0.0, 0.0};
    out.verdict.notes.push_back("metric unavailable at a grid point: " + pts[bad].err);
    return out;
  }
  out.verdict.constants["eta"] = out.eta;
  out.verdict.constants["rho"] = out.rho;
  out.verdict.constants["mu"] = out.mu;
  if (out.eta <= eta_floor) {
    const auto& [k, x] = grid.pts[argmin_eta];
    out.worst_point = {k, x};
    out.verdict.status = VerdictStatus::Falsified;
    out.verdict.witness = {x, {}, k, k, out.eta, eta_floor};
    out.verdict.notes.push_back("metric lower bound not uniform");
    return out;
  }
  const auto& [k, x] = grid.pts[argmin_mu];
  out.worst_point = {k, x};
  if (out.mu <= 0.0) {
    out.verdict.status = VerdictStatus::Falsified;
    out.verdict.witness = {x, {}, k, k, pts[argmin_mu].fmax, 1.0};
    out.verdict.notes.push_back("transformed differentials expand at a grid point");
  } else {
    out.verdict.status = VerdictStatus::Certified;
    out.verdict.scope = "on-grid";
  }
  return out;
}

DemidovicResult demidovic_certify(const SystemDef& def, const SymMatrix& P, double rho,
                                  const PointGrid& grid, bool check_origin, double tol,
                                  int threads) {
  if (P.n != def.n) throw InvalidShape("demidovic_certify: P dimension");
  if (!(rho > 0.0 && rho < 1.0)) throw InvalidDomain("demidovic_certify: rho outside (0,1)");
  if (grid.size() == 0) throw InvalidDomain("demidovic_certify: empty grid");
  double pmin = psd_margin(P);
  if (pmin <= 0.0) throw NotPositiveDefinite(pmin);

  const Matrix pfull = P.full();
  struct R {
    bool ok = false;
    double margin = 0.0;
    bool nonsmooth = false;
  };
  std::vector<R> pts(grid.size());
  parallel_for(grid.size(), threads, [&](std::size_t i) {
    const auto& [k, x] = grid.pts[i];
    R r;
    try {
      bool ns = false;
      Matrix jac = jacobian(def, k, x, preferred(def), &ns, false);
      Matrix s = transpose(jac) * pfull * jac - rho * pfull;
      r.margin = sym_eig(symmetrize(s)).values.back();
      r.nonsmooth = ns;
      r.ok = true;
    } catch (const EvalDomainError&) {
    }
    pts[i] = r;
  });

  DemidovicResult out;
  out.P = P;
  out.rho = rho;
  out.worst_margin = -std::numeric_limits<double>::infinity();
  std::size_t argmax = grid.size(), skipped = 0, kinks = 0;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    if (!pts[i].ok) {
      ++skipped;
      continue;
    }
    kinks += pts[i].nonsmooth ? 1u : 0u;
    if (pts[i].margin > out.worst_margin) {
      out.worst_margin = pts[i].margin;
      argmax = i;
    }
  }
  if (argmax == grid.size()) throw InvalidDomain("demidovic_certify: every point left the domain");
  out.worst_point = {std::get<0>(grid.pts[argmax]), std::get<1>(grid.pts[argmax])};
  out.verdict.samples_used = grid.size() - skipped;
  out.verdict.constants["worst_margin"] = out.worst_margin;
  out.verdict.constants["rho"] = rho;
  if (skipped > 0)
    out.verdict.notes.push_back(std::to_string(skipped) + " grid points skipped on domain errors");
  if (kinks > 0)
    out.verdict.notes.push_back(std::to_string(kinks) +
                                " grid points used kink derivatives (right branch)");

  bool growth = false;
  if (check_origin) {
    std::vector<long long> ks;
    for (const auto& [k, x] : grid.pts) ks.push_back(k);
    std::sort(ks.begin(), ks.end());
    ks.erase(std::unique(ks.begin(), ks.end()), ks.end());
    const Vec zero(static_cast<std::size_t>(def.n), 0.0);
    double cmax = 0.0, inner = 0.0, outer = 0.0;
    long long amin = std::numeric_limits<long long>::max(), amax = 0;
    for (long long k : ks) {
      amin = std::min(amin, std::abs(k));
      amax = std::max(amax, std::abs(k));
    }
    double split = 0.5 * static_cast<double>(amin + amax);
    bool c_ok = true;
    for (long long k : ks) {
      try {
        double v = norm2(eval_map(def, k, zero));
        cmax = std::max(cmax, v);
        double& side = static_cast<double>(std::abs(k)) <= split ? inner : outer;
        side = std::max(side, v);
      } catch (const EvalDomainError&) {
        c_ok = false;
        out.verdict.notes.push_back("f(k,0) undefined at k=" + std::to_string(k));
        break;
      }
    }
    if (c_ok) {
      out.c = cmax;
      out.verdict.constants["c"] = cmax;
      // A forcing term whose magnitude keeps climbing with |k| has no finite
      // sup over Z; withhold the convergence upgrade.
      growth = outer > 1.5 * std::max(inner, 1e-12);
      if (growth)
        out.verdict.notes.push_back("|f(k,0)| grows across the sampled k span; sup not credible");
    }
  }

  if (out.worst_margin <= tol) {
    out.verdict.status = VerdictStatus::Certified;
    out.verdict.scope = "on-grid";
    out.convergence_evidence = check_origin && out.c.has_value() && !growth;
    if (out.convergence_evidence)
      out.verdict.notes.push_back("quadratic decrease plus bounded forcing: convergent evidence");
  } else {
    out.verdict.status = VerdictStatus::Falsified;
    const auto& [k, x] = grid.pts[argmax];
    out.verdict.witness = {x, {}, k, k, out.worst_margin, tol};
  }
  return out;
}

SearchPResult search_P(const SystemDef& def, const PointGrid& grid, double rho, int iters,
                       double tol, int threads) {
  if (!(rho > 0.0 && rho < 1.0)) throw InvalidDomain("search_P: rho outside (0,1)");
  if (grid.size() == 0) throw InvalidDomain("search_P: empty grid");
  if (iters < 1) throw InvalidDomain("search_P: iters below 1");
  const int n = def.n;

  std::vector<Matrix> jacs(grid.size());
  std::vector<char> usable(grid.size(), 0);
  parallel_for(grid.size(), threads, [&](std::size_t i) {
    const auto& [k, x] = grid.pts[i];
    try {
      jacs[i] = jacobian(def, k, x, preferred(def), nullptr, false);
      usable[i] = 1;
    } catch (const EvalDomainError&) {
    }
  });

  auto project = [n](Matrix p) {
    SymMatrix s = symmetrize(p);
    for (int pass = 0; pass < 3; ++pass) {
      EigenDecomp e = sym_eig(s);
      double trace = 0.0;
      for (double& v : e.values) {
        v = std::max(v, 1e-6);
        trace += v;
      }
      double scale = static_cast<double>(n) / trace;
      SymMatrix next(n);
      for (int i = 0; i < n; ++i)
        for (int j = i; j < n; ++j) {
          double acc = 0.0;
          for (int m = 0; m < n; ++m)
            acc += e.vectors(i, m) * (e.values[static_cast<std::size_t>(m)] * scale) *
                   e.vectors(j, m);
          next.set(i, j, acc);
        }
      s = next;
      if (psd_margin(s) >= 1e-6) break;
    }
    return s;
  };

  SearchPResult out;
  SymMatrix p = SymMatrix::identity(n);
  out.P = p;
  out.best_g = std::numeric_limits<double>::infinity();

  std::vector<double> margins(grid.size());
  for (int t = 0; t < iters; ++t) {
    const Matrix pfull = p.full();
    parallel_for(grid.size(), threads, [&](std::size_t i) {
      if (!usable[i]) {
        margins[i] = -std::numeric_limits<double>::infinity();
        return;
      }
      Matrix s = transpose(jacs[i]) * pfull * jacs[i] - rho * pfull;
      margins[i] = sym_eig(symmetrize(s)).values.back();
    });
    std::size_t argmax = grid.size();
    double g = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < margins.size(); ++i)
      if (usable[i] && margins[i] > g) {
        g = margins[i];
        argmax = i;
      }
    if (argmax == grid.size()) throw InvalidDomain("search_P: every point left the domain");
    out.iterations = t + 1;
    if (g < out.best_g) {
      out.best_g = g;
      out.P = p;
    }
    if (g <= tol) {
      out.found = true;
      return out;
    }

    Matrix s = transpose(jacs[argmax]) * pfull * jacs[argmax] - rho * pfull;
    EigenDecomp e = sym_eig(symmetrize(s));
    Vec v(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) v[static_cast<std::size_t>(i)] = e.vectors(i, n - 1);
    Vec u = jacs[argmax] * v;
    double step = 1.0 / (10.0 + t);
    Matrix next = pfull;
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j)
        next(i, j) -= step * (u[static_cast<std::size_t>(i)] * u[static_cast<std::size_t>(j)] -
                              rho * v[static_cast<std::size_t>(i)] * v[static_cast<std::size_t>(j)]);
    p = project(next);
  }
  return out;
}

CurveLengthResult curve_length(const SystemDef& def, const MetricField& metric, const Vec& xi1,
                               const Vec& xi2, long long k0, long long k, int quad_n,
                               int threads) {
  if (quad_n < 2) throw InvalidDomain("curve_length: need at least 2 quadrature nodes");
  if (k < k0) throw InvalidWindow("curve_length: k before k0");
  if (k - k0 > kMaxHorizon) throw InvalidDomain("curve_length: horizon too long");
  if (static_cast<int>(xi1.size()) != def.n || static_cast<int>(xi2.size()) != def.n)
    throw InvalidShape("curve_length: endpoint dimension");

  const Vec d = sub(xi1, xi2);
  struct Node {
    bool ok = false;
    double integrand = 0.0;
  };
  std::vector<Node> nodes(static_cast<std::size_t>(quad_n));
  parallel_for(nodes.size(), threads, [&](std::size_t i) {
    double s = (static_cast<double>(i) + 0.5) / quad_n;
    Vec g0(static_cast<std::size_t>(def.n));
    for (int a = 0; a < def.n; ++a)
      g0[static_cast<std::size_t>(a)] = s * xi1[static_cast<std::size_t>(a)] +
                                        (1.0 - s) * xi2[static_cast<std::size_t>(a)];
    Node r;
    try {
      Trajectory t = simulate(def, k0, g0, k - k0);
      if (!t.covers(k))
        throw TransferUnavailable("curve node stopped early: " + t.stop.detail);
      Matrix phi = Matrix::identity(def.n);
      for (long long j = k0; j < k; ++j)
        phi = jacobian(def, j, t.at(j), preferred(def), nullptr, false) * phi;
      SymMatrix q = metric.q(k, t.at(k));
      r.integrand = std::sqrt(std::max(0.0, qform(q, phi * d)));
      r.ok = true;
    } catch (const EvalDomainError&) {
    } catch (const NotPositiveDefinite&) {
    } catch (const SingularFactor&) {
    } catch (const TransferUnavailable&) {
    }
    nodes[i] = r;
  });

  CurveLengthResult out;
  double acc = 0.0;
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    if (!nodes[i].ok) {
      out.failed_nodes.push_back(static_cast<int>(i));
      continue;
    }
    acc += nodes[i].integrand;
  }
  out.length = out.failed_nodes.empty() ? acc / quad_n
                                        : std::numeric_limits<double>::quiet_NaN();
  return out;
}

}  // namespace converge
