#pragma once

#include <optional>

#include "converge/incremental_analysis.hpp"
#include "converge/matrix_kit.hpp"

namespace converge {

// State-and-time dependent metric supplied three ways: identity, the theta
// expression grid declared with the system, or the tail-sum construction
// Q(k,xi) = sum_{j>=k} Phi(j,k;xi)^T Phi(j,k;xi) truncated at M terms.
class MetricField {
 public:
  static MetricField identity(int n);
  static MetricField expression(const SystemDef& def);
  // M < 0 picks the horizon from the declared kappa/lambda so the tail bound
  // stays below 1e-9; kappa/lambda <= 0 means undeclared: M = 200 with an
  // a-posteriori check that the last term is <= 1e-12 * |Q|.
  static MetricField q_builder(const SystemDef& def, double kappa = 0.0, double lambda = 0.0,
                               long long M = -1);

  SymMatrix q(long long k, const Vec& x) const;
  Matrix theta(long long k, const Vec& x) const;  // q-builder thetas are upper triangular
  int dim() const { return n_; }
  bool is_identity() const { return kind_ == Kind::Identity; }

 private:
  enum class Kind { Identity, Expression, QBuilder };
  Kind kind_ = Kind::Identity;
  int n_ = 0;
  SystemDef def_;
  double kappa_ = 0.0, lambda_ = 0.0;
  long long m_ = 0;
  bool declared_ = false;
};

struct QBuild {
  SymMatrix Q;
  double tail_bound = 0.0;
  bool nonsmooth = false;  // a kink derivative entered some transfer product
};
// Q = sum_{j=k}^{k+M} Phi(j,k;xi)^T Phi(j,k;xi); tail bound
// kappa^2 * lambda^(-2M) * lambda^2/(lambda^2-1) * n from the declared
// envelope |Phi(j,k)| <= kappa * lambda^(-(j-k)). Requires lambda > 1.
QBuild build_Q(const SystemDef& def, const Vec& xi, long long k, long long M, double kappa,
               double lambda);

Matrix theta_from_Q(const SymMatrix& Q);

struct MetricBoundsResult {
  Verdict verdict;
  double eta = 0.0;  // min over grid of lambda_min(Theta^T Theta)
  double rho = 0.0;  // max over grid of lambda_max(Theta^T Theta)
  std::pair<long long, Vec> worst_point{0, {}};
};
MetricBoundsResult metric_bounds(const MetricField& metric, const PointGrid& grid,
                                 double eta_floor = 1e-9, int threads = 0);

struct ContractionResult {
  Verdict verdict;
  double eta = 0.0;
  double rho = 0.0;
  double mu = 0.0;  // min over grid of 1 - lambda_max(F^T F)
  std::pair<long long, Vec> worst_point{0, {}};
};
// F = Theta(k+1,x) * J(k,x) * Theta(k,x)^{-1}, both metric factors taken at
// the pre-step x. Differentiability is required: a kink on the grid rejects
// the whole call. Certified needs mu > 0 together with passing metric bounds.
ContractionResult contraction_margin(const SystemDef& def, const MetricField& metric,
                                     const PointGrid& grid, double eta_floor = 1e-9,
                                     int threads = 0);

struct DemidovicResult {
  Verdict verdict;
  SymMatrix P{1};
  double rho = 0.0;
  double worst_margin = 0.0;  // max over grid of lambda_max(J^T P J - rho P)
  std::optional<double> c;    // sup over sampled k of |f(k,0)|
  bool convergence_evidence = false;  // certified and c stays bounded in k
  std::pair<long long, Vec> worst_point{0, {}};
};
// check_origin also evaluates c = max |f(k,0)| over the distinct grid times.
// When that max keeps growing across the sampled k span (upper-half max at
// least 1.5x the lower-half max) the boundedness of f(k,0) is not credible
// and the convergence upgrade is withheld.
DemidovicResult demidovic_certify(const SystemDef& def, const SymMatrix& P, double rho,
                                  const PointGrid& grid, bool check_origin, double tol = 1e-9,
                                  int threads = 0);

struct SearchPResult {
  bool found = false;
  SymMatrix P{1};
  double best_g = 0.0;  // min over iterates of max over grid of lambda_max(J^T P J - rho P)
  int iterations = 0;
};
// Subgradient descent on g(P) with projection onto {P : P >= 1e-6 I,
// trace P = n}. Step at the worst grid point uses the top eigenvector v:
// direction (Jv)(Jv)^T - rho v v^T, step size 1/(10+t).
SearchPResult search_P(const SystemDef& def, const PointGrid& grid, double rho, int iters,
                       double tol = 1e-9, int threads = 0);

struct CurveLengthResult {
  double length = 0.0;
  std::vector<int> failed_nodes;  // quadrature nodes where metric or transfer failed
};
// Length of the image at time k of the segment s -> s*xi1 + (1-s)*xi2 under
// the metric, by composite midpoint quadrature: the tangent at node s is
// Phi(k,k0;gamma(s)) * (xi1 - xi2). Any node failure poisons the length (NaN).
CurveLengthResult curve_length(const SystemDef& def, const MetricField& metric, const Vec& xi1,
                               const Vec& xi2, long long k0, long long k, int quad_n,
                               int threads = 0);

}  // namespace converge
