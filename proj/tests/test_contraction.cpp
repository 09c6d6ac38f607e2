#include <cmath>

#include <doctest.h>

#include "converge/contraction_analysis.hpp"
#include "converge/registry.hpp"
#include "oracles.hpp"

using namespace converge;

namespace {

const char* kUpperLinear = "dim 2; f1 = x1/2 + 2*x2/5; f2 = x2/2;";

SymMatrix to_sym(const Matrix& m) {
  SymMatrix s(m.n);
  for (int i = 0; i < m.n; ++i)
    for (int j = i; j < m.n; ++j) s.set(i, j, 0.5 * (m(i, j) + m(j, i)));
  return s;
}

PointGrid single_point(long long k, Vec x) {
  PointGrid g;
  g.pts.emplace_back(k, std::move(x));
  return g;
}

}  // namespace

TEST_SUITE("contraction_analysis") {

TEST_CASE("identity metric has unit bounds everywhere") {
  PointGrid grid = make_point_grid(Box::cube(2, -5.0, 5.0), {0, 3}, 5, 64, 1);
  MetricBoundsResult r = metric_bounds(MetricField::identity(2), grid);
  CHECK(r.verdict.status == VerdictStatus::Certified);
  CHECK(r.eta == 1.0);
  CHECK(r.rho == 1.0);
}

TEST_CASE("a constant diagonal factor squares into the bounds") {
  SystemDef def = parse_system(
      "dim 2; f1 = x1/2; f2 = x2/2;"
      "th11 = 2; th12 = 0; th21 = 0; th22 = 3;");
  PointGrid grid = make_point_grid(Box::cube(2, -1.0, 1.0), {0, 2}, 3, 64, 1);
  MetricBoundsResult r = metric_bounds(MetricField::expression(def), grid);
  CHECK(r.verdict.status == VerdictStatus::Certified);
  CHECK(r.eta == doctest::Approx(4.0).epsilon(1e-12));
  CHECK(r.rho == doctest::Approx(9.0).epsilon(1e-12));
}

TEST_CASE("expression metrics require a declared factor") {
  SystemDef def = parse_system("dim 1; f1 = x1/2;");
  CHECK_THROWS_AS(MetricField::expression(def), InvalidDomain);
}

TEST_CASE("the shrinking declared metric fails the uniform lower bound") {
  SystemDef def = load_example("ex4");
  PointGrid grid = make_point_grid(Box::cube(1, -10.0, 10.0), {0, 100}, 3, 64, 1);
  MetricBoundsResult r = metric_bounds(MetricField::expression(def), grid, 1e-8);
  REQUIRE(r.verdict.status == VerdictStatus::Falsified);
  double eta_at_100 = 1.0 / (10001.0 * 10001.0);
  CHECK(r.eta == doctest::Approx(eta_at_100).epsilon(1e-12));
  CHECK(r.eta > 0.0);
  CHECK(r.eta <= 1e-8);
  CHECK(std::get<0>(r.worst_point) == 100);
  REQUIRE(!r.verdict.notes.empty());
  CHECK(r.verdict.notes.back() == "metric lower bound not uniform");
}

TEST_CASE("the drifting affine map contracts with margin three quarters") {
  SystemDef def = load_example("ex2");
  PointGrid grid = make_point_grid(Box::cube(1, -100.0, 100.0), {-20, 20}, 11, 64, 1);
  ContractionResult r = contraction_margin(def, MetricField::expression(def), grid);
  CHECK(r.verdict.status == VerdictStatus::Certified);
  CHECK(r.verdict.scope == "on-grid");
  CHECK(std::abs(r.mu - 0.75) <= 1e-12);
  CHECK(r.eta == doctest::Approx(1.0));
  CHECK(r.rho == doctest::Approx(1.0));
}

TEST_CASE("a constant scalar factor cancels out of the margin") {
  SystemDef def = parse_system("dim 1; f1 = x1/2; th11 = 3;");
  PointGrid grid = make_point_grid(Box::cube(1, -5.0, 5.0), {0, 4}, 5, 64, 1);
  ContractionResult r = contraction_margin(def, MetricField::expression(def), grid);
  CHECK(r.verdict.status == VerdictStatus::Certified);
  CHECK(std::abs(r.mu - 0.75) <= 1e-12);
  CHECK(r.eta == doctest::Approx(9.0));
}

TEST_CASE("a kink on the grid rejects the margin computation outright") {
  SystemDef def = load_example("ex1");
  PointGrid grid = single_point(0, {0.0, 0.0});
  CHECK_THROWS_AS(contraction_margin(def, MetricField::identity(2), grid), NonSmoothPoint);
}

TEST_CASE("away from the kink the rotation map expands differentials") {
  SystemDef def = load_example("ex1");
  PointGrid grid = single_point(0, {10.0, 0.0});
  ContractionResult r = contraction_margin(def, MetricField::identity(2), grid);
  REQUIRE(r.verdict.status == VerdictStatus::Falsified);
  CHECK(r.mu < 0.0);
  REQUIRE(!r.verdict.notes.empty());
  CHECK(r.verdict.notes.back() == "transformed differentials expand at a grid point");
}

TEST_CASE("tail sums reproduce the geometric series of the halving map") {
  SystemDef def = parse_system("dim 1; f1 = x1/2;");
  QBuild q = build_Q(def, {1.0}, 0, 40, 1.0, 2.0);
  CHECK(std::abs(q.Q(0, 0) - 4.0 / 3.0) <= 1e-12);
  CHECK(q.tail_bound <= 1e-20);
  CHECK_FALSE(q.nonsmooth);

  QBuild first = build_Q(def, {1.0}, 0, 0, 1.0, 2.0);
  CHECK(first.Q(0, 0) == 1.0);  // single identity term

  QBuild drift = build_Q(load_example("ex2"), {5.0}, -3, 40, 1.0, 2.0);
  CHECK(std::abs(drift.Q(0, 0) - 4.0 / 3.0) <= 1e-12);
}

TEST_CASE("tail sum arguments are validated") {
  SystemDef def = parse_system("dim 1; f1 = x1/2;");
  CHECK_THROWS_AS(build_Q(def, {1.0}, 0, 10, 1.0, 1.0), InvalidDomain);
  CHECK_THROWS_AS(build_Q(def, {1.0}, 0, 10, 0.0, 2.0), InvalidDomain);
  CHECK_THROWS_AS(build_Q(def, {1.0}, 0, -1, 1.0, 2.0), InvalidDomain);
}

TEST_CASE("the truncated sum nearly solves its fixed-point equation") {
  SystemDef def = parse_system(kUpperLinear);
  Matrix a = eval_jacobian_ad(def, 0, {0.0, 0.0}).jac;
  QBuild q = build_Q(def, {0.0, 0.0}, 0, 200, 4.0, 1.8);
  Matrix resid = transpose(a) * q.Q.full() * a - q.Q.full() + Matrix::identity(2);
  CHECK(induced_norm(resid) <= 1e-8);
}

TEST_CASE("sub-exponential decay defeats the default truncation check") {
  MetricField m = MetricField::q_builder(load_example("ex3"));
  CHECK_THROWS_AS(m.q(0, {1.0}), TransferUnavailable);
}

TEST_CASE("factoring the tail sum recovers an upper-triangular root") {
  SymMatrix q1(1);
  q1.set(0, 0, 4.0 / 3.0);
  Matrix th = theta_from_Q(q1);
  CHECK(th(0, 0) == doctest::Approx(2.0 / std::sqrt(3.0)).epsilon(1e-14));

  Matrix id = theta_from_Q(SymMatrix::identity(3));
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) CHECK(id(i, j) == (i == j ? 1.0 : 0.0));

  SymMatrix indef = SymMatrix::from_rows({{1.0, 2.0}, {2.0, 1.0}});
  CHECK_THROWS_AS(theta_from_Q(indef), NotPositiveDefinite);
}

TEST_CASE("tail-sum metric turns the halving drift into an exact half-rate") {
  SystemDef def = load_example("ex2");
  MetricField m = MetricField::q_builder(def, 1.0, 2.0, 40);
  PointGrid grid = make_point_grid(Box::cube(1, -10.0, 10.0), {0, 5}, 3, 64, 1);
  ContractionResult r = contraction_margin(def, m, grid);
  CHECK(r.verdict.status == VerdictStatus::Certified);
  CHECK(std::abs(r.mu - 0.75) <= 1e-9);
  CHECK(r.eta == doctest::Approx(4.0 / 3.0).epsilon(1e-9));
}

TEST_CASE("quadratic decrease holds for the affine map at rho one quarter") {
  SystemDef def = parse_system("dim 1; f1 = x1 / 2 + sin(k); j11 = 1 / 2;");
  PointGrid grid = make_point_grid(Box::cube(1, -10.0, 10.0), {-20, 20}, 5, 64, 1);
  DemidovicResult r = demidovic_certify(def, SymMatrix::identity(1), 0.25, grid, true);
  CHECK(r.verdict.status == VerdictStatus::Certified);
  CHECK(std::abs(r.worst_margin) <= 1e-12);
  REQUIRE(r.c.has_value());
  double expect_c = 0.0;
  for (long long k = -20; k <= 20; ++k) expect_c = std::max(expect_c, std::abs(std::sin(double(k))));
  CHECK(*r.c == doctest::Approx(expect_c).epsilon(1e-15));
  CHECK(r.convergence_evidence);
}

TEST_CASE("an unbounded forcing term withholds the convergence upgrade") {
  SystemDef def = load_example("ex2");
  PointGrid grid = make_point_grid(Box::cube(1, -100.0, 100.0), {-20, 20}, 5, 64, 1);
  DemidovicResult r = demidovic_certify(def, SymMatrix::identity(1), 0.25, grid, true);
  CHECK(r.verdict.status == VerdictStatus::Certified);
  REQUIRE(r.c.has_value());
  CHECK(*r.c == doctest::Approx(11.0).epsilon(1e-12));  // |f(20, 0)| = |-11|
  CHECK_FALSE(r.convergence_evidence);
  bool noted = false;
  for (const auto& n : r.verdict.notes) noted |= n.find("grows across") != std::string::npos;
  CHECK(noted);
}

TEST_CASE("no quadratic rate exists for the saturating map") {
  SystemDef def = load_example("ex3");
  PointGrid grid = make_point_grid(Box::cube(1, -1.0, 1.0), {-5, 5}, 41, 64, 1);
  for (double rho : {0.3, 0.9}) {
    DemidovicResult r = demidovic_certify(def, SymMatrix::identity(1), rho, grid, false);
    REQUIRE(r.verdict.status == VerdictStatus::Falsified);
    CHECK(r.worst_margin == doctest::Approx(1.0 - rho).epsilon(1e-12));
    REQUIRE(r.verdict.witness.has_value());
    CHECK(std::abs(r.verdict.witness->xi1[0]) <= 1e-12);
  }
}

TEST_CASE("rho and the shape matrix are validated") {
  SystemDef def = parse_system("dim 1; f1 = x1/2;");
  PointGrid grid = single_point(0, {1.0});
  CHECK_THROWS_AS(demidovic_certify(def, SymMatrix::identity(1), 0.0, grid, false), InvalidDomain);
  CHECK_THROWS_AS(demidovic_certify(def, SymMatrix::identity(1), 1.0, grid, false), InvalidDomain);
  SymMatrix bad(1);
  bad.set(0, 0, -1.0);
  CHECK_THROWS_AS(demidovic_certify(def, bad, 0.5, grid, false), NotPositiveDefinite);
}

TEST_CASE("shape search succeeds instantly when the identity already works") {
  SystemDef def = parse_system("dim 1; f1 = x1/2;");
  PointGrid grid = make_point_grid(Box::cube(1, -5.0, 5.0), {0, 4}, 5, 64, 1);
  SearchPResult r = search_P(def, grid, 0.25, 50);
  CHECK(r.found);
  CHECK(std::abs(r.best_g) <= 1e-12);
  CHECK(r.iterations == 1);
  CHECK(r.P(0, 0) == 1.0);
}

TEST_CASE("shape search leaves the identity when it must") {
  SystemDef def = parse_system(kUpperLinear);
  PointGrid grid = make_point_grid(Box::cube(2, -1.0, 1.0), {0, 0}, 2, 64, 1);
  // identity is infeasible at rho 0.5 (worst eigenvalue ~ 0.045) but a valid
  // shape exists; the descent has to find one
  SearchPResult r = search_P(def, grid, 0.5, 500);
  CHECK(r.found);
  DemidovicResult d = demidovic_certify(def, r.P, 0.5, grid, false);
  CHECK(d.verdict.status == VerdictStatus::Certified);
}

TEST_CASE("the series solution of the shape equation certifies directly") {
  SystemDef def = parse_system(kUpperLinear);
  Matrix a = eval_jacobian_ad(def, 0, {0.0, 0.0}).jac;
  SymMatrix p = to_sym(oracles::lyapunov_fixed_point(a, 0.3));
  PointGrid grid = make_point_grid(Box::cube(2, -1.0, 1.0), {0, 0}, 2, 64, 1);
  DemidovicResult r = demidovic_certify(def, p, 0.3, grid, false);
  CHECK(r.verdict.status == VerdictStatus::Certified);
  // A^T P A - rho P = -I, so the worst eigenvalue sits at exactly -1
  CHECK(r.worst_margin == doctest::Approx(-1.0).epsilon(1e-9));
}

TEST_CASE("no shape works for the saturating map and the gap is one minus rho") {
  SystemDef def = load_example("ex3");
  PointGrid grid = make_point_grid(Box::cube(1, -1.0, 1.0), {-5, 5}, 41, 64, 1);
  SearchPResult r = search_P(def, grid, 0.3, 50);
  CHECK_FALSE(r.found);
  CHECK(r.best_g == doctest::Approx(0.7).epsilon(1e-12));
}

TEST_CASE("curve length at the start time is the metric distance") {
  SystemDef def = load_example("ex2");
  CurveLengthResult r =
      curve_length(def, MetricField::identity(1), {5.0}, {2.0}, 0, 0, 8);
  CHECK(r.failed_nodes.empty());
  CHECK(r.length == doctest::Approx(3.0).epsilon(1e-12));
}

TEST_CASE("linear image length equals the transported displacement") {
  SystemDef def = parse_system(kUpperLinear);
  Vec xi1 = {1.0, 2.0}, xi2 = {-0.5, 0.5};
  long long K = 4;
  Matrix a = eval_jacobian_ad(def, 0, {0.0, 0.0}).jac;
  Matrix ak = Matrix::identity(2);
  for (long long i = 0; i < K; ++i) ak = a * ak;
  Vec d = {xi1[0] - xi2[0], xi1[1] - xi2[1]};
  double expect = norm2(ak * d);
  CurveLengthResult r = curve_length(def, MetricField::identity(2), xi1, xi2, 0, K, 16);
  CHECK(r.failed_nodes.empty());
  CHECK(r.length == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("under the tail-sum metric the drift halves lengths every step") {
  SystemDef def = load_example("ex2");
  MetricField m = MetricField::q_builder(def, 1.0, 2.0, 40);
  std::vector<double> lengths;
  for (long long k = 0; k <= 5; ++k) {
    CurveLengthResult r = curve_length(def, m, {4.0}, {1.0}, 0, k, 4);
    REQUIRE(r.failed_nodes.empty());
    lengths.push_back(r.length);
  }
  for (std::size_t i = 1; i < lengths.size(); ++i)
    CHECK(lengths[i] / lengths[i - 1] == doctest::Approx(0.5).epsilon(1e-9));
}

TEST_CASE("quadrature refinement settles the curved case") {
  SystemDef def = load_example("ex1");
  MetricField id = MetricField::identity(2);
  CurveLengthResult c64 = curve_length(def, id, {1.0, 0.5}, {2.0, 1.5}, 0, 3, 64);
  CurveLengthResult c128 = curve_length(def, id, {1.0, 0.5}, {2.0, 1.5}, 0, 3, 128);
  REQUIRE(c64.failed_nodes.empty());
  REQUIRE(c128.failed_nodes.empty());
  CHECK(std::abs(c64.length - c128.length) <= 1e-4 * c128.length);
}

TEST_CASE("node failures poison the length") {
  SystemDef def = load_example("ex4");
  CurveLengthResult r = curve_length(def, MetricField::identity(1), {1.0}, {2.0}, 0, 60, 5);
  CHECK(std::isnan(r.length));
  CHECK(r.failed_nodes.size() == 5);
}

TEST_CASE("certified margins bound actual trajectory separations") {
  SystemDef def = load_example("ex2");
  PointGrid grid = make_point_grid(Box::cube(1, -100.0, 100.0), {0, 20}, 11, 64, 1);
  ContractionResult cert = contraction_margin(def, MetricField::expression(def), grid);
  REQUIRE(cert.verdict.status == VerdictStatus::Certified);
  double decay = std::sqrt(1.0 - cert.mu);
  double cond = std::sqrt(cert.rho / cert.eta);
  Trajectory t1 = simulate(def, 0, {80.0}, 20);
  Trajectory t2 = simulate(def, 0, {-40.0}, 20);
  double d0 = std::abs(t1.at(0)[0] - t2.at(0)[0]);
  for (long long k = 1; k <= 20; ++k) {
    double dk = std::abs(t1.at(k)[0] - t2.at(k)[0]);
    CHECK(dk <= cond * std::pow(decay, double(k)) * d0 * (1.0 + 1e-9));
  }
}

TEST_CASE("a certified quadratic shape implies the matching pair decay rate") {
  SystemDef def = load_example("ex2");
  PointGrid grid = make_point_grid(Box::cube(1, -100.0, 100.0), {0, 20}, 11, 64, 1);
  DemidovicResult cert = demidovic_certify(def, SymMatrix::identity(1), 0.25, grid, false);
  REQUIRE(cert.verdict.status == VerdictStatus::Certified);
  std::vector<SeparationSeries> series;
  for (double xi : {60.0, -30.0, 5.0}) {
    SeparationSeries s;
    s.xi1 = {xi};
    s.xi2 = {0.0};
    s.k0 = 0;
    Trajectory t1 = simulate(def, 0, {xi}, 20);
    Trajectory t2 = simulate(def, 0, {0.0}, 20);
    for (long long d = 0; d <= 20; ++d)
      s.seps.push_back(std::abs(t1.at(d)[0] - t2.at(d)[0]));
    series.push_back(std::move(s));
  }
  RateFit fit = fit_exp_rate(series, {0, 20});
  CHECK(fit.lambda >= 1.0 / std::sqrt(cert.rho) - 1e-3);
}

}  // TEST_SUITE
