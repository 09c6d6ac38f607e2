#include <cmath>
#include <random>

#include <doctest.h>

#include "converge/registry.hpp"
#include "converge/system_dsl.hpp"
#include "oracles.hpp"

using namespace converge;

TEST_SUITE("system_dsl") {

TEST_CASE("parses the scalar builtin maps and evaluates them") {
  SystemDef drift = parse_system("dim 1; f1 = -k/2 - 1 + x1/2;");
  CHECK(drift.n == 1);
  CHECK(eval_map(drift, 0, {0.0})[0] == doctest::Approx(-1.0).epsilon(1e-15));

  SystemDef sat = parse_system("dim 1; f1 = x1/sqrt(x1^2+1);");
  CHECK(eval_map(sat, 5, {0.0})[0] == 0.0);
  CHECK(eval_map(sat, 5, {1.0})[0] == doctest::Approx(1.0 / std::sqrt(2.0)).epsilon(1e-15));
}

TEST_CASE("rejects out-of-range state variables and malformed input") {
  CHECK_THROWS_AS(parse_system("dim 1; f1 = x2;"), ParseError);
  CHECK_THROWS_AS(parse_system("f1 = x1;"), ParseError);            // missing header
  CHECK_THROWS_AS(parse_system("dim 1; f1 = x1"), ParseError);      // missing semicolon
  CHECK_THROWS_AS(parse_system("dim 1; f1 = blub(x1);"), ParseError);
  CHECK_THROWS_AS(parse_system("dim 2; f1 = x1;"), ParseError);     // f2 missing
}

TEST_CASE("line comments and whitespace are ignored") {
  SystemDef def = parse_system("dim 1;  # scalar\nf1 = x1 / 2; # halve\n");
  CHECK(eval_map(def, 0, {4.0})[0] == 2.0);
}

TEST_CASE("forward-mode jacobians on fixed points") {
  SystemDef drift = parse_system("dim 1; f1 = -k/2 - 1 + x1/2;");
  CHECK(eval_jacobian_ad(drift, 3, {7.0}).jac(0, 0) == doctest::Approx(0.5).epsilon(1e-15));

  SystemDef sat = parse_system("dim 1; f1 = x1/sqrt(x1^2+1);");
  CHECK(eval_jacobian_ad(sat, 0, {0.0}).jac(0, 0) == doctest::Approx(1.0).epsilon(1e-14));

  SystemDef lin = parse_system("dim 2; f1 = x1 + 2*x2; f2 = 3*x2;");
  AdResult r = eval_jacobian_ad(lin, 0, {1.0, -2.0});
  CHECK(r.jac(0, 0) == 1.0);
  CHECK(r.jac(0, 1) == 2.0);
  CHECK(r.jac(1, 0) == 0.0);
  CHECK(r.jac(1, 1) == 3.0);
  CHECK_FALSE(r.nonsmooth);
}

TEST_CASE("kinks flag the derivative as one-sided") {
  SystemDef def = parse_system("dim 1; f1 = abs(x1);");
  AdResult at_kink = eval_jacobian_ad(def, 0, {0.0});
  CHECK(at_kink.nonsmooth);
  CHECK(at_kink.jac(0, 0) == 1.0);  // right branch
  CHECK_FALSE(eval_jacobian_ad(def, 0, {2.0}).nonsmooth);

  SystemDef mn = parse_system("dim 1; f1 = min(x1, 0);");
  CHECK(eval_jacobian_ad(mn, 0, {-1.0}).jac(0, 0) == 1.0);
  CHECK(eval_jacobian_ad(mn, 0, {1.0}).jac(0, 0) == 0.0);
}

TEST_CASE("declared jacobians are cross-checked at parse time") {
  CHECK_NOTHROW(parse_system("dim 1; f1 = x1/2; j11 = 1/2;"));
  CHECK_THROWS_AS(parse_system("dim 1; f1 = x1/2; j11 = 1;"), JacobianMismatch);
}

TEST_CASE("candidate parsing, bounds validation, and modes") {
  CandidateV conv = parse_candidate(
      "mode convergent; V = x1^2; a1 = 1*s^2; a2 = 1*s^2; a3 = 0.75*s^2;");
  CHECK(conv.mode == CandidateMode::Convergent);
  CHECK(conv.n == 1);
  CHECK(conv.alpha1(2.0) == doctest::Approx(4.0));
  CHECK(conv.alpha3(2.0) == doctest::Approx(3.0));
  CHECK(eval_candidate(conv, 0, {3.0}) == doctest::Approx(9.0));

  CandidateV pair = parse_candidate(
      "mode contraction; V = (x1-y1)^2; c1 = 1; c2 = 1; c3 = 0.75;");
  CHECK(pair.quadratic);
  CHECK(pair.alpha2.p == 2.0);
  CHECK(eval_candidate(pair, 0, {3.0}, {1.0}) == doctest::Approx(4.0));

  CHECK_THROWS_AS(parse_candidate("mode convergent; V = x1^2; a1 = -1*s^2; a2 = s^2; a3 = s^2;"),
                  ParseError);
  CHECK_THROWS_AS(parse_candidate("mode convergent; V = x1^2; a1 = s^0.5; a2 = s^2; a3 = s^2;"),
                  ParseError);
  CHECK_THROWS_AS(parse_candidate("mode wat; V = x1^2; a1 = s^2; a2 = s^2; a3 = s^2;"),
                  ParseError);
  CHECK_THROWS_AS(
      parse_candidate("mode convergent; V = x1^2 + y1; a1 = s^2; a2 = s^2; a3 = s^2;"),
      ParseError);
  CHECK_THROWS_AS(parse_candidate("mode incremental; V = (x1-y1)^2; a1 = s^2; a2 = s^2; c3 = 1;"),
                  ParseError);
}

TEST_CASE("pretty print re-parses to a structurally identical tree") {
  for (const auto& entry : registry()) {
    SystemDef def = parse_system(entry.dsl);
    SystemDef back = parse_system(pretty_print(def));
    REQUIRE(back.n == def.n);
    for (int i = 0; i < def.n; ++i)
      CHECK(back.f[static_cast<std::size_t>(i)] == def.f[static_cast<std::size_t>(i)]);
  }
  CandidateV cand = parse_candidate(
      "dim 2; mode convergent; V = x1^2 + x2^2; a1 = s^2; a2 = s^2; a3 = 0.75*s^2;");
  CandidateV back = parse_candidate(pretty_print(cand));
  CHECK(back.v == cand.v);
  CHECK(back.alpha3.c == cand.alpha3.c);
}

TEST_CASE("monomial bounds are class-K on a sample grid") {
  CandidateV c = parse_candidate("mode convergent; V = x1^2; a1 = 2*s^1.5; a2 = s^2; a3 = s^3;");
  double prev = 0.0;
  CHECK(c.alpha1(0.0) == 0.0);
  for (double s = 0.1; s <= 10.0; s += 0.1) {
    CHECK(c.alpha1(s) > prev);
    prev = c.alpha1(s);
  }
}

TEST_CASE("forward-mode agrees with central differences on the builtins") {
  std::mt19937_64 rng(31);
  std::uniform_real_distribution<double> xd(-8.0, 8.0);
  for (const auto& entry : registry()) {
    SystemDef def = parse_system(entry.dsl);
    for (int trial = 0; trial < 50; ++trial) {
      Vec x(static_cast<std::size_t>(def.n));
      for (auto& v : x) v = xd(rng);
      long long k = static_cast<long long>(rng() % 41) - 20;
      AdResult ad = eval_jacobian_ad(def, k, x);
      if (ad.nonsmooth) continue;

      double jn = 0.0;
      for (int i = 0; i < def.n; ++i)
        for (int j = 0; j < def.n; ++j) jn = std::max(jn, std::abs(ad.jac(i, j)));
      for (int j = 0; j < def.n; ++j) {
        double h = 1e-6 * std::max(1.0, std::abs(x[static_cast<std::size_t>(j)]));
        Vec xp = x, xm = x;
        xp[static_cast<std::size_t>(j)] += h;
        xm[static_cast<std::size_t>(j)] -= h;
        Vec fp = eval_map(def, k, xp), fm = eval_map(def, k, xm);
        for (int i = 0; i < def.n; ++i) {
          double fd = (fp[static_cast<std::size_t>(i)] - fm[static_cast<std::size_t>(i)]) / (2 * h);
          CHECK(std::abs(fd - ad.jac(i, j)) <= 1e-5 * (1.0 + jn));
        }
      }
    }
  }
}

TEST_CASE("dual numbers match independent symbolic differentiation on random trees") {
  oracles::ExprGen gen(99);
  std::uniform_real_distribution<double> xd(-4.0, 4.0);
  int checked = 0;
  for (int trial = 0; trial < 500; ++trial) {
    auto node = gen.gen(2 + static_cast<int>(gen.rng() % 3));
    SystemDef def = parse_system("dim 1; f1 = " + oracles::ExprGen::text(node) + ";");
    for (int rep = 0; rep < 3; ++rep) {
      double x = xd(gen.rng);
      auto sym = oracles::ExprGen::eval(node, x);
      if (!std::isfinite(sym.v) || !std::isfinite(sym.d)) continue;
      double v = eval_map(def, 0, {x})[0];
      double d = eval_jacobian_ad(def, 0, {x}).jac(0, 0);
      CHECK(std::abs(v - sym.v) <= 1e-9 * (1.0 + std::abs(sym.v)));
      CHECK(std::abs(d - sym.d) <= 1e-9 * (1.0 + std::abs(sym.d)));
      ++checked;
    }
  }
  CHECK(checked > 1000);
}

}  // TEST_SUITE
