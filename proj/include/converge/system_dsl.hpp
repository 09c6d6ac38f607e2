#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "converge/matrix_kit.hpp"

namespace converge {

// Forward-mode scalar: value plus one directional derivative.
struct Dual {
  double re = 0.0;
  double du = 0.0;
  Dual() = default;
  Dual(double r) : re(r) {}
  Dual(double r, double d) : re(r), du(d) {}
};

enum class NodeKind {
  Number,
  TimeK,    // k
  StateX,   // x<index>, 1-based
  StateY,   // y<index>, second copy, candidates only
  ScalarS,  // s, class-K argument
  Neg,
  Add,
  Sub,
  Mul,
  Div,
  Pow,
  Call,
};

enum class FuncId { Sin, Cos, Sqrt, Abs, Exp, Log, Min, Max, Floor };

struct ExprNode {
  NodeKind kind = NodeKind::Number;
  double value = 0.0;  // Number payload
  int index = 0;       // StateX/StateY payload
  FuncId func = FuncId::Sin;
  std::vector<ExprNode> kids;

  // Pow fast path, filled at parse when the exponent subtree is constant.
  bool expo_const = false;
  bool expo_int = false;
  double expo_value = 0.0;

  bool operator==(const ExprNode& o) const;
};

using ExprAst = ExprNode;

struct SystemDef {
  int n = 0;
  std::string name;
  std::vector<ExprAst> f;                     // n entries
  std::vector<std::vector<ExprAst>> jac;      // n x n when present, else empty
  std::vector<std::vector<ExprAst>> theta;    // n x n when present, else empty
  bool has_jacobian() const { return !jac.empty(); }
  bool has_theta() const { return !theta.empty(); }
};

// c * s^p with c > 0, p >= 1.
struct Monomial {
  double c = 1.0;
  double p = 1.0;
  double operator()(double s) const;
};

enum class CandidateMode { Incremental, Convergent, Contraction };

struct CandidateV {
  CandidateMode mode = CandidateMode::Incremental;
  int n = 0;  // declared, or inferred from variable indices
  ExprAst v;
  Monomial alpha1, alpha2, alpha3;
  bool quadratic = false;  // declared via c1..c3 (p fixed at 2)
};

struct EvalFlags {
  bool nonsmooth = false;
};

template <class T>
struct EvalEnv {
  T k{};
  std::span<const T> x;
  std::span<const T> y;
  T s{};
};

double eval_node(const ExprAst& node, const EvalEnv<double>& env, EvalFlags* flags = nullptr);
Dual eval_node(const ExprAst& node, const EvalEnv<Dual>& env, EvalFlags* flags = nullptr);

SystemDef parse_system(const std::string& text);

// Map evaluation f(k, x); x.size() must equal def.n.
Vec eval_map(const SystemDef& def, long long k, const Vec& x);

struct AdResult {
  Matrix jac;
  bool nonsmooth = false;
};

// Forward-mode jacobian df/dx at (k, x); seeds each coordinate direction.
AdResult eval_jacobian_ad(const SystemDef& def, long long k, const Vec& x);

CandidateV parse_candidate(const std::string& text);

// V(k, x) or V(k, x, y) depending on candidate mode.
double eval_candidate(const CandidateV& cand, long long k, const Vec& x, const Vec& y = {});

// Canonical text form; parse(pretty_print(parse(t))) is structurally identical
// to parse(t).
std::string pretty_print(const ExprAst& node);
std::string pretty_print(const SystemDef& def);
std::string pretty_print(const CandidateV& cand);

// Analytic theta evaluation, n x n; requires def.has_theta().
Matrix eval_theta(const SystemDef& def, long long k, const Vec& x);

// Analytic jacobian evaluation; requires def.has_jacobian().
Matrix eval_jacobian_analytic(const SystemDef& def, long long k, const Vec& x);

}  // namespace converge
