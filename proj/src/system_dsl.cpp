#include "converge/system_dsl.hpp"

#include <array>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <map>
#include <random>
#include <sstream>

namespace converge {

namespace {

// ---------------------------------------------------------------- lexer

enum class Tok { Ident, Number, Plus, Minus, Star, Slash, Caret, LParen, RParen, Comma, Semi, Eq, End };

struct Token {
  Tok kind;
  std::string text;
  double value = 0.0;
  int line = 1;
  int col = 1;
};

std::vector<Token> lex(const std::string& text) {
  std::vector<Token> out;
  int line = 1, col = 1;
  std::size_t i = 0;
  auto push = [&](Tok k, std::string t, double v = 0.0) {
    out.push_back({k, std::move(t), v, line, col});
  };
  while (i < text.size()) {
    char c = text[i];
    if (c == '\n') {
      ++line;
      col = 1;
      ++i;
      continue;
    }
    if (c == ' ' || c == '\t' || c == '\r') {
      ++col;
      ++i;
      continue;
    }
    if (c == '#') {
      while (i < text.size() && text[i] != '\n') ++i;
      continue;
    }
    if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') {
      std::size_t start = i;
      while (i < text.size() && (std::isdigit(static_cast<unsigned char>(text[i])) || text[i] == '.')) ++i;
      if (i < text.size() && (text[i] == 'e' || text[i] == 'E')) {
        std::size_t save = i;
        ++i;
        if (i < text.size() && (text[i] == '+' || text[i] == '-')) ++i;
        if (i < text.size() && std::isdigit(static_cast<unsigned char>(text[i]))) {
          while (i < text.size() && std::isdigit(static_cast<unsigned char>(text[i]))) ++i;
        } else {
          i = save;
        }
      }
      std::string t = text.substr(start, i - start);
      double v = std::strtod(t.c_str(), nullptr);
      push(Tok::Number, t, v);
      col += static_cast<int>(t.size());
      continue;
    }
    if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
      std::size_t start = i;
      while (i < text.size() &&
             (std::isalnum(static_cast<unsigned char>(text[i])) || text[i] == '_'))
        ++i;
      std::string t = text.substr(start, i - start);
      push(Tok::Ident, t);
      col += static_cast<int>(t.size());
      continue;
    }
    Tok k;
    switch (c) {
      case '+': k = Tok::Plus; break;
      case '-': k = Tok::Minus; break;
      case '*': k = Tok::Star; break;
      case '/': k = Tok::Slash; break;
      case '^': k = Tok::Caret; break;
      case '(': k = Tok::LParen; break;
      case ')': k = Tok::RParen; break;
      case ',': k = Tok::Comma; break;
      case ';': k = Tok::Semi; break;
      case '=': k = Tok::Eq; break;
      default:
        throw ParseError(line, col, std::string("unexpected character '") + c + "'");
    }
    push(k, std::string(1, c));
    ++col;
    ++i;
  }
  out.push_back({Tok::End, "", 0.0, line, col});
  return out;
}

// ---------------------------------------------------------------- parser

std::optional<FuncId> func_by_name(const std::string& s) {
  if (s == "sin") return FuncId::Sin;
  if (s == "cos") return FuncId::Cos;
  if (s == "sqrt") return FuncId::Sqrt;
  if (s == "abs") return FuncId::Abs;
  if (s == "exp") return FuncId::Exp;
  if (s == "log") return FuncId::Log;
  if (s == "min") return FuncId::Min;
  if (s == "max") return FuncId::Max;
  if (s == "floor") return FuncId::Floor;
  return std::nullopt;
}

const char* func_name(FuncId f) {
  switch (f) {
    case FuncId::Sin: return "sin";
    case FuncId::Cos: return "cos";
    case FuncId::Sqrt: return "sqrt";
    case FuncId::Abs: return "abs";
    case FuncId::Exp: return "exp";
    case FuncId::Log: return "log";
    case FuncId::Min: return "min";
    case FuncId::Max: return "max";
    case FuncId::Floor: return "floor";
  }
  return "?";
}

bool is_constant_expr(const ExprNode& e) {
  switch (e.kind) {
    case NodeKind::Number: break;
    case NodeKind::TimeK:
    case NodeKind::StateX:
    case NodeKind::StateY:
    case NodeKind::ScalarS:
      return false;
    default: break;
  }
  for (const auto& kid : e.kids)
    if (!is_constant_expr(kid)) return false;
  return true;
}

// Statement as parsed; classification happens during assembly.
struct Stmt {
  std::string name;
  ExprAst expr;
  int line = 1;
  int col = 1;
};

struct Parser {
  const std::vector<Token>& toks;
  std::size_t pos = 0;

  explicit Parser(const std::vector<Token>& t) : toks(t) {}

  const Token& peek() const { return toks[pos]; }
  const Token& get() { return toks[pos++]; }
  bool accept(Tok k) {
    if (peek().kind == k) {
      ++pos;
      return true;
    }
    return false;
  }
  void expect(Tok k, const char* what) {
    if (!accept(k)) throw ParseError(peek().line, peek().col, std::string("expected ") + what);
  }

  ExprAst parse_expr() {
    ExprAst lhs = parse_term();
    while (peek().kind == Tok::Plus || peek().kind == Tok::Minus) {
      Tok op = get().kind;
      ExprAst rhs = parse_term();
      ExprAst node;
      node.kind = (op == Tok::Plus) ? NodeKind::Add : NodeKind::Sub;
      node.kids.push_back(std::move(lhs));
      node.kids.push_back(std::move(rhs));
      lhs = std::move(node);
    }
    return lhs;
  }

  ExprAst parse_term() {
    ExprAst lhs = parse_factor();
    while (peek().kind == Tok::Star || peek().kind == Tok::Slash) {
      Tok op = get().kind;
      ExprAst rhs = parse_factor();
      ExprAst node;
      node.kind = (op == Tok::Star) ? NodeKind::Mul : NodeKind::Div;
      node.kids.push_back(std::move(lhs));
      node.kids.push_back(std::move(rhs));
      lhs = std::move(node);
    }
    return lhs;
  }

  // At most one '^' per factor, as in the grammar.
  ExprAst parse_factor() {
    ExprAst b = parse_base();
    if (peek().kind == Tok::Caret) {
      get();
      ExprAst e = parse_base();
      ExprAst node;
      node.kind = NodeKind::Pow;
      if (is_constant_expr(e)) {
        EvalEnv<double> env;
        node.expo_const = true;
        node.expo_value = eval_node(e, env, nullptr);
        node.expo_int = std::abs(node.expo_value - std::round(node.expo_value)) < 1e-12 &&
                        std::abs(node.expo_value) < 1e9;
        if (node.expo_int) node.expo_value = std::round(node.expo_value);
      }
      node.kids.push_back(std::move(b));
      node.kids.push_back(std::move(e));
      return node;
    }
    return b;
  }

  ExprAst parse_base() {
    const Token& t = peek();
    switch (t.kind) {
      case Tok::Number: {
        get();
        ExprAst node;
        node.kind = NodeKind::Number;
        node.value = t.value;
        return node;
      }
      case Tok::Minus: {
        get();
        ExprAst inner = parse_base();
        if (inner.kind == NodeKind::Number) {
          inner.value = -inner.value;
          return inner;
        }
        ExprAst node;
        node.kind = NodeKind::Neg;
        node.kids.push_back(std::move(inner));
        return node;
      }
      case Tok::LParen: {
        get();
        ExprAst inner = parse_expr();
        expect(Tok::RParen, "')'");
        return inner;
      }
      case Tok::Ident: {
        get();
        if (auto f = func_by_name(t.text)) {
          expect(Tok::LParen, "'(' after function name");
          ExprAst node;
          node.kind = NodeKind::Call;
          node.func = *f;
          node.kids.push_back(parse_expr());
          bool binary = (*f == FuncId::Min || *f == FuncId::Max);
          if (binary) {
            expect(Tok::Comma, "',' (two-argument function)");
            node.kids.push_back(parse_expr());
          } else if (peek().kind == Tok::Comma) {
            throw ParseError(peek().line, peek().col, "single-argument function");
          }
          expect(Tok::RParen, "')'");
          return node;
        }
        return parse_var(t);
      }
      default:
        throw ParseError(t.line, t.col, "expected expression");
    }
  }

  ExprAst parse_var(const Token& t) {
    ExprAst node;
    if (t.text == "k") {
      node.kind = NodeKind::TimeK;
      return node;
    }
    if (t.text == "s") {
      node.kind = NodeKind::ScalarS;
      return node;
    }
    if ((t.text[0] == 'x' || t.text[0] == 'y') && t.text.size() > 1) {
      bool digits = true;
      for (std::size_t i = 1; i < t.text.size(); ++i)
        if (!std::isdigit(static_cast<unsigned char>(t.text[i]))) digits = false;
      if (digits) {
        int idx = std::atoi(t.text.c_str() + 1);
        if (idx < 1) throw ParseError(t.line, t.col, "unknown identifier " + t.text);
        node.kind = (t.text[0] == 'x') ? NodeKind::StateX : NodeKind::StateY;
        node.index = idx;
        return node;
      }
    }
    throw ParseError(t.line, t.col, "unknown identifier " + t.text);
  }
};

struct ParsedFile {
  bool has_dim = false;
  int dim = 0;
  std::optional<std::string> mode;
  std::vector<Stmt> stmts;
};

ParsedFile parse_file(const std::string& text) {
  auto toks = lex(text);
  Parser p(toks);
  ParsedFile file;

  if (p.peek().kind == Tok::Ident && p.peek().text == "dim") {
    p.get();
    const Token& t = p.peek();
    if (t.kind != Tok::Number || t.value != std::floor(t.value) || t.value < 1)
      throw ParseError(t.line, t.col, "expected positive integer after dim");
    file.has_dim = true;
    file.dim = static_cast<int>(t.value);
    p.get();
    p.expect(Tok::Semi, "';'");
  }

  while (p.peek().kind != Tok::End) {
    const Token& name = p.peek();
    if (name.kind != Tok::Ident)
      throw ParseError(name.line, name.col, "expected statement");
    if (name.text == "mode") {
      p.get();
      const Token& m = p.peek();
      if (m.kind != Tok::Ident) throw ParseError(m.line, m.col, "expected mode name");
      if (file.mode) throw ParseError(m.line, m.col, "duplicate mode statement");
      file.mode = m.text;
      p.get();
      p.expect(Tok::Semi, "';'");
      continue;
    }
    p.get();
    Stmt st;
    st.name = name.text;
    st.line = name.line;
    st.col = name.col;
    p.expect(Tok::Eq, "'='");
    st.expr = p.parse_expr();
    p.expect(Tok::Semi, "';'");
    file.stmts.push_back(std::move(st));
  }
  if (file.stmts.empty() && !file.mode)
    throw ParseError(1, 1, "empty file");
  return file;
}

// Scan for variable usage; max indices and presence flags.
struct VarScan {
  int max_x = 0;
  int max_y = 0;
  bool uses_s = false;
  bool uses_k = false;
  bool uses_y = false;
};

void scan_vars(const ExprNode& e, VarScan* s) {
  switch (e.kind) {
    case NodeKind::StateX: s->max_x = std::max(s->max_x, e.index); break;
    case NodeKind::StateY:
      s->max_y = std::max(s->max_y, e.index);
      s->uses_y = true;
      break;
    case NodeKind::ScalarS: s->uses_s = true; break;
    case NodeKind::TimeK: s->uses_k = true; break;
    default: break;
  }
  for (const auto& kid : e.kids) scan_vars(kid, s);
}

bool parse_indexed(const std::string& name, const std::string& prefix, int* idx) {
  if (name.size() <= prefix.size() || name.compare(0, prefix.size(), prefix) != 0) return false;
  for (std::size_t i = prefix.size(); i < name.size(); ++i)
    if (!std::isdigit(static_cast<unsigned char>(name[i]))) return false;
  *idx = std::atoi(name.c_str() + prefix.size());
  return true;
}

// jRC / thRC: row and column are single digits (grids supported for n <= 9).
bool parse_grid_entry(const std::string& name, const std::string& prefix, int* r, int* c) {
  if (name.size() != prefix.size() + 2 || name.compare(0, prefix.size(), prefix) != 0) return false;
  char a = name[prefix.size()], b = name[prefix.size() + 1];
  if (!std::isdigit(static_cast<unsigned char>(a)) || !std::isdigit(static_cast<unsigned char>(b)))
    return false;
  *r = a - '0';
  *c = b - '0';
  return *r >= 1 && *c >= 1;
}

void check_jacobian_against_ad(const SystemDef& def);

}  // namespace

bool ExprNode::operator==(const ExprNode& o) const {
  if (kind != o.kind || kids.size() != o.kids.size()) return false;
  switch (kind) {
    case NodeKind::Number:
      if (value != o.value) return false;
      break;
    case NodeKind::StateX:
    case NodeKind::StateY:
      if (index != o.index) return false;
      break;
    case NodeKind::Call:
      if (func != o.func) return false;
      break;
    default: break;
  }
  for (std::size_t i = 0; i < kids.size(); ++i)
    if (!(kids[i] == o.kids[i])) return false;
  return true;
}

double Monomial::operator()(double s) const { return c * std::pow(s, p); }

// ---------------------------------------------------------------- eval

namespace {

double fn_eval(FuncId f, double a, double b, EvalFlags*, const ExprNode& node) {
  switch (f) {
    case FuncId::Sin: return std::sin(a);
    case FuncId::Cos: return std::cos(a);
    case FuncId::Sqrt:
      if (a < 0.0) throw EvalDomainError(pretty_print(node));
      return std::sqrt(a);
    case FuncId::Abs: return std::abs(a);
    case FuncId::Exp: return std::exp(a);
    case FuncId::Log:
      if (a <= 0.0) throw EvalDomainError(pretty_print(node));
      return std::log(a);
    case FuncId::Min: return std::min(a, b);
    case FuncId::Max: return std::max(a, b);
    case FuncId::Floor: return std::floor(a);
  }
  return 0.0;
}

// Kinks take the right-hand branch and raise the flag.
Dual fn_eval(FuncId f, Dual a, Dual b, EvalFlags* flags, const ExprNode& node) {
  auto flag = [&] {
    if (flags) flags->nonsmooth = true;
  };
  switch (f) {
    case FuncId::Sin: return {std::sin(a.re), std::cos(a.re) * a.du};
    case FuncId::Cos: return {std::cos(a.re), -std::sin(a.re) * a.du};
    case FuncId::Sqrt:
      if (a.re < 0.0) throw EvalDomainError(pretty_print(node));
      if (a.re == 0.0) {
        flag();
        return {0.0, 0.0};
      }
      return {std::sqrt(a.re), a.du / (2.0 * std::sqrt(a.re))};
    case FuncId::Abs:
      if (a.re > 0.0) return a;
      if (a.re < 0.0) return {-a.re, -a.du};
      if (a.du != 0.0) flag();
      return {0.0, a.du};
    case FuncId::Exp: {
      double v = std::exp(a.re);
      return {v, v * a.du};
    }
    case FuncId::Log:
      if (a.re <= 0.0) throw EvalDomainError(pretty_print(node));
      return {std::log(a.re), a.du / a.re};
    case FuncId::Min:
      if (a.re < b.re) return a;
      if (a.re > b.re) return b;
      if (a.du != b.du) flag();
      return b;
    case FuncId::Max:
      if (a.re > b.re) return a;
      if (a.re < b.re) return b;
      if (a.du != b.du) flag();
      return a;
    case FuncId::Floor: {
      double v = std::floor(a.re);
      if (a.re == v && a.du != 0.0) flag();
      return {v, 0.0};
    }
  }
  return {};
}

inline Dual operator+(Dual a, Dual b) { return {a.re + b.re, a.du + b.du}; }
inline Dual operator-(Dual a, Dual b) { return {a.re - b.re, a.du - b.du}; }
inline Dual operator-(Dual a) { return {-a.re, -a.du}; }
inline Dual operator*(Dual a, Dual b) { return {a.re * b.re, a.du * b.re + a.re * b.du}; }
inline Dual operator/(Dual a, Dual b) {
  return {a.re / b.re, (a.du * b.re - a.re * b.du) / (b.re * b.re)};
}

inline double real_part(double v) { return v; }
inline double real_part(Dual v) { return v.re; }

template <class T>
T ipow(T base, long long e) {
  bool inv = e < 0;
  unsigned long long m = inv ? static_cast<unsigned long long>(-e) : static_cast<unsigned long long>(e);
  T r(1.0);
  T b = base;
  while (m) {
    if (m & 1ull) r = r * b;
    b = b * b;
    m >>= 1;
  }
  if (inv) r = T(1.0) / r;
  return r;
}

template <class T>
T eval_impl(const ExprNode& node, const EvalEnv<T>& env, EvalFlags* flags) {
  switch (node.kind) {
    case NodeKind::Number: return T(node.value);
    case NodeKind::TimeK: return env.k;
    case NodeKind::StateX:
      if (node.index < 1 || node.index > static_cast<int>(env.x.size()))
        throw EvalDomainError("x" + std::to_string(node.index) + " out of range");
      return env.x[node.index - 1];
    case NodeKind::StateY:
      if (node.index < 1 || node.index > static_cast<int>(env.y.size()))
        throw EvalDomainError("y" + std::to_string(node.index) + " out of range");
      return env.y[node.index - 1];
    case NodeKind::ScalarS: return env.s;
    case NodeKind::Neg: return -eval_impl(node.kids[0], env, flags);
    case NodeKind::Add:
      return eval_impl(node.kids[0], env, flags) + eval_impl(node.kids[1], env, flags);
    case NodeKind::Sub:
      return eval_impl(node.kids[0], env, flags) - eval_impl(node.kids[1], env, flags);
    case NodeKind::Mul:
      return eval_impl(node.kids[0], env, flags) * eval_impl(node.kids[1], env, flags);
    case NodeKind::Div: {
      T a = eval_impl(node.kids[0], env, flags);
      T b = eval_impl(node.kids[1], env, flags);
      if (real_part(b) == 0.0) throw EvalDomainError(pretty_print(node));
      return a / b;
    }
    case NodeKind::Pow: {
      T base = eval_impl(node.kids[0], env, flags);
      if (node.expo_const && node.expo_int) {
        long long e = static_cast<long long>(node.expo_value);
        if (e < 0 && real_part(base) == 0.0) throw EvalDomainError(pretty_print(node));
        return ipow(base, e);
      }
      T expo = node.expo_const ? T(node.expo_value) : eval_impl(node.kids[1], env, flags);
      double br = real_part(base);
      if (node.expo_const) {
        double p = node.expo_value;
        if (br < 0.0 || (br == 0.0 && p <= 0.0)) throw EvalDomainError(pretty_print(node));
        if constexpr (std::is_same_v<T, Dual>) {
          if (br == 0.0) {
            if (p < 1.0 && flags) flags->nonsmooth = true;
            return {0.0, 0.0};
          }
          double v = std::pow(br, p);
          return {v, p * std::pow(br, p - 1.0) * base.du};
        } else {
          return std::pow(br, p);
        }
      }
      if (br <= 0.0) throw EvalDomainError(pretty_print(node));
      if constexpr (std::is_same_v<T, Dual>) {
        double v = std::pow(br, expo.re);
        double dv = v * (expo.du * std::log(br) + expo.re * base.du / br);
        return {v, dv};
      } else {
        return std::pow(base, expo);
      }
    }
    case NodeKind::Call: {
      T a = eval_impl(node.kids[0], env, flags);
      T b = node.kids.size() > 1 ? eval_impl(node.kids[1], env, flags) : T(0.0);
      return fn_eval(node.func, a, b, flags, node);
    }
  }
  throw EvalDomainError("unreachable node");
}

}  // namespace

double eval_node(const ExprAst& node, const EvalEnv<double>& env, EvalFlags* flags) {
  return eval_impl(node, env, flags);
}

Dual eval_node(const ExprAst& node, const EvalEnv<Dual>& env, EvalFlags* flags) {
  return eval_impl(node, env, flags);
}

// ---------------------------------------------------------------- pretty print

namespace {

std::string number_text(double v) {
  std::array<char, 64> buf;
  auto res = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  std::string s(buf.data(), res.ptr);
  if (v < 0.0) return "(" + s + ")";
  return s;
}

bool is_atom(const ExprNode& e) {
  switch (e.kind) {
    case NodeKind::TimeK:
    case NodeKind::StateX:
    case NodeKind::StateY:
    case NodeKind::ScalarS:
    case NodeKind::Call:
      return true;
    case NodeKind::Number:
      return e.value >= 0.0;
    default:
      return false;
  }
}

int precedence(const ExprNode& e) {
  switch (e.kind) {
    case NodeKind::Add:
    case NodeKind::Sub: return 1;
    case NodeKind::Mul:
    case NodeKind::Div: return 2;
    case NodeKind::Neg: return 3;
    case NodeKind::Pow: return 4;
    default: return 5;
  }
}

std::string print_wrapped(const ExprNode& e, int min_prec) {
  std::string s = pretty_print(e);
  if (precedence(e) < min_prec) return "(" + s + ")";
  return s;
}

}  // namespace

std::string pretty_print(const ExprAst& e) {
  switch (e.kind) {
    case NodeKind::Number: return number_text(e.value);
    case NodeKind::TimeK: return "k";
    case NodeKind::StateX: return "x" + std::to_string(e.index);
    case NodeKind::StateY: return "y" + std::to_string(e.index);
    case NodeKind::ScalarS: return "s";
    case NodeKind::Neg: return "-" + print_wrapped(e.kids[0], 5);
    case NodeKind::Add:
      return print_wrapped(e.kids[0], 1) + " + " + print_wrapped(e.kids[1], 2);
    case NodeKind::Sub:
      return print_wrapped(e.kids[0], 1) + " - " + print_wrapped(e.kids[1], 2);
    case NodeKind::Mul:
      return print_wrapped(e.kids[0], 2) + "*" + print_wrapped(e.kids[1], 3);
    case NodeKind::Div:
      return print_wrapped(e.kids[0], 2) + "/" + print_wrapped(e.kids[1], 3);
    case NodeKind::Pow: {
      std::string base = is_atom(e.kids[0]) ? pretty_print(e.kids[0])
                                            : "(" + pretty_print(e.kids[0]) + ")";
      std::string expo = is_atom(e.kids[1]) ? pretty_print(e.kids[1])
                                            : "(" + pretty_print(e.kids[1]) + ")";
      return base + "^" + expo;
    }
    case NodeKind::Call: {
      std::string s = std::string(func_name(e.func)) + "(" + pretty_print(e.kids[0]);
      if (e.kids.size() > 1) s += ", " + pretty_print(e.kids[1]);
      return s + ")";
    }
  }
  return "?";
}

std::string pretty_print(const SystemDef& def) {
  std::ostringstream os;
  os << "dim " << def.n << ";\n";
  for (int i = 0; i < def.n; ++i)
    os << "f" << (i + 1) << " = " << pretty_print(def.f[i]) << ";\n";
  if (def.has_jacobian())
    for (int r = 0; r < def.n; ++r)
      for (int c = 0; c < def.n; ++c)
        os << "j" << (r + 1) << (c + 1) << " = " << pretty_print(def.jac[r][c]) << ";\n";
  if (def.has_theta())
    for (int r = 0; r < def.n; ++r)
      for (int c = 0; c < def.n; ++c)
        os << "th" << (r + 1) << (c + 1) << " = " << pretty_print(def.theta[r][c]) << ";\n";
  return os.str();
}

std::string pretty_print(const CandidateV& cand) {
  std::ostringstream os;
  const char* mode = cand.mode == CandidateMode::Incremental    ? "incremental"
                     : cand.mode == CandidateMode::Convergent   ? "convergent"
                                                                : "contraction";
  os << "mode " << mode << ";\n";
  os << "V = " << pretty_print(cand.v) << ";\n";
  if (cand.quadratic) {
    os << "c1 = " << number_text(cand.alpha1.c) << ";\n";
    os << "c2 = " << number_text(cand.alpha2.c) << ";\n";
    os << "c3 = " << number_text(cand.alpha3.c) << ";\n";
  } else {
    const Monomial* ms[3] = {&cand.alpha1, &cand.alpha2, &cand.alpha3};
    for (int i = 0; i < 3; ++i)
      os << "a" << (i + 1) << " = " << number_text(ms[i]->c) << "*s^" << number_text(ms[i]->p)
         << ";\n";
  }
  return os.str();
}

// ---------------------------------------------------------------- assembly

SystemDef parse_system(const std::string& text) {
  ParsedFile file = parse_file(text);
  if (!file.has_dim) throw ParseError(1, 1, "system file must start with a dim header");
  if (file.mode) throw ParseError(1, 1, "mode statement belongs in candidate files");
  const int n = file.dim;

  SystemDef def;
  def.n = n;
  def.f.resize(n);
  std::vector<bool> have_f(n, false);
  std::map<std::pair<int, int>, ExprAst> jac, theta;

  for (auto& st : file.stmts) {
    VarScan vs;
    scan_vars(st.expr, &vs);
    if (vs.uses_y)
      throw ParseError(st.line, st.col, "unknown identifier: y variables are candidate-only");
    if (vs.uses_s)
      throw ParseError(st.line, st.col, "unknown identifier: s is candidate-only");
    if (vs.max_x > n)
      throw ParseError(st.line, st.col,
                       "unknown identifier x" + std::to_string(vs.max_x) + " in dim " +
                           std::to_string(n) + " system");

    int idx = 0, r = 0, c = 0;
    if (parse_indexed(st.name, "f", &idx)) {
      if (idx < 1 || idx > n)
        throw ParseError(st.line, st.col, "dimension mismatch: " + st.name + " out of range");
      if (have_f[idx - 1]) throw ParseError(st.line, st.col, "duplicate " + st.name);
      def.f[idx - 1] = std::move(st.expr);
      have_f[idx - 1] = true;
    } else if (parse_grid_entry(st.name, "j", &r, &c)) {
      if (n > 9) throw ParseError(st.line, st.col, "analytic jacobian grids support dim <= 9");
      if (r > n || c > n)
        throw ParseError(st.line, st.col, "dimension mismatch: " + st.name + " out of range");
      if (!jac.emplace(std::make_pair(r, c), std::move(st.expr)).second)
        throw ParseError(st.line, st.col, "duplicate " + st.name);
    } else if (parse_grid_entry(st.name, "th", &r, &c)) {
      if (n > 9) throw ParseError(st.line, st.col, "metric grids support dim <= 9");
      if (r > n || c > n)
        throw ParseError(st.line, st.col, "dimension mismatch: " + st.name + " out of range");
      if (!theta.emplace(std::make_pair(r, c), std::move(st.expr)).second)
        throw ParseError(st.line, st.col, "duplicate " + st.name);
    } else {
      throw ParseError(st.line, st.col, "unknown identifier " + st.name);
    }
  }

  for (int i = 0; i < n; ++i)
    if (!have_f[i])
      throw ParseError(1, 1, "dimension mismatch: f" + std::to_string(i + 1) + " missing");

  auto build_grid = [&](std::map<std::pair<int, int>, ExprAst>& entries, const char* what) {
    std::vector<std::vector<ExprAst>> grid;
    if (entries.empty()) return grid;
    if (static_cast<int>(entries.size()) != n * n)
      throw ParseError(1, 1, std::string("dimension mismatch: incomplete ") + what + " grid");
    grid.resize(n);
    for (auto& [rc, e] : entries) grid[rc.first - 1].resize(n);
    for (auto& [rc, e] : entries) grid[rc.first - 1][rc.second - 1] = std::move(e);
    return grid;
  };
  def.jac = build_grid(jac, "jacobian");
  def.theta = build_grid(theta, "theta");

  if (def.has_jacobian()) check_jacobian_against_ad(def);
  return def;
}

Vec eval_map(const SystemDef& def, long long k, const Vec& x) {
  if (static_cast<int>(x.size()) != def.n) throw InvalidShape("eval_map: state dimension mismatch");
  EvalEnv<double> env;
  env.k = static_cast<double>(k);
  env.x = std::span<const double>(x);
  Vec out(def.n);
  for (int i = 0; i < def.n; ++i) out[i] = eval_node(def.f[i], env, nullptr);
  return out;
}

AdResult eval_jacobian_ad(const SystemDef& def, long long k, const Vec& x) {
  if (static_cast<int>(x.size()) != def.n)
    throw InvalidShape("eval_jacobian_ad: state dimension mismatch");
  AdResult res;
  res.jac = Matrix(def.n);
  EvalFlags flags;
  std::vector<Dual> xd(def.n);
  for (int j = 0; j < def.n; ++j) {
    for (int i = 0; i < def.n; ++i) xd[i] = Dual(x[i], i == j ? 1.0 : 0.0);
    EvalEnv<Dual> env;
    env.k = Dual(static_cast<double>(k));
    env.x = std::span<const Dual>(xd);
    for (int i = 0; i < def.n; ++i) res.jac(i, j) = eval_node(def.f[i], env, &flags).du;
  }
  res.nonsmooth = flags.nonsmooth;
  return res;
}

Matrix eval_jacobian_analytic(const SystemDef& def, long long k, const Vec& x) {
  if (!def.has_jacobian()) throw InvalidDomain("no analytic jacobian declared");
  EvalEnv<double> env;
  env.k = static_cast<double>(k);
  env.x = std::span<const double>(x);
  Matrix j(def.n);
  for (int r = 0; r < def.n; ++r)
    for (int c = 0; c < def.n; ++c) j(r, c) = eval_node(def.jac[r][c], env, nullptr);
  return j;
}

Matrix eval_theta(const SystemDef& def, long long k, const Vec& x) {
  if (!def.has_theta()) throw InvalidDomain("no metric declared");
  EvalEnv<double> env;
  env.k = static_cast<double>(k);
  env.x = std::span<const double>(x);
  Matrix th(def.n);
  for (int r = 0; r < def.n; ++r)
    for (int c = 0; c < def.n; ++c) th(r, c) = eval_node(def.theta[r][c], env, nullptr);
  return th;
}

namespace {

// Declared jacobians must agree with forward-mode differentiation on 100
// random points before the definition is accepted.
void check_jacobian_against_ad(const SystemDef& def) {
  std::mt19937_64 rng(0x9e3779b97f4a7c15ull);
  auto uniform = [&](double lo, double hi) {
    double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
    return lo + (hi - lo) * u;
  };
  int valid = 0;
  for (int attempt = 0; attempt < 1000 && valid < 100; ++attempt) {
    Vec x(def.n);
    for (auto& v : x) v = uniform(-5.0, 5.0);
    long long k = static_cast<long long>(std::floor(uniform(-10.0, 11.0)));
    try {
      AdResult ad = eval_jacobian_ad(def, k, x);
      if (ad.nonsmooth) continue;
      Matrix an = eval_jacobian_analytic(def, k, x);
      double scale = 1.0 + frobenius(ad.jac);
      for (int r = 0; r < def.n; ++r)
        for (int c = 0; c < def.n; ++c)
          if (std::abs(ad.jac(r, c) - an(r, c)) > 1e-8 * scale)
            throw JacobianMismatch("declared jacobian disagrees with forward-mode value at (" +
                                   std::to_string(k) + ", x), entry (" + std::to_string(r + 1) +
                                   "," + std::to_string(c + 1) + ")");
      ++valid;
    } catch (const EvalDomainError&) {
      continue;
    }
  }
}

std::optional<std::pair<double, double>> match_monomial(const ExprNode& e) {
  switch (e.kind) {
    case NodeKind::ScalarS: return std::make_pair(1.0, 1.0);
    case NodeKind::Pow:
      if (e.kids[0].kind == NodeKind::ScalarS && e.expo_const)
        return std::make_pair(1.0, e.expo_value);
      return std::nullopt;
    case NodeKind::Neg: {
      auto m = match_monomial(e.kids[0]);
      if (!m) return std::nullopt;
      return std::make_pair(-m->first, m->second);
    }
    case NodeKind::Mul:
    case NodeKind::Div: {
      const ExprNode& a = e.kids[0];
      const ExprNode& b = e.kids[1];
      EvalEnv<double> env;
      if (is_constant_expr(a) && e.kind == NodeKind::Mul) {
        auto m = match_monomial(b);
        if (m) return std::make_pair(eval_node(a, env) * m->first, m->second);
      }
      if (is_constant_expr(b)) {
        auto m = match_monomial(a);
        if (m) {
          double cb = eval_node(b, env);
          if (e.kind == NodeKind::Div && cb == 0.0) return std::nullopt;
          return std::make_pair(e.kind == NodeKind::Mul ? m->first * cb : m->first / cb,
                                m->second);
        }
      }
      return std::nullopt;
    }
    default:
      return std::nullopt;
  }
}

}  // namespace

CandidateV parse_candidate(const std::string& text) {
  ParsedFile file = parse_file(text);
  if (!file.mode) throw ParseError(1, 1, "candidate file must declare a mode");

  CandidateV cand;
  if (*file.mode == "incremental")
    cand.mode = CandidateMode::Incremental;
  else if (*file.mode == "convergent")
    cand.mode = CandidateMode::Convergent;
  else if (*file.mode == "contraction")
    cand.mode = CandidateMode::Contraction;
  else
    throw ParseError(1, 1, "unknown mode " + *file.mode);

  std::optional<ExprAst> v;
  std::optional<Monomial> alphas[3];
  bool saw_a = false, saw_c = false;

  for (auto& st : file.stmts) {
    int idx = 0;
    if (st.name == "V") {
      if (v) throw ParseError(st.line, st.col, "duplicate V");
      v = std::move(st.expr);
    } else if (parse_indexed(st.name, "a", &idx) && idx >= 1 && idx <= 3) {
      auto m = match_monomial(st.expr);
      if (!m)
        throw ParseError(st.line, st.col,
                         "class-K bound must be a monomial c*s^p: " + st.name);
      if (m->first <= 0.0)
        throw ParseError(st.line, st.col, "non-positive coefficient in " + st.name);
      if (m->second < 1.0)
        throw ParseError(st.line, st.col, "class-K exponent must be >= 1 in " + st.name);
      alphas[idx - 1] = Monomial{m->first, m->second};
      saw_a = true;
    } else if (parse_indexed(st.name, "c", &idx) && idx >= 1 && idx <= 3) {
      if (!is_constant_expr(st.expr))
        throw ParseError(st.line, st.col, st.name + " must be a constant");
      EvalEnv<double> env;
      double cv = eval_node(st.expr, env);
      if (cv <= 0.0) throw ParseError(st.line, st.col, "non-positive coefficient in " + st.name);
      alphas[idx - 1] = Monomial{cv, 2.0};
      saw_c = true;
    } else {
      throw ParseError(st.line, st.col, "unknown identifier " + st.name);
    }
  }

  if (!v) throw ParseError(1, 1, "candidate must define V");
  if (saw_a && saw_c) throw ParseError(1, 1, "mix of a1..a3 and c1..c3 bounds");
  for (int i = 0; i < 3; ++i)
    if (!alphas[i])
      throw ParseError(1, 1, "missing bound " + std::string(saw_c ? "c" : "a") + std::to_string(i + 1));

  VarScan vs;
  scan_vars(*v, &vs);
  if (vs.uses_s) throw ParseError(1, 1, "V may not reference s");
  if (cand.mode == CandidateMode::Convergent && vs.uses_y)
    throw ParseError(1, 1, "convergent-mode V may not reference y variables");

  cand.v = std::move(*v);
  cand.alpha1 = *alphas[0];
  cand.alpha2 = *alphas[1];
  cand.alpha3 = *alphas[2];
  cand.quadratic = saw_c;

  int inferred = std::max(vs.max_x, vs.max_y);
  if (file.has_dim) {
    if (inferred > file.dim)
      throw ParseError(1, 1, "unknown identifier: variable index exceeds declared dim");
    cand.n = file.dim;
  } else {
    if (inferred < 1) throw ParseError(1, 1, "cannot infer dimension: V uses no state variables");
    cand.n = inferred;
  }
  return cand;
}

double eval_candidate(const CandidateV& cand, long long k, const Vec& x, const Vec& y) {
  EvalEnv<double> env;
  env.k = static_cast<double>(k);
  env.x = std::span<const double>(x);
  env.y = std::span<const double>(y);
  return eval_node(cand.v, env, nullptr);
}

}  // namespace converge
