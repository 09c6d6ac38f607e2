#include "converge/matrix_kit.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace converge {

namespace {

void require_finite(const std::vector<double>& a, const char* what) {
  for (double v : a) {
    if (!std::isfinite(v)) throw InvalidMatrix(std::string(what) + ": non-finite entry");
  }
}

}  // namespace

Matrix Matrix::identity(int dim) {
  Matrix m(dim);
  for (int i = 0; i < dim; ++i) m(i, i) = 1.0;
  return m;
}

Matrix Matrix::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
  Matrix m(static_cast<int>(rows.size()));
  int i = 0;
  for (const auto& row : rows) {
    if (static_cast<int>(row.size()) != m.n) throw InvalidShape("from_rows: ragged rows");
    int j = 0;
    for (double v : row) m(i, j++) = v;
    ++i;
  }
  return m;
}

SymMatrix SymMatrix::identity(int dim) {
  SymMatrix s(dim);
  for (int i = 0; i < dim; ++i) s.set(i, i, 1.0);
  return s;
}

SymMatrix SymMatrix::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
  Matrix m = Matrix::from_rows(rows);
  for (int i = 0; i < m.n; ++i)
    for (int j = i + 1; j < m.n; ++j)
      if (m(i, j) != m(j, i)) throw InvalidMatrix("from_rows: not symmetric");
  SymMatrix s(m.n);
  for (int i = 0; i < m.n; ++i)
    for (int j = i; j < m.n; ++j) s.set(i, j, m(i, j));
  return s;
}

Matrix SymMatrix::full() const {
  Matrix m(n);
  m.a = a;
  return m;
}

Matrix operator*(const Matrix& x, const Matrix& y) {
  if (x.n != y.n) throw InvalidShape("matmul: dimension mismatch");
  Matrix r(x.n);
  for (int i = 0; i < x.n; ++i)
    for (int k = 0; k < x.n; ++k) {
      double xi = x(i, k);
      if (xi == 0.0) continue;
      for (int j = 0; j < x.n; ++j) r(i, j) += xi * y(k, j);
    }
  return r;
}

Vec operator*(const Matrix& x, const Vec& v) {
  if (x.n != static_cast<int>(v.size())) throw InvalidShape("matvec: dimension mismatch");
  Vec r(v.size(), 0.0);
  for (int i = 0; i < x.n; ++i) {
    double acc = 0.0;
    for (int j = 0; j < x.n; ++j) acc += x(i, j) * v[j];
    r[i] = acc;
  }
  return r;
}

Matrix operator+(const Matrix& x, const Matrix& y) {
  if (x.n != y.n) throw InvalidShape("add: dimension mismatch");
  Matrix r = x;
  for (std::size_t i = 0; i < r.a.size(); ++i) r.a[i] += y.a[i];
  return r;
}

Matrix operator-(const Matrix& x, const Matrix& y) {
  if (x.n != y.n) throw InvalidShape("sub: dimension mismatch");
  Matrix r = x;
  for (std::size_t i = 0; i < r.a.size(); ++i) r.a[i] -= y.a[i];
  return r;
}

Matrix operator*(double c, const Matrix& x) {
  Matrix r = x;
  for (double& v : r.a) v *= c;
  return r;
}

Matrix transpose(const Matrix& x) {
  Matrix r(x.n);
  for (int i = 0; i < x.n; ++i)
    for (int j = 0; j < x.n; ++j) r(j, i) = x(i, j);
  return r;
}

SymMatrix gram(const Matrix& a) {
  SymMatrix g(a.n);
  for (int i = 0; i < a.n; ++i)
    for (int j = i; j < a.n; ++j) {
      double acc = 0.0;
      for (int k = 0; k < a.n; ++k) acc += a(k, i) * a(k, j);
      g.set(i, j, acc);
    }
  return g;
}

double norm2(const Vec& v) {
  double acc = 0.0;
  for (double x : v) acc += x * x;
  return std::sqrt(acc);
}

Vec sub(const Vec& x, const Vec& y) {
  if (x.size() != y.size()) throw InvalidShape("sub: dimension mismatch");
  Vec r(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) r[i] = x[i] - y[i];
  return r;
}

double frobenius(const Matrix& x) {
  double acc = 0.0;
  for (double v : x.a) acc += v * v;
  return std::sqrt(acc);
}

EigenDecomp sym_eig(const SymMatrix& s) {
  require_finite(s.a, "sym_eig");
  const int n = s.n;
  if (n <= 0) throw InvalidShape("sym_eig: empty matrix");
  if (n > 64) throw InvalidShape("sym_eig: dimension above 64");

  Matrix a = s.full();
  Matrix v = Matrix::identity(n);

  double fro = frobenius(a);
  const double stop = 1e-15 * std::max(1.0, fro);
  const int max_sweeps = 64;

  for (int sweep = 0; sweep < max_sweeps; ++sweep) {
    double off = 0.0;
    for (int p = 0; p < n; ++p)
      for (int q = p + 1; q < n; ++q) off += a(p, q) * a(p, q);
    if (std::sqrt(off) <= stop) break;

    for (int p = 0; p < n; ++p) {
      for (int q = p + 1; q < n; ++q) {
        double apq = a(p, q);
        if (apq == 0.0) continue;
        double app = a(p, p);
        double aqq = a(q, q);
        double theta = (aqq - app) / (2.0 * apq);
        double t;
        if (std::isfinite(theta)) {
          t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        } else {
          t = 1.0 / (2.0 * theta);
        }
        double c = 1.0 / std::sqrt(t * t + 1.0);
        double sn = t * c;

        a(p, p) = app - t * apq;
        a(q, q) = aqq + t * apq;
        a(p, q) = 0.0;
        a(q, p) = 0.0;
        for (int i = 0; i < n; ++i) {
          if (i == p || i == q) continue;
          double aip = a(i, p);
          double aiq = a(i, q);
          a(i, p) = c * aip - sn * aiq;
          a(p, i) = a(i, p);
          a(i, q) = sn * aip + c * aiq;
          a(q, i) = a(i, q);
        }
        for (int i = 0; i < n; ++i) {
          double vip = v(i, p);
          double viq = v(i, q);
          v(i, p) = c * vip - sn * viq;
          v(i, q) = sn * vip + c * viq;
        }
      }
    }
  }

  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int x, int y) { return a(x, x) < a(y, y); });

  EigenDecomp d;
  d.values.resize(n);
  d.vectors = Matrix(n);
  for (int j = 0; j < n; ++j) {
    d.values[j] = a(order[j], order[j]);
    for (int i = 0; i < n; ++i) d.vectors(i, j) = v(i, order[j]);
  }
  return d;
}

double psd_margin(const SymMatrix& s) { return sym_eig(s).values.front(); }

Matrix cholesky(const SymMatrix& q) {
  require_finite(q.a, "cholesky");
  EigenDecomp d = sym_eig(q);
  double lmin = d.values.front();
  double lmax_abs = std::max(std::abs(d.values.front()), std::abs(d.values.back()));
  if (!(lmin > 1e-12 * lmax_abs)) throw NotPositiveDefinite(lmin);

  const int n = q.n;
  Matrix th(n);
  for (int i = 0; i < n; ++i) {
    for (int j = i; j < n; ++j) {
      double acc = q(i, j);
      for (int m = 0; m < i; ++m) acc -= th(m, i) * th(m, j);
      if (i == j) {
        if (acc <= 0.0) throw NotPositiveDefinite(lmin);
        th(i, i) = std::sqrt(acc);
      } else {
        th(i, j) = acc / th(i, i);
      }
    }
  }
  return th;
}

double induced_norm(const Matrix& a) {
  require_finite(a.a, "induced_norm");
  if (a.n == 0) throw InvalidShape("induced_norm: empty matrix");
  EigenDecomp d = sym_eig(gram(a));
  return std::sqrt(std::max(0.0, d.values.back()));
}

Vec solve_triangular(const Matrix& upper, const Vec& b) {
  const int n = upper.n;
  if (n != static_cast<int>(b.size())) throw InvalidShape("solve_triangular: dimension mismatch");
  Vec x(b);
  for (int i = n - 1; i >= 0; --i) {
    double d = upper(i, i);
    if (std::abs(d) < 1e-14) throw SingularFactor("solve_triangular: zero diagonal");
    double acc = x[i];
    for (int j = i + 1; j < n; ++j) acc -= upper(i, j) * x[j];
    x[i] = acc / d;
  }
  return x;
}

Matrix invert(const Matrix& a) {
  const int n = a.n;
  Matrix lu = a;
  Matrix inv = Matrix::identity(n);
  std::vector<int> piv(n);
  std::iota(piv.begin(), piv.end(), 0);

  // LU with partial pivoting, applied to the identity columns in place.
  for (int col = 0; col < n; ++col) {
    int best = col;
    for (int r = col + 1; r < n; ++r)
      if (std::abs(lu(r, col)) > std::abs(lu(best, col))) best = r;
    if (std::abs(lu(best, col)) < 1e-300) throw SingularFactor("invert: singular matrix");
    if (best != col) {
      for (int j = 0; j < n; ++j) {
        std::swap(lu.a[static_cast<std::size_t>(col) * n + j],
                  lu.a[static_cast<std::size_t>(best) * n + j]);
        std::swap(inv.a[static_cast<std::size_t>(col) * n + j],
                  inv.a[static_cast<std::size_t>(best) * n + j]);
      }
    }
    double d = lu(col, col);
    for (int r = col + 1; r < n; ++r) {
      double f = lu(r, col) / d;
      if (f == 0.0) continue;
      for (int j = col; j < n; ++j) lu(r, j) -= f * lu(col, j);
      for (int j = 0; j < n; ++j) inv(r, j) -= f * inv(col, j);
    }
  }
  for (int col = n - 1; col >= 0; --col) {
    double d = lu(col, col);
    for (int j = 0; j < n; ++j) inv(col, j) /= d;
    for (int r = 0; r < col; ++r) {
      double f = lu(r, col);
      if (f == 0.0) continue;
      for (int j = 0; j < n; ++j) inv(r, j) -= f * inv(col, j);
    }
  }
  return inv;
}

}  // namespace converge
