#pragma once

#include <initializer_list>
#include <vector>

#include "converge/errors.hpp"

namespace converge {

using Vec = std::vector<double>;

// Dense square matrix, row-major. Dimensions here stay small (n <= 64).
struct Matrix {
  int n = 0;
  std::vector<double> a;

  Matrix() = default;
  explicit Matrix(int dim) : n(dim), a(static_cast<std::size_t>(dim) * dim, 0.0) {}

  double& operator()(int i, int j) { return a[static_cast<std::size_t>(i) * n + j]; }
  double operator()(int i, int j) const { return a[static_cast<std::size_t>(i) * n + j]; }

  static Matrix identity(int dim);
  static Matrix from_rows(std::initializer_list<std::initializer_list<double>> rows);
};

// Symmetric matrix with exactly mirrored storage: set() writes both triangles,
// so (i,j) == (j,i) bitwise by construction.
struct SymMatrix {
  int n = 0;
  std::vector<double> a;

  SymMatrix() = default;
  explicit SymMatrix(int dim) : n(dim), a(static_cast<std::size_t>(dim) * dim, 0.0) {}

  double operator()(int i, int j) const { return a[static_cast<std::size_t>(i) * n + j]; }
  void set(int i, int j, double v) {
    a[static_cast<std::size_t>(i) * n + j] = v;
    a[static_cast<std::size_t>(j) * n + i] = v;
  }

  static SymMatrix identity(int dim);
  // Validates symmetry of the given rows exactly; mirrors the upper triangle.
  static SymMatrix from_rows(std::initializer_list<std::initializer_list<double>> rows);
  Matrix full() const;
};

struct EigenDecomp {
  Vec values;      // ascending
  Matrix vectors;  // orthonormal; column i pairs with values[i]
};

// Cyclic Jacobi rotations; residual ||S v - lambda v|| <= 1e-10 * ||S||.
EigenDecomp sym_eig(const SymMatrix& s);

// Upper-triangular factor with positive diagonal, theta^T theta = q.
// Requires lambda_min(q) > 1e-12 * ||q||, else NotPositiveDefinite.
Matrix cholesky(const SymMatrix& q);

// Smallest eigenvalue; definiteness calls use lambda_min >= -1e-9 * max(1, ||s||).
double psd_margin(const SymMatrix& s);

// Induced 2-norm: sqrt(lambda_max(a^T a)).
double induced_norm(const Matrix& a);

// Back substitution against the upper triangle of `upper`.
// Diagonal entries below 1e-14 in magnitude -> SingularFactor.
Vec solve_triangular(const Matrix& upper, const Vec& b);

Matrix operator*(const Matrix& x, const Matrix& y);
Vec operator*(const Matrix& x, const Vec& v);
Matrix operator+(const Matrix& x, const Matrix& y);
Matrix operator-(const Matrix& x, const Matrix& y);
Matrix operator*(double c, const Matrix& x);
Matrix transpose(const Matrix& x);
SymMatrix gram(const Matrix& a);  // a^T a with exact mirroring
Matrix invert(const Matrix& a);   // dense LU with partial pivoting; SingularFactor if rank-deficient

double norm2(const Vec& v);
Vec sub(const Vec& x, const Vec& y);
double frobenius(const Matrix& x);

}  // namespace converge
