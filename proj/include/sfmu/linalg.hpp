#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "sfmu/errors.hpp"

namespace sfmu {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Dense symmetric p x p matrix. The upper triangle of the source is
/// authoritative; the lower triangle is mirrored at construction so that
/// entries(i,j) == entries(j,i) holds exactly.
class SymMatrix {
 public:
  SymMatrix() = default;

  explicit SymMatrix(Matrix m) : m_(std::move(m)) {
    if (m_.rows() != m_.cols()) {
      throw DimensionMismatch("SymMatrix: source is " + std::to_string(m_.rows()) + "x" +
                              std::to_string(m_.cols()));
    }
    if (m_.rows() < 1) throw DimensionMismatch("SymMatrix: dimension must be >= 1");
    m_.triangularView<Eigen::StrictlyLower>() = m_.transpose().triangularView<Eigen::StrictlyLower>();
  }

  static SymMatrix zero(Eigen::Index p) { return SymMatrix(Matrix::Zero(p, p)); }
  static SymMatrix identity(Eigen::Index p) { return SymMatrix(Matrix::Identity(p, p)); }

  /// I_k (x) block: the p = k*d block-diagonal matrix with k copies of block.
  static SymMatrix block_diagonal(const SymMatrix& block, Eigen::Index copies) {
    const Eigen::Index d = block.dim();
    Matrix m = Matrix::Zero(d * copies, d * copies);
    for (Eigen::Index c = 0; c < copies; ++c) m.block(c * d, c * d, d, d) = block.dense();
    return SymMatrix(std::move(m));
  }

  Eigen::Index dim() const { return m_.rows(); }
  double operator()(Eigen::Index i, Eigen::Index j) const { return m_(i, j); }
  const Matrix& dense() const { return m_; }

  double trace() const { return m_.trace(); }

  SymMatrix operator+(const SymMatrix& o) const { return SymMatrix(Matrix(m_ + checked(o).m_)); }
  SymMatrix operator-(const SymMatrix& o) const { return SymMatrix(Matrix(m_ - checked(o).m_)); }
  SymMatrix operator*(double s) const { return SymMatrix(Matrix(m_ * s)); }
  Vector operator*(const Vector& v) const {
    if (v.size() != dim()) throw DimensionMismatch("SymMatrix * vector: size mismatch");
    return m_ * v;
  }

  SymMatrix shifted(double tau) const {
    Matrix m = m_;
    m.diagonal().array() += tau;
    return SymMatrix(std::move(m));
  }

 private:
  const SymMatrix& checked(const SymMatrix& o) const {
    if (o.dim() != dim()) throw DimensionMismatch("SymMatrix: dimension mismatch");
    return o;
  }

  Matrix m_;
};

struct EigenDecomposition {
  Vector eigenvalues;   // descending
  Matrix eigenvectors;  // columns, matching eigenvalues
};

/// Symmetric eigensolver (Householder tridiagonalization + implicit QL/QR).
inline EigenDecomposition eigen_decompose(const SymMatrix& a) {
  Eigen::SelfAdjointEigenSolver<Matrix> solver(a.dense());
  if (solver.info() != Eigen::Success) throw NotConverged("eigen_decompose: eigensolver failed");
  // Eigen returns ascending order.
  const Eigen::Index p = a.dim();
  EigenDecomposition out{Vector(p), Matrix(p, p)};
  for (Eigen::Index i = 0; i < p; ++i) {
    out.eigenvalues(i) = solver.eigenvalues()(p - 1 - i);
    out.eigenvectors.col(i) = solver.eigenvectors().col(p - 1 - i);
  }
  return out;
}

inline SymMatrix reconstruct(const EigenDecomposition& e) {
  return SymMatrix(Matrix(e.eigenvectors * e.eigenvalues.asDiagonal() * e.eigenvectors.transpose()));
}

inline double frobenius_norm(const SymMatrix& a) { return a.dense().norm(); }

inline double spectral_norm(const SymMatrix& a) {
  const auto e = eigen_decompose(a);
  return std::max(std::abs(e.eigenvalues(0)), std::abs(e.eigenvalues(e.eigenvalues.size() - 1)));
}

inline double min_eigenvalue(const SymMatrix& a) {
  Eigen::SelfAdjointEigenSolver<Matrix> solver(a.dense(), Eigen::EigenvaluesOnly);
  return solver.eigenvalues()(0);
}

/// Frobenius-nearest PSD matrix: clamp negative eigenvalues to exactly 0.
/// With floor > 0, the nearest matrix with spectrum >= floor instead.
inline SymMatrix project_psd(const SymMatrix& a, double floor = 0.0) {
  auto e = eigen_decompose(a);
  e.eigenvalues = e.eigenvalues.cwiseMax(floor);
  return reconstruct(e);
}

/// Solves A x = b for symmetric positive definite A by Cholesky.
inline Vector solve_spd(const SymMatrix& a, const Vector& b) {
  if (b.size() != a.dim()) throw DimensionMismatch("solve_spd: rhs size mismatch");
  Eigen::LLT<Matrix> llt(a.dense());
  if (llt.info() != Eigen::Success) {
    throw NotPositiveDefinite("solve_spd: non-positive pivot in Cholesky factorization");
  }
  Vector x = llt.solve(b);
  // One step of iterative refinement keeps the residual well under 1e-8 |b|
  // for the moderately conditioned systems seen here.
  x += llt.solve(b - a.dense() * x);
  return x;
}

}  // namespace sfmu
