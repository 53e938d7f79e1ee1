#pragma once

#include <cstdint>
#include <random>

#include "sfmu/sfmu.hpp"

namespace sfmu::testing {

inline Matrix random_matrix(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = normal(rng);
  return m;
}

inline Vector random_vector(Eigen::Index n, std::mt19937_64& rng) { return random_matrix(n, 1, rng).col(0); }

inline SymMatrix random_symmetric(Eigen::Index p, std::mt19937_64& rng) {
  const Matrix a = random_matrix(p, p, rng);
  return SymMatrix(Matrix(0.5 * (a + a.transpose())));
}

inline SymMatrix random_psd(Eigen::Index p, std::mt19937_64& rng, Eigen::Index rank = -1) {
  const Matrix a = random_matrix(p, rank < 0 ? p : rank, rng);
  return SymMatrix(Matrix(a * a.transpose()));
}

/// The d=1 worked instance: x1 = 1 with target 1, x2 = 1 with target 0.
struct ScalarRidgeInstance {
  FeatureDataset ds;
  Matrix targets;
  ScalarRidgeInstance() {
    ds.n = 2;
    ds.d = 1;
    ds.k = 1;
    ds.features = Matrix::Ones(2, 1);
    ds.labels = {0, 0};
    targets = Matrix(2, 1);
    targets << 1.0, 0.0;
  }
};

/// Central finite-difference gradient.
template <typename F>
Vector fd_gradient(F&& f, const Vector& w, double h = 1e-6) {
  Vector g(w.size());
  for (Eigen::Index j = 0; j < w.size(); ++j) {
    Vector a = w, b = w;
    a(j) += h;
    b(j) -= h;
    g(j) = (f(a) - f(b)) / (2.0 * h);
  }
  return g;
}

/// Central finite-difference Jacobian of a vector function (for Hessians).
template <typename G>
Matrix fd_jacobian(G&& grad, const Vector& w, double h = 1e-5) {
  Matrix j(w.size(), w.size());
  for (Eigen::Index c = 0; c < w.size(); ++c) {
    Vector a = w, b = w;
    a(c) += h;
    b(c) -= h;
    j.col(c) = (grad(a) - grad(b)) / (2.0 * h);
  }
  return j;
}

inline double rel_err(const Vector& a, const Vector& b) { return (a - b).norm() / std::max(b.norm(), 1e-300); }
inline double rel_err(const Matrix& a, const Matrix& b) { return (a - b).norm() / std::max(b.norm(), 1e-300); }

}  // namespace sfmu::testing
