#pragma once

#include <Eigen/QR>

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "sfmu/losses.hpp"
#include "sfmu/trainer.hpp"

namespace sfmu {

/// Random weight perturbations around w* and the forget-side responses to
/// them. Each probe is a full parameter vector; with copies > 1 it is read as
/// `copies` consecutive blocks of length `side`, all sharing one unknown
/// side x side curvature block.
struct PerturbationSet {
  Matrix probes;        // m x p, row i is (dw)_i
  double eta = 1.0;     // per-coordinate standard deviation
  std::uint64_t seed = 0;
  Vector forget_grad;   // grad_f(w*)
  Vector loss_diffs;    // dL_f(w*+(dw)_i) = L_f(w*+(dw)_i) - L_f(w*)

  Eigen::Index count() const { return probes.rows(); }
  Eigen::Index dim() const { return probes.cols(); }
};

/// m i.i.d. probes with coordinates eta * N(0,1); deterministic per seed.
inline PerturbationSet sample_probes(Eigen::Index p, Eigen::Index m, double eta, std::uint64_t seed) {
  if (m < 1) throw UsageError("sample_probes: m must be >= 1");
  if (!(eta > 0.0)) throw UsageError("sample_probes: eta must be > 0");
  if (p < 1) throw DimensionMismatch("sample_probes: dimension must be >= 1");
  PerturbationSet set;
  set.eta = eta;
  set.seed = seed;
  set.probes.resize(m, p);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (Eigen::Index i = 0; i < m; ++i)
    for (Eigen::Index j = 0; j < p; ++j) set.probes(i, j) = eta * normal(rng);
  return set;
}

/// L(w* + (dw)_i) - L(w*) for every probe.
template <LinearDesign Design>
Vector loss_differences(const SubsetLoss<Design>& loss, const Vector& w_star, const Matrix& probes) {
  if (probes.cols() != w_star.size()) throw DimensionMismatch("loss_differences: probe dimension mismatch");
  const double base = loss.value(w_star);
  Vector out(probes.rows());
  for (Eigen::Index i = 0; i < probes.rows(); ++i) out(i) = loss.value(Vector(w_star + probes.row(i).transpose())) - base;
  return out;
}

/// Evaluate and cache grad_f(w*) and dL_f at each probe. `forget_scale`
/// multiplies the loss differences (see EstimatorOptions).
template <LinearDesign Design>
void record_forget_responses(PerturbationSet& set, const SubsetLoss<Design>& forget, const Vector& w_star,
                             double forget_scale = 1.0) {
  if (forget.size() == 0) throw EmptyIndexSet("record_forget_responses: forget set is empty");
  set.forget_grad = forget.gradient(w_star);
  set.loss_diffs = forget_scale * loss_differences(forget, w_star, set.probes);
}

namespace detail {

inline Eigen::Index vech_size(Eigen::Index s) { return s * (s + 1) / 2; }

// Column of the (a <= b) entry in the vech ordering.
inline Eigen::Index vech_index(Eigen::Index s, Eigen::Index a, Eigen::Index b) {
  return a * s - a * (a - 1) / 2 + (b - a);
}

inline Vector vech(const Matrix& x) {
  const Eigen::Index s = x.rows();
  Vector v(vech_size(s));
  for (Eigen::Index a = 0; a < s; ++a)
    for (Eigen::Index b = a; b < s; ++b) v(vech_index(s, a, b)) = x(a, b);
  return v;
}

inline Matrix unvech(const Vector& v, Eigen::Index s) {
  Matrix x(s, s);
  for (Eigen::Index a = 0; a < s; ++a)
    for (Eigen::Index b = a; b < s; ++b) x(a, b) = x(b, a) = v(vech_index(s, a, b));
  return x;
}

// Q_i = sum_c (dw_c)(dw_c)^T over the probe's blocks.
inline Matrix probe_outer(const Eigen::Ref<const Vector>& probe, Eigen::Index side) {
  const Eigen::Index copies = probe.size() / side;
  Matrix q = Matrix::Zero(side, side);
  for (Eigen::Index c = 0; c < copies; ++c) {
    const auto seg = probe.segment(c * side, side);
    q.noalias() += seg * seg.transpose();
  }
  return q;
}

// Linear map X -> (1/2 sum_c dw_c^T X dw_c)_i over the probes. Stored as a
// dense m x s(s+1)/2 matrix when that fits in `dense_limit` entries,
// otherwise applied matrix-free from the probes.
class ProbeDesign {
 public:
  ProbeDesign(const Matrix& probes, Eigen::Index side, Eigen::Index dense_limit = 20'000'000)
      : probes_(&probes), side_(side) {
    const Eigen::Index q = vech_size(side);
    if (probes.rows() * q > dense_limit) return;
    phi_.resize(probes.rows(), q);
    for (Eigen::Index i = 0; i < probes.rows(); ++i) {
      const Matrix outer = probe_outer(probes.row(i).transpose(), side);
      for (Eigen::Index a = 0; a < side; ++a) {
        phi_(i, vech_index(side, a, a)) = 0.5 * outer(a, a);
        for (Eigen::Index b = a + 1; b < side; ++b) phi_(i, vech_index(side, a, b)) = outer(a, b);
      }
    }
  }

  bool dense() const { return phi_.size() != 0; }
  const Matrix& phi() const { return phi_; }
  Eigen::Index side() const { return side_; }
  Eigen::Index count() const { return probes_->rows(); }

  Vector quadratic_terms(const Matrix& x) const {
    if (dense()) return phi_ * vech(x);
    const Eigen::Index copies = probes_->cols() / side_;
    Vector out(count());
    for (Eigen::Index i = 0; i < count(); ++i) {
      double acc = 0.0;
      for (Eigen::Index c = 0; c < copies; ++c) {
        const Vector seg = probes_->row(i).segment(c * side_, side_).transpose();
        acc += seg.dot(x * seg);
      }
      out(i) = 0.5 * acc;
    }
    return out;
  }

  // d/dX of (1/m) sum_i r_i^2 at the X with quadratic_terms(X) - t = r, as a
  // symmetric matrix in Frobenius geometry: (1/m) sum_i r_i Q_i.
  Matrix objective_gradient(const Vector& r) const {
    const double m = static_cast<double>(count());
    Matrix g(side_, side_);
    if (dense()) {
      const Vector v = phi_.transpose() * r;
      for (Eigen::Index a = 0; a < side_; ++a) {
        g(a, a) = 2.0 * v(vech_index(side_, a, a)) / m;
        for (Eigen::Index b = a + 1; b < side_; ++b) g(a, b) = g(b, a) = v(vech_index(side_, a, b)) / m;
      }
      return g;
    }
    g.setZero();
    for (Eigen::Index i = 0; i < count(); ++i) g.noalias() += r(i) * probe_outer(probes_->row(i).transpose(), side_);
    return g / m;
  }

 private:
  const Matrix* probes_;
  Eigen::Index side_;
  Matrix phi_;
};

// Conjugate gradient on the normal equations A(X) = B, with A the
// (PSD, symmetric) objective Hessian operator and B = A(X_ls).
inline Matrix normal_equations_cg(const ProbeDesign& design, const Vector& target, int max_iter, double rel_tol) {
  const Eigen::Index s = design.side();
  auto apply = [&](const Matrix& x) { return design.objective_gradient(design.quadratic_terms(x)); };
  const Matrix b = design.objective_gradient(target);
  Matrix x = Matrix::Zero(s, s);
  Matrix r = b;
  Matrix d = r;
  double rr = r.squaredNorm();
  const double stop = rel_tol * rel_tol * std::max(b.squaredNorm(), std::numeric_limits<double>::min());
  for (int it = 0; it < max_iter && rr > stop; ++it) {
    const Matrix ad = apply(d);
    const double dad = (d.array() * ad.array()).sum();
    if (!(dad > 0.0)) break;
    const double alpha = rr / dad;
    x += alpha * d;
    r -= alpha * ad;
    const double rr_new = r.squaredNorm();
    d = r + (rr_new / rr) * d;
    rr = rr_new;
  }
  return x;
}

}  // namespace detail

/// f~_i(H) = 1/2 (dw)_i^T H (dw)_i - grad_f(w*)^T (dw)_i - dL_f(w_i).
/// With H of side s < dim(dw), the quadratic term sums over the probe's
/// consecutive length-s blocks.
inline double surrogate_residual(const SymMatrix& h, const PerturbationSet& set, Eigen::Index i) {
  const Eigen::Index p = set.dim();
  const Eigen::Index side = h.dim();
  if (side < 1 || p % side != 0) throw DimensionMismatch("surrogate_residual: Hessian side does not divide probe size");
  if (set.forget_grad.size() != p || set.loss_diffs.size() != set.count()) {
    throw DimensionMismatch("surrogate_residual: probe responses not recorded");
  }
  if (i < 0 || i >= set.count()) throw DimensionMismatch("surrogate_residual: probe index out of range");
  const Vector probe = set.probes.row(i).transpose();
  double quad = 0.0;
  for (Eigen::Index c = 0; c < p / side; ++c) {
    const auto seg = probe.segment(c * side, side);
    quad += seg.dot(h.dense() * seg);
  }
  return 0.5 * quad - set.forget_grad.dot(probe) - set.loss_diffs(i);
}

/// Psi~(H): mean squared surrogate residual over all probes.
inline double surrogate_objective(const SymMatrix& h, const PerturbationSet& set) {
  double acc = 0.0;
  for (Eigen::Index i = 0; i < set.count(); ++i) {
    const double r = surrogate_residual(h, set, i);
    acc += r * r;
  }
  return acc / static_cast<double>(set.count());
}

struct EstimatorOptions {
  /// Side of the unknown curvature block; 0 means the full probe dimension.
  Eigen::Index side = 0;
  /// Spectral floor of the feasible set {X >= floor * I}. 0 is the plain PSD
  /// cone; a known ridge weight lambda * n_retain is a valid tighter floor.
  double psd_floor = 0.0;
  bool refine = true;            // projected gradient after the PSD projection
  int max_refine_iter = 5000;
  double stagnation_tol = 1e-10;  // relative decrease over 10 steps
  int max_cg_iter = 2000;          // matrix-free path only
  Eigen::Index dense_limit = 20'000'000;  // max entries of the dense probe design
};

/// Estimated retain Hessian, its achieved objective, and provenance.
struct HessianEstimate {
  SymMatrix h_hat;                  // side x side, PSD
  Eigen::Index copies = 1;          // number of diagonal blocks in the full Hessian
  double residual = 0.0;            // Psi~(h_hat)
  double unconstrained_residual = 0.0;
  double unconstrained_min_eigenvalue = 0.0;
  Eigen::Index m = 0;
  double eta = 0.0;
  std::uint64_t seed = 0;
  bool rank_deficient = false;
  int refine_iterations = 0;
  std::vector<std::string> warnings;

  Eigen::Index side() const { return h_hat.dim(); }
  SymMatrix full() const { return copies == 1 ? h_hat : SymMatrix::block_diagonal(h_hat, copies); }
};

namespace detail {

// Largest eigenvalue of the objective's Hessian operator (power iteration).
inline double objective_lipschitz(const ProbeDesign& design, int iters = 50) {
  const Eigen::Index s = design.side();
  Matrix x = Matrix::Identity(s, s) / std::sqrt(static_cast<double>(s));
  double lambda = 0.0;
  for (int it = 0; it < iters; ++it) {
    Matrix y = design.objective_gradient(design.quadratic_terms(x));
    const double nrm = y.norm();
    if (nrm == 0.0) return 0.0;
    lambda = nrm;
    x = y / nrm;
  }
  return lambda;
}

}  // namespace detail

/// Minimizes Psi~(X) over PSD X:
///   1. least squares in the s(s+1)/2 free entries of X (minimum-norm
///      solution when the probes do not determine all of them),
///   2. projection onto the PSD cone (or {X >= floor I}),
///   3. projected gradient from there until Psi~ stagnates.
inline HessianEstimate estimate_retain_hessian(const PerturbationSet& set, const EstimatorOptions& opt = {}) {
  const Eigen::Index p = set.dim();
  const Eigen::Index m = set.count();
  if (m < 1) throw EmptyIndexSet("estimate_retain_hessian: no probes");
  if (set.forget_grad.size() != p || set.loss_diffs.size() != m) {
    throw DimensionMismatch("estimate_retain_hessian: probe responses not recorded");
  }
  const Eigen::Index side = opt.side == 0 ? p : opt.side;
  if (p % side != 0) throw DimensionMismatch("estimate_retain_hessian: side does not divide probe dimension");
  const Eigen::Index q = detail::vech_size(side);

  HessianEstimate est;
  est.copies = p / side;
  est.m = m;
  est.eta = set.eta;
  est.seed = set.seed;
  if (m < q) {
    est.rank_deficient = true;
    est.warnings.push_back("RankDeficientProbes: m=" + std::to_string(m) + " < " + std::to_string(q) +
                           " symmetric unknowns; using the minimum-norm least-squares solution");
  }

  const detail::ProbeDesign design(set.probes, side, opt.dense_limit);
  // f~_i(X) = phi_i . vech(X) - target_i
  const Vector target = set.probes * set.forget_grad + set.loss_diffs;
  auto objective = [&](const Matrix& x) { return (design.quadratic_terms(x) - target).squaredNorm() / m; };

  Matrix x_ls;
  if (design.dense()) {
    Eigen::CompleteOrthogonalDecomposition<Matrix> cod(design.phi());
    x_ls = detail::unvech(cod.solve(target), side);
  } else {
    x_ls = detail::normal_equations_cg(design, target, opt.max_cg_iter, 1e-12);
  }
  est.unconstrained_residual = objective(x_ls);
  est.unconstrained_min_eigenvalue = min_eigenvalue(SymMatrix(x_ls));

  if (opt.psd_floor < 0.0) throw UsageError("estimate_retain_hessian: psd_floor must be >= 0");
  Matrix x = project_psd(SymMatrix(x_ls), opt.psd_floor).dense();
  double f = objective(x);

  if (opt.refine && est.unconstrained_min_eigenvalue < opt.psd_floor) {
    const double lip = detail::objective_lipschitz(design);
    if (lip > 0.0) {
      const double step = 1.0 / lip;
      std::vector<double> history{f};
      Matrix best = x;
      double best_f = f;
      for (int it = 0; it < opt.max_refine_iter; ++it) {
        const Matrix g = design.objective_gradient(design.quadratic_terms(x) - target);
        x = project_psd(SymMatrix(Matrix(x - step * g)), opt.psd_floor).dense();
        f = objective(x);
        ++est.refine_iterations;
        if (f < best_f) {
          best_f = f;
          best = x;
        }
        history.push_back(f);
        if (history.size() > 10) {
          const double old = history[history.size() - 11];
          if (old - f <= opt.stagnation_tol * std::max(old, std::numeric_limits<double>::min())) break;
        }
      }
      x = best;
      f = best_f;
    }
  }
  est.h_hat = SymMatrix(x);
  est.residual = f;
  return est;
}

/// Convenience: probes around the model, responses from the forget loss.
template <LinearDesign Design>
HessianEstimate estimate_retain_hessian(const LinearModel& model, const SubsetLoss<Design>& forget,
                                        PerturbationSet& probes, const EstimatorOptions& opt = {},
                                        double forget_scale = 1.0) {
  record_forget_responses(probes, forget, model.w, forget_scale);
  return estimate_retain_hessian(probes, opt);
}

/// Upper bound on |H_hat - H_r|_F for approximation error epsilon.
inline double hessian_error_bound(double epsilon, Eigen::Index d) {
  if (epsilon < 0.0) throw UsageError("hessian_error_bound: epsilon must be >= 0");
  if (d < 1) throw DimensionMismatch("hessian_error_bound: d must be >= 1");
  const double dd = static_cast<double>(d);
  return 2.0 * epsilon * std::sqrt(dd) / (2.0 + dd);
}

/// max_i |a_i - b_i|: the realized approximation error between two sets of
/// loss differences.
inline double max_abs_difference(const Vector& a, const Vector& b) {
  if (a.size() != b.size()) throw DimensionMismatch("max_abs_difference: size mismatch");
  return a.size() == 0 ? 0.0 : (a - b).cwiseAbs().maxCoeff();
}

struct QuarticCheck {
  double monte_carlo = 0.0;
  double closed_form = 0.0;
  double std_error = 0.0;
};

/// E[(1/2 dw^T M dw)^2] for dw ~ N(0, I): Monte-Carlo and 1/2 tr(M^2) + 1/4 tr(M)^2.
inline QuarticCheck verify_quartic_identity(const SymMatrix& mat, std::int64_t samples, std::uint64_t seed) {
  if (samples < 2) throw UsageError("verify_quartic_identity: need at least 2 samples");
  const Matrix& a = mat.dense();
  const Eigen::Index d = a.rows();
  QuarticCheck out;
  out.closed_form = 0.5 * (a * a).trace() + 0.25 * a.trace() * a.trace();

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Vector dw(d);
  double mean = 0.0;
  double m2 = 0.0;  // Welford
  for (std::int64_t s = 0; s < samples; ++s) {
    for (Eigen::Index j = 0; j < d; ++j) dw(j) = normal(rng);
    const double half = 0.5 * dw.dot(a * dw);
    const double v = half * half;
    const double delta = v - mean;
    mean += delta / static_cast<double>(s + 1);
    m2 += delta * (v - mean);
  }
  out.monte_carlo = mean;
  out.std_error = std::sqrt(m2 / static_cast<double>(samples - 1) / static_cast<double>(samples));
  return out;
}

/// Minimizes 1/2 tr(M^2 + 2 eps M) + 1/4 tr(M)^2 over symmetric d x d M by
/// gradient descent from M = 0. The minimizer is -(2 eps / (2 + d)) I.
inline SymMatrix verify_optimal_M(double epsilon, Eigen::Index d, int max_iter = 100000) {
  if (epsilon < 0.0) throw UsageError("verify_optimal_M: epsilon must be >= 0");
  if (d < 1) throw DimensionMismatch("verify_optimal_M: d must be >= 1");
  // grad = M + eps I + 1/2 tr(M) I; the Hessian operator has spectrum {1, 1 + d/2}.
  const double step = 1.0 / (1.0 + 0.5 * static_cast<double>(d));
  Matrix mat = Matrix::Zero(d, d);
  for (int it = 0; it < max_iter; ++it) {
    Matrix grad = mat;
    grad.diagonal().array() += epsilon + 0.5 * mat.trace();
    if (grad.norm() <= 1e-14 * std::max(1.0, epsilon)) {
      return SymMatrix(std::move(mat));
    }
    mat -= step * grad;
  }
  throw NotConverged("verify_optimal_M: gradient descent did not converge");
}

/// key=value estimation report.
inline std::string estimation_report(const HessianEstimate& est, std::optional<double> epsilon = std::nullopt,
                                     std::optional<double> actual_error = std::nullopt) {
  std::ostringstream os;
  os.precision(17);
  os << "m=" << est.m << "\n"
     << "eta=" << est.eta << "\n"
     << "seed=" << est.seed << "\n"
     << "side=" << est.side() << "\n"
     << "copies=" << est.copies << "\n"
     << "residual=" << est.residual << "\n"
     << "unconstrained_residual=" << est.unconstrained_residual << "\n"
     << "unconstrained_min_eigenvalue=" << est.unconstrained_min_eigenvalue << "\n"
     << "refine_iterations=" << est.refine_iterations << "\n"
     << "rank_deficient=" << (est.rank_deficient ? 1 : 0) << "\n";
  if (epsilon) {
    os << "epsilon=" << *epsilon << "\n"
       << "hessian_error_bound=" << hessian_error_bound(*epsilon, est.side()) << "\n";
  }
  if (actual_error) os << "actual_frobenius_error=" << *actual_error << "\n";
  return os.str();
}

}  // namespace sfmu
