#pragma once

#include <cmath>
#include <concepts>
#include <limits>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "sfmu/data.hpp"
#include "sfmu/linalg.hpp"

namespace sfmu {

enum class LossKind { quadratic, logistic };

inline std::string to_string(LossKind k) { return k == LossKind::quadratic ? "quadratic" : "logistic"; }

inline LossKind parse_loss_kind(const std::string& s) {
  if (s == "quadratic") return LossKind::quadratic;
  if (s == "logistic") return LossKind::logistic;
  throw UsageError("unknown loss kind \"" + s + "\" (expected quadratic|logistic)");
}

/// Scalar-loss constants used in bound reports.
///   gamma: Lipschitz constant of the second derivative (0 for quadratic).
///   grad_bound: per-sample gradient norm bound C, NaN where no bound exists.
struct ConvexLoss {
  LossKind kind = LossKind::quadratic;
  double gamma = 0.0;
  double grad_bound = std::numeric_limits<double>::quiet_NaN();

  static ConvexLoss make(LossKind kind) {
    if (kind == LossKind::quadratic) return {kind, 0.0, std::numeric_limits<double>::quiet_NaN()};
    // Softmax cross-entropy with |x| <= 1: |(softmax - onehot) (x) x| <= sqrt(2).
    // gamma = 1 is a conservative setting, not a tight constant.
    return {kind, 1.0, std::numbers::sqrt2};
  }
};

/// A linear prediction map: sample i produces k scores s_i(w) = J_i w with
/// J_i in R^{k x p}, a regression target t_i in R^k (quadratic loss) and a
/// class label (logistic loss, accuracy).
template <typename D>
concept LinearDesign = requires(const D& d, Index i, const Vector& w, const Vector& v, Vector& g,
                                const Matrix& m, Matrix& h) {
  { d.num_samples() } -> std::convertible_to<Index>;
  { d.num_outputs() } -> std::convertible_to<Index>;
  { d.num_params() } -> std::convertible_to<Eigen::Index>;
  { d.label(i) } -> std::convertible_to<Index>;
  { d.target(i) } -> std::convertible_to<Vector>;
  { d.scores(i, w) } -> std::convertible_to<Vector>;
  d.add_transposed(i, v, g);      // g += J_i^T v
  d.add_sandwich(i, m, h);        // h += J_i^T m J_i
};

/// Plain linear classifier over features: p = d*k, class-major flattening
/// (parameters of class c occupy w[c*d, (c+1)*d)). J_i = I_k (x) x_i^T.
/// Targets default to onehot(y_i); explicit real-valued targets (n x k) can
/// replace them for regression-style problems.
class FeatureDesign {
 public:
  explicit FeatureDesign(const FeatureDataset& ds) : ds_(&ds) {}
  FeatureDesign(const FeatureDataset& ds, Matrix targets) : ds_(&ds), targets_(std::move(targets)) {
    if (targets_.rows() != ds.n || targets_.cols() != ds.k) {
      throw DimensionMismatch("FeatureDesign: targets must be n x k");
    }
  }

  Index num_samples() const { return ds_->n; }
  Index num_outputs() const { return ds_->k; }
  Index feature_dim() const { return ds_->d; }
  Eigen::Index num_params() const { return static_cast<Eigen::Index>(ds_->d) * ds_->k; }
  Index label(Index i) const { return ds_->labels[i]; }
  const FeatureDataset& dataset() const { return *ds_; }

  Vector target(Index i) const {
    if (targets_.size() != 0) return targets_.row(i).transpose();
    Vector t = Vector::Zero(ds_->k);
    t(ds_->labels[i]) = 1.0;
    return t;
  }

  Vector scores(Index i, const Vector& w) const {
    Eigen::Map<const Matrix> W(w.data(), ds_->d, ds_->k);
    return W.transpose() * ds_->features.row(i).transpose();
  }

  void add_transposed(Index i, const Vector& v, Vector& g) const {
    Eigen::Map<Matrix> G(g.data(), ds_->d, ds_->k);
    G.noalias() += ds_->features.row(i).transpose() * v.transpose();
  }

  void add_sandwich(Index i, const Matrix& m, Matrix& h) const {
    const Index d = ds_->d;
    const Matrix xx = ds_->features.row(i).transpose() * ds_->features.row(i);
    for (Index a = 0; a < ds_->k; ++a)
      for (Index b = 0; b < ds_->k; ++b)
        if (m(a, b) != 0.0) h.block(a * d, b * d, d, d).noalias() += m(a, b) * xx;
  }

  /// sum_{i in S} x_i x_i^T (the per-class block of the quadratic Hessian).
  Matrix gram(std::span<const Index> subset) const {
    Matrix x(subset.size(), ds_->d);
    for (std::size_t r = 0; r < subset.size(); ++r) x.row(static_cast<Eigen::Index>(r)) = ds_->features.row(subset[r]);
    return x.transpose() * x;
  }

 private:
  const FeatureDataset* ds_;
  Matrix targets_;
};

/// Sum over a subset S of per-sample losses plus the subset's share of the
/// ridge term: L_S(w) = sum_{i in S} l(y_i, s_i(w)) + (lambda |S| / 2) |w|^2.
/// Quadratic: l = 1/2 |t_i - s|^2. Logistic: softmax cross-entropy on y_i.
template <LinearDesign Design>
class SubsetLoss {
 public:
  SubsetLoss(const Design& design, IndexList subset, double lambda, LossKind kind)
      : design_(&design), subset_(std::move(subset)), lambda_(lambda), kind_(kind) {
    if (lambda < 0.0) throw UsageError("lambda must be >= 0");
    for (Index i : subset_)
      if (i >= design.num_samples()) throw DimensionMismatch("SubsetLoss: index out of range");
  }

  const Design& design() const { return *design_; }
  const IndexList& subset() const { return subset_; }
  std::size_t size() const { return subset_.size(); }
  double lambda() const { return lambda_; }
  LossKind kind() const { return kind_; }
  Eigen::Index num_params() const { return design_->num_params(); }
  double reg_weight() const { return lambda_ * static_cast<double>(subset_.size()); }

  /// Same samples and kind, different ridge weight or subset.
  SubsetLoss with_subset(IndexList subset) const { return SubsetLoss(*design_, std::move(subset), lambda_, kind_); }

  double sample_loss(Index i, const Vector& w) const {
    check(w);
    return sample_loss_unchecked(i, w);
  }

  double value(const Vector& w) const {
    check(w);
    double data = 0.0;
    for (Index i : subset_) data += sample_loss_unchecked(i, w);
    return data + 0.5 * reg_weight() * w.squaredNorm();
  }

  Vector gradient(const Vector& w) const {
    check(w);
    Vector g = Vector::Zero(num_params());
    for (Index i : subset_) design_->add_transposed(i, output_residual(i, w), g);
    g += reg_weight() * w;
    return g;
  }

  SymMatrix hessian(const Vector& w) const {
    check(w);
    const Eigen::Index p = num_params();
    Matrix h = Matrix::Zero(p, p);
    if constexpr (std::same_as<Design, FeatureDesign>) {
      if (kind_ == LossKind::quadratic) {
        const Matrix g = design_->gram(subset_);
        const Index d = design_->feature_dim();
        for (Index c = 0; c < design_->num_outputs(); ++c) h.block(c * d, c * d, d, d) = g;
        h.diagonal().array() += reg_weight();
        return SymMatrix(std::move(h));
      }
    }
    for (Index i : subset_) design_->add_sandwich(i, output_curvature(i, w), h);
    h.diagonal().array() += reg_weight();
    return SymMatrix(std::move(h));
  }

  /// The d x d per-class block of the quadratic feature Hessian (incl. ridge).
  SymMatrix hessian_block() const
    requires std::same_as<Design, FeatureDesign>
  {
    if (kind_ != LossKind::quadratic) throw UsageError("hessian_block: only the quadratic loss is block-diagonal");
    Matrix g = design_->gram(subset_);
    g.diagonal().array() += reg_weight();
    return SymMatrix(std::move(g));
  }

 private:
  void check(const Vector& w) const {
    if (w.size() != num_params()) {
      throw DimensionMismatch("parameter vector has size " + std::to_string(w.size()) + ", expected " +
                              std::to_string(num_params()));
    }
  }

  double sample_loss_unchecked(Index i, const Vector& w) const {
    const Vector s = design_->scores(i, w);
    if (kind_ == LossKind::quadratic) return 0.5 * (s - design_->target(i)).squaredNorm();
    const Index y = design_->label(i);
    const double mx = s.maxCoeff();
    return mx + std::log((s.array() - mx).exp().sum()) - s(y);
  }

  // d l / d s
  Vector output_residual(Index i, const Vector& w) const {
    const Vector s = design_->scores(i, w);
    if (kind_ == LossKind::quadratic) return s - design_->target(i);
    Vector r = softmax(s);
    r(design_->label(i)) -= 1.0;
    return r;
  }

  // d^2 l / d s^2
  Matrix output_curvature(Index i, const Vector& w) const {
    const Index k = design_->num_outputs();
    if (kind_ == LossKind::quadratic) return Matrix::Identity(k, k);
    const Vector prob = softmax(design_->scores(i, w));
    Matrix m = -prob * prob.transpose();
    m.diagonal() += prob;
    return m;
  }

  static Vector softmax(const Vector& s) {
    Vector e = (s.array() - s.maxCoeff()).exp();
    return e / e.sum();
  }

  const Design* design_;
  IndexList subset_;
  double lambda_;
  LossKind kind_;
};

}  // namespace sfmu
