#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>

#include "sfmu/data.hpp"
#include "sfmu/losses.hpp"

namespace sfmu {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// A network linearized around w_c*: f_lin(x_i; w) = f(x_i) + J_i w with
/// J_i = grad_w f(x_i) in R^{k x p}. Row i of `jacobians` is J_i flattened
/// row-major (output-major), so it has k*p entries. Residual targets are
/// r_i = y_i - f(x_i) for one-hot y_i.
struct LinearizedProblem {
  Index n = 0;
  Index p = 0;
  Index k = 0;
  RowMatrix jacobians;  // n x (k*p)
  Matrix residuals;     // n x k
  std::vector<Index> labels;

  void validate() const {
    if (jacobians.rows() != n || jacobians.cols() != static_cast<Eigen::Index>(k) * p || residuals.rows() != n ||
        residuals.cols() != k || labels.size() != n) {
      throw DimensionMismatch("LinearizedProblem: inconsistent shapes");
    }
    for (Index y : labels)
      if (y >= k) throw LabelOutOfRange("LinearizedProblem: label " + std::to_string(y) + " >= k");
  }

  auto jacobian(Index i) const {
    return Eigen::Map<const RowMatrix>(jacobians.row(i).data(), k, p);
  }

  /// 1/2 sum_{i in S} |J_i w - r_i|^2 + (lambda |S| / 2) |w|^2, evaluated
  /// straight from the linearized residual form.
  double objective(const IndexList& subset, const Vector& w, double lambda) const {
    double acc = 0.0;
    for (Index i : subset) acc += 0.5 * (jacobian(i) * w - residuals.row(i).transpose()).squaredNorm();
    return acc + 0.5 * lambda * static_cast<double>(subset.size()) * w.squaredNorm();
  }
};

/// LinearDesign over a linearized problem. Scores are the linearized network
/// outputs f(x_i) + J_i w = onehot(y_i) - r_i + J_i w; targets are onehot(y_i),
/// so the quadratic loss is 1/2 |J_i w - r_i|^2.
class JacobianDesign {
 public:
  explicit JacobianDesign(const LinearizedProblem& prob) : prob_(&prob) { prob.validate(); }

  Index num_samples() const { return prob_->n; }
  Index num_outputs() const { return prob_->k; }
  Eigen::Index num_params() const { return prob_->p; }
  Index label(Index i) const { return prob_->labels[i]; }
  const LinearizedProblem& problem() const { return *prob_; }

  Vector target(Index i) const {
    Vector t = Vector::Zero(prob_->k);
    t(prob_->labels[i]) = 1.0;
    return t;
  }

  Vector scores(Index i, const Vector& w) const {
    Vector s = target(i) - prob_->residuals.row(i).transpose();
    s.noalias() += prob_->jacobian(i) * w;
    return s;
  }

  void add_transposed(Index i, const Vector& v, Vector& g) const { g.noalias() += prob_->jacobian(i).transpose() * v; }

  void add_sandwich(Index i, const Matrix& m, Matrix& h) const {
    const auto j = prob_->jacobian(i);
    h.noalias() += j.transpose() * m * j;
  }

 private:
  const LinearizedProblem* prob_;
};

inline std::string encode_residuals(const LinearizedProblem& prob) {
  std::string out(kResidualMagic);
  detail::put_le<std::uint32_t>(out, prob.n);
  detail::put_le<std::uint32_t>(out, 0);  // no feature block
  detail::put_le<std::uint32_t>(out, prob.k);
  for (Index i = 0; i < prob.n; ++i)
    for (Index c = 0; c < prob.k; ++c) detail::put_f32(out, static_cast<float>(prob.residuals(i, c)));
  return out;
}

/// Writes the Jacobian rows as an SFUFEAT1 file (d = k*p) and the residual
/// targets as an SFUJRES1 file.
inline void save_linearized(const std::filesystem::path& features_path, const std::filesystem::path& residuals_path,
                            const LinearizedProblem& prob) {
  prob.validate();
  FeatureDataset ds;
  ds.n = prob.n;
  ds.d = prob.k * prob.p;
  ds.k = prob.k;
  ds.features = prob.jacobians;
  ds.labels = prob.labels;
  save_features(features_path, ds);
  detail::write_file(residuals_path, encode_residuals(prob));
}

/// SFUJRES1: magic, u32 n, u32 d, u32 k, n*d float32 (optional feature block,
/// skipped), n*k float32 residual targets.
inline Matrix decode_residuals(std::string bytes, const std::string& origin, Index& n, Index& k) {
  detail::Reader r(std::move(bytes), origin);
  r.expect_magic(kResidualMagic);
  n = r.u32();
  const Index d = r.u32();
  k = r.u32();
  r.need(static_cast<std::uint64_t>(n) * d * 4 + static_cast<std::uint64_t>(n) * k * 4);
  for (std::uint64_t s = 0; s < static_cast<std::uint64_t>(n) * d; ++s) (void)r.f32();
  Matrix res(n, k);
  for (Index i = 0; i < n; ++i)
    for (Index c = 0; c < k; ++c) res(i, c) = r.f32();
  return res;
}

inline LinearizedProblem load_linearized(const std::filesystem::path& features_path,
                                         const std::filesystem::path& residuals_path) {
  const FeatureDataset ds = load_features(features_path);
  Index n = 0;
  Index k = 0;
  Matrix res = decode_residuals(detail::read_file(residuals_path), residuals_path.string(), n, k);
  if (n != ds.n || k != ds.k) {
    throw DataError("linearized files disagree: features n=" + std::to_string(ds.n) + " k=" + std::to_string(ds.k) +
                    ", residuals n=" + std::to_string(n) + " k=" + std::to_string(k));
  }
  if (ds.k == 0 || ds.d % ds.k != 0) {
    throw DataError(features_path.string() + ": Jacobian width d=" + std::to_string(ds.d) +
                    " is not a multiple of k=" + std::to_string(ds.k));
  }
  LinearizedProblem prob;
  prob.n = ds.n;
  prob.k = ds.k;
  prob.p = ds.d / ds.k;
  prob.jacobians = ds.features;
  prob.residuals = std::move(res);
  prob.labels = ds.labels;
  prob.validate();
  return prob;
}

/// Random linearized head for desk-scale experiments: Gaussian Jacobians,
/// random base outputs, labels from the linearized model at a hidden w.
inline LinearizedProblem make_synthetic_linearized(Index n, Index p, Index k, std::uint64_t seed, double signal = 1.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  LinearizedProblem prob;
  prob.n = n;
  prob.p = p;
  prob.k = k;
  prob.jacobians.resize(n, static_cast<Eigen::Index>(k) * p);
  prob.residuals.resize(n, k);
  prob.labels.resize(n);
  Vector hidden(p);
  for (Index j = 0; j < p; ++j) hidden(j) = signal * normal(rng);
  const double jscale = 1.0 / std::sqrt(static_cast<double>(p));
  for (Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < prob.jacobians.cols(); ++j)
      prob.jacobians(i, j) = static_cast<float>(jscale * normal(rng));  // float32-representable
    Vector base(k);
    for (Index c = 0; c < k; ++c) base(c) = 0.5 * normal(rng);
    const Vector out = base + prob.jacobian(i) * hidden;
    Eigen::Index y = 0;
    out.maxCoeff(&y);
    prob.labels[i] = static_cast<Index>(y);
    for (Index c = 0; c < k; ++c)
      prob.residuals(i, c) = static_cast<float>((c == static_cast<Index>(y) ? 1.0 : 0.0) - base(c));
  }
  return prob;
}

}  // namespace sfmu
