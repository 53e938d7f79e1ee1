#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <unordered_map>

#include "sfmu/losses.hpp"
#include "sfmu/trainer.hpp"

namespace sfmu {

enum class BaselineKind { neggrad, random_labels };

inline std::string to_string(BaselineKind k) { return k == BaselineKind::neggrad ? "NegGrad" : "RandomLabels"; }

struct BaselineConfig {
  BaselineKind kind = BaselineKind::neggrad;
  int steps = 50;
  double step_size = 1e-3;
  std::uint64_t seed = 0;

  void validate() const {
    if (steps < 1) throw UsageError("baseline: steps must be >= 1");
    if (step_size < 0.0) throw UsageError("baseline: step_size must be >= 0");
  }
};

/// Wraps a design, replacing the labels (and one-hot targets) of some samples.
template <LinearDesign Base>
class RelabeledDesign {
 public:
  RelabeledDesign(const Base& base, std::unordered_map<Index, Index> labels) : base_(&base), labels_(std::move(labels)) {}

  Index num_samples() const { return base_->num_samples(); }
  Index num_outputs() const { return base_->num_outputs(); }
  Eigen::Index num_params() const { return base_->num_params(); }
  Index label(Index i) const {
    const auto it = labels_.find(i);
    return it == labels_.end() ? base_->label(i) : it->second;
  }
  Vector target(Index i) const {
    const auto it = labels_.find(i);
    if (it == labels_.end()) return base_->target(i);
    Vector t = Vector::Zero(num_outputs());
    t(it->second) = 1.0;
    return t;
  }
  Vector scores(Index i, const Vector& w) const { return base_->scores(i, w); }
  void add_transposed(Index i, const Vector& v, Vector& g) const { base_->add_transposed(i, v, g); }
  void add_sandwich(Index i, const Matrix& m, Matrix& h) const { base_->add_sandwich(i, m, h); }

 private:
  const Base* base_;
  std::unordered_map<Index, Index> labels_;
};

/// Each label redrawn uniformly from the k-1 classes other than the true one.
template <LinearDesign Design>
std::unordered_map<Index, Index> random_wrong_labels(const Design& design, const IndexList& idx, std::uint64_t seed) {
  const Index k = design.num_outputs();
  if (k < 2) throw UsageError("random_labels: need at least 2 classes");
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<Index> pick(0, k - 2);
  std::unordered_map<Index, Index> out;
  for (Index i : idx) {
    const Index y = design.label(i);
    const Index u = pick(rng);
    out[i] = u < y ? u : u + 1;
  }
  return out;
}

namespace detail {

template <LinearDesign Design>
Vector gradient_steps(const SubsetLoss<Design>& loss, Vector w, const BaselineConfig& cfg, double direction) {
  const double initial = loss.value(w);
  const double limit = 1e6 * std::max(std::abs(initial), 1e-12);
  for (int s = 0; s < cfg.steps; ++s) {
    w += direction * cfg.step_size * loss.gradient(w);
    const double v = loss.value(w);
    if (!std::isfinite(v) || v > limit) {
      throw DivergenceDetected(to_string(cfg.kind) + ": forget loss " + std::to_string(v) + " exceeds 1e6x initial " +
                               std::to_string(initial) + " at step " + std::to_string(s + 1));
    }
  }
  return w;
}

}  // namespace detail

/// Source-free comparison baselines using only the model and forget set.
///   neggrad:       gradient ascent on the forget loss.
///   random_labels: gradient descent on the forget loss with every label
///                  replaced by a random wrong class.
template <LinearDesign Design>
LinearModel run_baseline(const LinearModel& model, const SubsetLoss<Design>& forget, const BaselineConfig& cfg) {
  cfg.validate();
  if (forget.size() == 0) throw EmptyIndexSet("run_baseline: forget set is empty");
  LinearModel out = model;
  out.tag = to_string(cfg.kind);
  out.iterations = cfg.steps;
  if (cfg.kind == BaselineKind::neggrad) {
    out.w = detail::gradient_steps(forget, model.w, cfg, +1.0);
    return out;
  }
  const RelabeledDesign<Design> relabeled(forget.design(), random_wrong_labels(forget.design(), forget.subset(), cfg.seed));
  const SubsetLoss<RelabeledDesign<Design>> loss(relabeled, forget.subset(), forget.lambda(), forget.kind());
  out.w = detail::gradient_steps(loss, model.w, cfg, -1.0);
  return out;
}

}  // namespace sfmu
