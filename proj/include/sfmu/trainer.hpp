#pragma once

#include <optional>
#include <string>

#include "sfmu/losses.hpp"

namespace sfmu {

struct LinearModel {
  Vector w;
  LossKind kind = LossKind::quadratic;
  double lambda = 0.0;
  // training metadata
  int iterations = 0;
  double grad_norm = 0.0;
  std::string tag = "trained";
};

struct TrainOptions {
  double tol = -1.0;  // < 0 selects the per-loss default
  int max_iter = 100;
  std::optional<Vector> init;

  double resolved_tol(LossKind kind) const {
    if (tol > 0.0) return tol;
    return kind == LossKind::quadratic ? 1e-8 : 1e-6;
  }
};

/// Minimizes the subset loss. Convergence: |grad L(w)| <= tol * max(1, |grad L(0)|).
/// Quadratic losses are solved as one linear system (plus refinement);
/// logistic by Newton steps with backtracking halving until the loss drops.
template <LinearDesign Design>
LinearModel train(const SubsetLoss<Design>& loss, const TrainOptions& opt = {}) {
  const Eigen::Index p = loss.num_params();
  const double tol = opt.resolved_tol(loss.kind());
  Vector w = opt.init.value_or(Vector::Zero(p));
  if (w.size() != p) throw DimensionMismatch("train: init has wrong size");
  const double scale = std::max(1.0, loss.gradient(Vector::Zero(p)).norm());

  LinearModel model;
  model.kind = loss.kind();
  model.lambda = loss.lambda();

  auto newton_direction = [&](const Vector& g) -> Vector {
    try {
      return solve_spd(loss.hessian(w), g);
    } catch (const NotPositiveDefinite& e) {
      throw SingularSystem(std::string("train: Hessian not positive definite (") + e.what() + ")");
    }
  };

  Vector g = loss.gradient(w);
  int it = 0;
  if (loss.kind() == LossKind::quadratic) {
    // Taylor is exact: w* = w - H^{-1} g(w). Refinement passes absorb rounding.
    const SymMatrix h = loss.hessian(w);
    for (; it < std::max(1, std::min(opt.max_iter, 5)) && g.norm() > tol * scale; ++it) {
      try {
        w -= solve_spd(h, g);
      } catch (const NotPositiveDefinite& e) {
        throw SingularSystem(std::string("train: singular normal equations (") + e.what() + ")");
      }
      g = loss.gradient(w);
    }
  } else {
    double f = loss.value(w);
    for (; it < opt.max_iter && g.norm() > tol * scale; ++it) {
      const Vector step = newton_direction(g);
      double t = 1.0;
      Vector trial = w - step;
      double ft = loss.value(trial);
      for (int halvings = 0; !(ft < f) && halvings < 60; ++halvings) {
        t *= 0.5;
        trial = w - t * step;
        ft = loss.value(trial);
      }
      if (!(ft <= f)) break;  // no decrease possible at machine precision
      w = std::move(trial);
      f = ft;
      g = loss.gradient(w);
    }
  }
  model.w = std::move(w);
  model.iterations = it;
  model.grad_norm = g.norm();
  if (model.grad_norm > tol * scale) {
    throw NotConverged("train: gradient norm " + std::to_string(model.grad_norm) + " above tolerance after " +
                       std::to_string(it) + " iterations");
  }
  return model;
}

/// Retrain-from-scratch reference on the retain set.
template <LinearDesign Design>
LinearModel retrain_oracle(const Design& design, const SplitSpec& split, double lambda, LossKind kind,
                           const TrainOptions& opt = {}) {
  if (split.retain_idx.empty()) throw EmptyIndexSet("retrain_oracle: retain set is empty");
  LinearModel m = train(SubsetLoss<Design>(design, split.retain_idx, lambda, kind), opt);
  m.tag = "retrained";
  return m;
}

}  // namespace sfmu
