#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "sfmu/baselines.hpp"
#include "sfmu/estimator.hpp"
#include "sfmu/evaluation.hpp"
#include "sfmu/mixed_linear.hpp"
#include "sfmu/trainer.hpp"
#include "sfmu/unlearner.hpp"

namespace sfmu {

// How forget-set loss differences are rescaled before they stand in for the
// retain-set ones: by n_retain / n_forget (matching the retain loss's
// magnitude) or not at all.
enum class ForgetScale { retain_ratio, none };

inline ForgetScale parse_forget_scale(const std::string& s) {
  if (s == "retain_ratio") return ForgetScale::retain_ratio;
  if (s == "none") return ForgetScale::none;
  throw UsageError("unknown forget_scale \"" + s + "\" (expected retain_ratio|none)");
}

inline std::string to_string(ForgetScale s) { return s == ForgetScale::retain_ratio ? "retain_ratio" : "none"; }

struct EstimatorSettings {
  Eigen::Index m = 500;
  double eta = 0.0;  // <= 0: 1 for quadratic, 0.01 |w*| for logistic
  std::uint64_t seed = 0;
  bool block = true;  // quadratic feature models: estimate the shared d x d block
  ForgetScale forget_scale = ForgetScale::retain_ratio;
  bool ridge_floor = true;  // constrain H_hat >= lambda * n_retain * I
  EstimatorOptions solver;
};

struct PipelineConfig {
  LossKind loss = LossKind::quadratic;
  double lambda = 1e-3;
  TrainOptions train;
  EstimatorSettings estimator;
  UnlearnConfig unlearn;         // sigma, tau, noise; hessian_source is set per branch
  bool auto_tau = true;          // singular H_hat: tau = max(tau, suggested_tau(H_hat))
  std::uint64_t mia_seed = 0;
  MiaOptions mia;
  bool run_exact = true;
  bool run_estimated = true;
  bool run_baselines = false;
  BaselineConfig baseline;
  std::string setting;           // free-form label copied into report rows
};

struct PipelineResult {
  LinearModel trained;
  LinearModel retrained;
  std::optional<LinearModel> unlearned_exact;
  std::optional<LinearModel> unlearned_estimated;
  std::vector<LinearModel> baselines;
  std::optional<HessianEstimate> estimate;
  double epsilon = 0.0;               // max_i |dL_r - dL_f~| over the probes
  double hessian_error = 0.0;         // |H_hat - H_r|_F (full p x p)
  double hessian_rel_error = 0.0;
  double tau_applied = 0.0;           // ridge floor used for the estimated branch
  std::optional<ResidualBoundReport> residual_bound;  // for the estimated branch
  std::vector<EvalReport> reports;
};

inline double resolved_eta(const EstimatorSettings& s, LossKind kind, const Vector& w_star) {
  if (s.eta > 0.0) return s.eta;
  if (kind == LossKind::quadratic) return 1.0;
  const double nrm = w_star.norm();
  return 0.01 * (nrm > 0.0 ? nrm : 1.0);
}

inline double forget_scale_factor(ForgetScale s, const SplitSpec& split) {
  if (s == ForgetScale::none) return 1.0;
  return static_cast<double>(split.retain_idx.size()) / static_cast<double>(split.forget_idx.size());
}

/// Estimate the retain Hessian from the trained model and forget set only.
/// Returns the estimate; fills `set` with the probes and cached responses.
template <LinearDesign Design>
HessianEstimate estimate_from_forget(const Design& design, const SplitSpec& split, const LinearModel& trained,
                                     const PipelineConfig& cfg, PerturbationSet& set) {
  const SubsetLoss<Design> forget(design, split.forget_idx, cfg.lambda, cfg.loss);
  const double eta = resolved_eta(cfg.estimator, cfg.loss, trained.w);
  set = sample_probes(design.num_params(), cfg.estimator.m, eta, cfg.estimator.seed);
  EstimatorOptions opt = cfg.estimator.solver;
  if constexpr (std::same_as<Design, FeatureDesign>) {
    if (cfg.estimator.block && cfg.loss == LossKind::quadratic) opt.side = design.feature_dim();
  }
  if (cfg.estimator.ridge_floor) opt.psd_floor = cfg.lambda * static_cast<double>(split.retain_idx.size());
  return estimate_retain_hessian(trained, forget, set, opt, forget_scale_factor(cfg.estimator.forget_scale, split));
}

/// train -> retrain reference -> (exact | estimated) Hessian -> Newton removal
/// -> evaluation, with optional baselines.
template <LinearDesign Design>
PipelineResult run_pipeline(const Design& design, const SplitSpec& split, const PipelineConfig& cfg) {
  if (split.forget_idx.empty()) throw EmptyIndexSet("pipeline: forget set is empty");
  PipelineResult out;
  const SubsetLoss<Design> full(design, split.train_idx, cfg.lambda, cfg.loss);
  const SubsetLoss<Design> retain(design, split.retain_idx, cfg.lambda, cfg.loss);
  const SubsetLoss<Design> forget(design, split.forget_idx, cfg.lambda, cfg.loss);

  out.trained = train(full, cfg.train);
  out.retrained = retrain_oracle(design, split, cfg.lambda, cfg.loss, cfg.train);
  const Vector forget_grad = forget.gradient(out.trained.w);
  const SymMatrix h_retain = retain.hessian(out.trained.w);

  auto row = [&](const std::string& method, const Vector& w) {
    EvalReport r = evaluate(design, cfg.loss, cfg.lambda, split, w, std::optional<Vector>(out.retrained.w),
                            cfg.mia_seed, cfg.mia);
    r.method = method;
    r.setting = cfg.setting;
    return r;
  };

  out.reports.push_back(row("Original", out.trained.w));
  out.reports.push_back(row("Retrained", out.retrained.w));

  if (cfg.run_exact) {
    UnlearnConfig u = cfg.unlearn;
    u.hessian_source = HessianSource::exact;
    out.unlearned_exact = unlearn(out.trained, h_retain, forget_grad, u);
    out.reports.push_back(row("Unlearned(+)", out.unlearned_exact->w));
  }

  if (cfg.run_estimated) {
    PerturbationSet set;
    out.estimate = estimate_from_forget(design, split, out.trained, cfg, set);
    const SymMatrix h_hat = out.estimate->full();
    UnlearnConfig u = cfg.unlearn;
    u.hessian_source = HessianSource::estimated;
    if (cfg.auto_tau && min_eigenvalue(h_hat) <= 0.0) u.tau = std::max(u.tau, suggested_tau(h_hat));
    out.tau_applied = u.tau;
    out.unlearned_estimated = unlearn(out.trained, h_hat, forget_grad, u);

    // Diagnostics that need the retain data (evaluation only).
    const Vector dl_r = loss_differences(retain, out.trained.w, set.probes);
    out.epsilon = max_abs_difference(dl_r, set.loss_diffs);
    out.hessian_error = frobenius_norm(h_hat - h_retain);
    out.hessian_rel_error = out.hessian_error / frobenius_norm(h_retain);

    const ConvexLoss constants = ConvexLoss::make(cfg.loss);
    ResidualBoundInputs in;
    in.gamma = constants.gamma;
    in.grad_bound = constants.grad_bound;
    in.lambda = cfg.lambda;
    in.n = split.train_idx.size();
    in.n_forget = split.forget_idx.size();
    in.epsilon = out.epsilon;
    in.d = out.estimate->side();
    in.slack = cfg.train.resolved_tol(cfg.loss) * std::max(1.0, retain.gradient(Vector::Zero(design.num_params())).norm());
    out.residual_bound = residual_bound_check(out.unlearned_estimated->w, retain, in);

    EvalReport r = row("Unlearned(-)", out.unlearned_estimated->w);
    r.residual_bound = out.residual_bound->bound_closed_form;
    out.reports.push_back(r);
  }

  if (cfg.run_baselines) {
    for (BaselineKind kind : {BaselineKind::neggrad, BaselineKind::random_labels}) {
      BaselineConfig b = cfg.baseline;
      b.kind = kind;
      out.baselines.push_back(run_baseline(out.trained, forget, b));
      out.reports.push_back(row(to_string(kind), out.baselines.back().w));
    }
  }
  return out;
}

/// Full pipeline over a linearized network: quadratic loss on Jacobian
/// features with residual targets.
inline PipelineResult run_mixed_linear(const LinearizedProblem& prob, const SplitSpec& split, PipelineConfig cfg) {
  cfg.loss = LossKind::quadratic;
  const JacobianDesign design(prob);
  return run_pipeline(design, split, cfg);
}

}  // namespace sfmu
