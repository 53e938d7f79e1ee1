#pragma once

#include <cstdint>
#include <random>
#include <string>

#include "sfmu/linalg.hpp"
#include "sfmu/trainer.hpp"

namespace sfmu {

enum class HessianSource { exact, estimated };

// How the noise scale enters: sigma^2 * xi as in the removal update, or the
// conventional sigma * xi.
enum class NoiseForm { variance, stddev };

inline std::string to_string(HessianSource s) { return s == HessianSource::exact ? "exact" : "estimated"; }

inline HessianSource parse_hessian_source(const std::string& s) {
  if (s == "exact") return HessianSource::exact;
  if (s == "estimated") return HessianSource::estimated;
  throw UsageError("unknown hessian_source \"" + s + "\" (expected exact|estimated)");
}

inline NoiseForm parse_noise_form(const std::string& s) {
  if (s == "variance") return NoiseForm::variance;
  if (s == "stddev") return NoiseForm::stddev;
  throw UsageError("unknown noise_form \"" + s + "\" (expected variance|stddev)");
}

struct UnlearnConfig {
  HessianSource hessian_source = HessianSource::exact;
  double sigma = 0.0;
  std::uint64_t noise_seed = 0;
  double tau = 0.0;  // ridge floor added to the Hessian before the solve
  NoiseForm noise_form = NoiseForm::variance;

  void validate() const {
    if (sigma < 0.0) throw UsageError("sigma must be >= 0");
    if (tau < 0.0) throw UsageError("tau must be >= 0");
  }
};

/// tau = 1e-8 * trace(H) / p: restores invertibility of a singular PSD
/// estimate with negligible bias.
inline double suggested_tau(const SymMatrix& h) { return 1e-8 * h.trace() / static_cast<double>(h.dim()); }

/// Newton removal step: w_uf = w* + (H_r + tau I)^{-1} grad_f + noise.
inline LinearModel unlearn(const LinearModel& model, const SymMatrix& h_retain, const Vector& forget_grad,
                           const UnlearnConfig& cfg) {
  cfg.validate();
  const Eigen::Index p = model.w.size();
  if (h_retain.dim() != p || forget_grad.size() != p) {
    throw DimensionMismatch("unlearn: model has " + std::to_string(p) + " parameters, Hessian " +
                            std::to_string(h_retain.dim()) + ", gradient " + std::to_string(forget_grad.size()));
  }
  LinearModel out = model;
  try {
    out.w = model.w + solve_spd(cfg.tau > 0.0 ? h_retain.shifted(cfg.tau) : h_retain, forget_grad);
  } catch (const NotPositiveDefinite&) {
    throw NotPositiveDefinite("unlearn: retain Hessian + tau I is not positive definite (tau=" +
                              std::to_string(cfg.tau) + ")");
  }
  if (cfg.sigma > 0.0) {
    const double amp = cfg.noise_form == NoiseForm::variance ? cfg.sigma * cfg.sigma : cfg.sigma;
    std::mt19937_64 rng(cfg.noise_seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    for (Eigen::Index j = 0; j < p; ++j) out.w(j) += amp * normal(rng);
  }
  out.tag = cfg.hessian_source == HessianSource::exact ? "unlearned(+)" : "unlearned(-)";
  out.iterations = 0;
  return out;
}

}  // namespace sfmu
