#include <gtest/gtest.h>

#include "test_util.hpp"

namespace sfmu {
namespace {

LinearModel scalar_model(double w) {
  LinearModel m;
  m.w = Vector::Constant(1, w);
  return m;
}

TEST(UnlearnTest, ScalarWorkedInstance) {
  const testing::ScalarRidgeInstance inst;
  const FeatureDesign design(inst.ds, inst.targets);
  const LinearModel trained = train(SubsetLoss<FeatureDesign>(design, {0, 1}, 1.0, LossKind::quadratic));
  const SubsetLoss<FeatureDesign> retain(design, {0}, 1.0, LossKind::quadratic);
  const SubsetLoss<FeatureDesign> forget(design, {1}, 1.0, LossKind::quadratic);
  const SymMatrix h_r = retain.hessian(trained.w);
  EXPECT_NEAR(h_r(0, 0), 2.0, 1e-15);
  const LinearModel out = unlearn(trained, h_r, forget.gradient(trained.w), {});
  EXPECT_NEAR(out.w(0), 0.5, 1e-14);
  EXPECT_EQ(out.tag, "unlearned(+)");
}

TEST(UnlearnTest, ZeroGradientIsIdentity) {
  std::mt19937_64 rng(1);
  LinearModel m;
  m.w = testing::random_vector(5, rng);
  SymMatrix h = testing::random_psd(5, rng).shifted(1.0);
  EXPECT_EQ(unlearn(m, h, Vector::Zero(5), {}).w, m.w);
}

TEST(UnlearnTest, NoiseDeterministicAndSeparable) {
  std::mt19937_64 rng(2);
  LinearModel m;
  m.w = testing::random_vector(4, rng);
  const SymMatrix h = testing::random_psd(4, rng).shifted(1.0);
  const Vector g = testing::random_vector(4, rng);
  UnlearnConfig cfg;
  const Vector clean = unlearn(m, h, g, cfg).w;
  cfg.sigma = 0.3;
  cfg.noise_seed = 9;
  const Vector a = unlearn(m, h, g, cfg).w;
  EXPECT_EQ(a, unlearn(m, h, g, cfg).w);
  EXPECT_NE(a, clean);
  cfg.sigma = 0.0;
  EXPECT_EQ(unlearn(m, h, g, cfg).w, clean);
}

TEST(UnlearnTest, NoiseVarianceScaling) {
  LinearModel m;
  m.w = Vector::Zero(2);
  const SymMatrix h = SymMatrix::identity(2);
  const Vector g = Vector::Zero(2);
  const double sigma = 0.7;
  for (NoiseForm form : {NoiseForm::variance, NoiseForm::stddev}) {
    UnlearnConfig cfg;
    cfg.sigma = sigma;
    cfg.noise_form = form;
    const int reps = 20000;
    double sum = 0.0;
    double sq = 0.0;
    for (int s = 0; s < reps; ++s) {
      cfg.noise_seed = static_cast<std::uint64_t>(s);
      const double v = unlearn(m, h, g, cfg).w(0);
      sum += v;
      sq += v * v;
    }
    const double mean = sum / reps;
    const double var = sq / reps - mean * mean;
    const double expected = form == NoiseForm::variance ? std::pow(sigma, 4) : sigma * sigma;
    EXPECT_NEAR(var, expected, 0.05 * expected);
  }
}

TEST(UnlearnTest, DescendsRetainLoss) {
  SyntheticSpec spec;
  spec.n = 150;
  spec.d = 5;
  spec.k = 3;
  const FeatureDataset ds = make_synthetic_classification(spec, 3);
  const FeatureDesign design(ds);
  const SplitSpec split = make_split(ds, 0.15, 3);
  for (LossKind kind : {LossKind::quadratic, LossKind::logistic}) {
    const double lambda = 0.01;
    const LinearModel trained = train(SubsetLoss<FeatureDesign>(design, split.train_idx, lambda, kind));
    const SubsetLoss<FeatureDesign> retain(design, split.retain_idx, lambda, kind);
    const SubsetLoss<FeatureDesign> forget(design, split.forget_idx, lambda, kind);
    const LinearModel out = unlearn(trained, retain.hessian(trained.w), forget.gradient(trained.w), {});
    EXPECT_LE(retain.gradient(trained.w).dot(out.w - trained.w), 0.0);
    EXPECT_LT(retain.value(out.w), retain.value(trained.w));
  }
}

TEST(UnlearnTest, TauAndErrors) {
  const LinearModel m = scalar_model(1.0);
  const SymMatrix zero = SymMatrix::zero(1);
  EXPECT_THROW(unlearn(m, zero, Vector::Ones(1), {}), NotPositiveDefinite);
  UnlearnConfig cfg;
  cfg.tau = 0.5;
  cfg.hessian_source = HessianSource::estimated;
  const LinearModel out = unlearn(m, zero, Vector::Ones(1), cfg);
  EXPECT_NEAR(out.w(0), 3.0, 1e-15);
  EXPECT_EQ(out.tag, "unlearned(-)");
  EXPECT_THROW(unlearn(m, SymMatrix::identity(2), Vector::Ones(1), {}), DimensionMismatch);
  cfg.sigma = -1.0;
  EXPECT_THROW(unlearn(m, zero, Vector::Ones(1), cfg), UsageError);
  EXPECT_DOUBLE_EQ(suggested_tau(SymMatrix::identity(4) * 3.0), 3e-8);
}

TEST(UnlearnTest, Parsers) {
  EXPECT_EQ(parse_hessian_source("estimated"), HessianSource::estimated);
  EXPECT_EQ(parse_noise_form("stddev"), NoiseForm::stddev);
  EXPECT_THROW(parse_hessian_source("approx"), UsageError);
  EXPECT_THROW(parse_noise_form("sigma"), UsageError);
}

TEST(PipelineTest, QuadraticExactBranchMatchesRetrain) {
  SyntheticSpec spec;
  spec.n = 400;
  spec.d = 10;
  spec.k = 3;
  const FeatureDataset ds = make_synthetic_classification(spec, 8);
  const FeatureDesign design(ds);
  const SplitSpec split = make_split(ds, 0.1, 8, 0.2);
  PipelineConfig cfg;
  cfg.lambda = 0.05;
  cfg.run_estimated = false;
  const PipelineResult r = run_pipeline(design, split, cfg);
  EXPECT_LT(testing::rel_err(r.unlearned_exact->w, r.retrained.w), 1e-8);
  ASSERT_EQ(r.reports.size(), 3u);
  EXPECT_EQ(r.reports[2].method, "Unlearned(+)");
}

TEST(PipelineTest, OracleConsistentEstimateMatchesExactBranch) {
  SyntheticSpec spec;
  spec.n = 300;
  spec.d = 6;
  spec.k = 2;
  const FeatureDataset ds = make_synthetic_classification(spec, 10);
  const FeatureDesign design(ds);
  const SplitSpec split = make_split(ds, 0.1, 10);
  const double lambda = 0.02;
  const LinearModel trained = train(SubsetLoss<FeatureDesign>(design, split.train_idx, lambda, LossKind::quadratic));
  const SubsetLoss<FeatureDesign> retain(design, split.retain_idx, lambda, LossKind::quadratic);
  const SubsetLoss<FeatureDesign> forget(design, split.forget_idx, lambda, LossKind::quadratic);
  PerturbationSet set = sample_probes(design.num_params(), 200, 1.0, 1);
  set.forget_grad = forget.gradient(trained.w);
  set.loss_diffs = loss_differences(retain, trained.w, set.probes);
  EstimatorOptions opt;
  opt.side = 6;
  const HessianEstimate est = estimate_retain_hessian(set, opt);
  const LinearModel exact = unlearn(trained, retain.hessian(trained.w), set.forget_grad, {});
  const LinearModel approx = unlearn(trained, est.full(), set.forget_grad, {});
  EXPECT_LT(testing::rel_err(approx.w, exact.w), 1e-5);
}

}  // namespace
}  // namespace sfmu
