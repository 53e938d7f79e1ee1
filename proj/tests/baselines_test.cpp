#include <gtest/gtest.h>

#include "test_util.hpp"

namespace sfmu {
namespace {

struct Trained {
  FeatureDataset ds;
  SplitSpec split;
  LinearModel model;
  double lambda = 1e-3;

  explicit Trained(std::uint64_t seed, LossKind kind = LossKind::logistic) {
    SyntheticSpec spec;
    spec.n = 400;
    spec.d = 6;
    spec.k = 4;
    spec.separation = 2.0;
    ds = make_synthetic_classification(spec, seed);
    split = make_split(ds, 0.1, seed, 0.25);
    const FeatureDesign design(ds);
    model = train(SubsetLoss<FeatureDesign>(design, split.train_idx, lambda, kind));
  }
};

TEST(BaselineTest, ConfigValidation) {
  BaselineConfig cfg;
  cfg.steps = 0;
  EXPECT_THROW(cfg.validate(), UsageError);
  cfg.steps = 1;
  cfg.step_size = -1.0;
  EXPECT_THROW(cfg.validate(), UsageError);
}

TEST(BaselineTest, ZeroStepLeavesModel) {
  const Trained s(1);
  const FeatureDesign design(s.ds);
  const SubsetLoss<FeatureDesign> forget(design, s.split.forget_idx, s.lambda, LossKind::logistic);
  for (BaselineKind kind : {BaselineKind::neggrad, BaselineKind::random_labels}) {
    BaselineConfig cfg;
    cfg.kind = kind;
    cfg.steps = 1;
    cfg.step_size = 0.0;
    EXPECT_EQ(run_baseline(s.model, forget, cfg).w, s.model.w);
  }
}

TEST(BaselineTest, NegGradAscends) {
  const Trained s(2);
  const FeatureDesign design(s.ds);
  const SubsetLoss<FeatureDesign> forget(design, s.split.forget_idx, s.lambda, LossKind::logistic);
  BaselineConfig cfg;
  cfg.steps = 1;
  cfg.step_size = 1e-4;
  const LinearModel out = run_baseline(s.model, forget, cfg);
  EXPECT_GT(forget.value(out.w), forget.value(s.model.w));
  EXPECT_EQ(out.tag, "NegGrad");
}

TEST(BaselineTest, RandomLabelsNeverOriginal) {
  const Trained s(3);
  const FeatureDesign design(s.ds);
  IndexList all(s.ds.n);
  std::iota(all.begin(), all.end(), Index{0});
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const auto relabel = random_wrong_labels(design, all, seed);
    for (Index i : all) {
      ASSERT_NE(relabel.at(i), s.ds.labels[i]);
      ASSERT_LT(relabel.at(i), s.ds.k);
    }
  }
  FeatureDataset one = s.ds;
  one.k = 1;
  EXPECT_THROW(random_wrong_labels(FeatureDesign(one), all, 0), UsageError);
}

TEST(BaselineTest, RandomLabelsDescendRelabeledLoss) {
  const Trained s(4);
  const FeatureDesign design(s.ds);
  const SubsetLoss<FeatureDesign> forget(design, s.split.forget_idx, s.lambda, LossKind::logistic);
  BaselineConfig cfg;
  cfg.kind = BaselineKind::random_labels;
  cfg.seed = 5;
  const LinearModel out = run_baseline(s.model, forget, cfg);
  const RelabeledDesign<FeatureDesign> relabeled(design, random_wrong_labels(design, s.split.forget_idx, 5));
  const SubsetLoss<RelabeledDesign<FeatureDesign>> rl(relabeled, s.split.forget_idx, s.lambda, LossKind::logistic);
  EXPECT_LT(rl.value(out.w), rl.value(s.model.w));
  EXPECT_GT(forget.value(out.w), forget.value(s.model.w));
  EXPECT_EQ(out.w, run_baseline(s.model, forget, cfg).w);
}

TEST(BaselineTest, Divergence) {
  const Trained s(5, LossKind::quadratic);
  const FeatureDesign design(s.ds);
  const SubsetLoss<FeatureDesign> forget(design, s.split.forget_idx, s.lambda, LossKind::quadratic);
  BaselineConfig cfg;
  cfg.steps = 200;
  cfg.step_size = 1.0;
  EXPECT_THROW(run_baseline(s.model, forget, cfg), DivergenceDetected);
  EXPECT_THROW(run_baseline(s.model, forget.with_subset({}), BaselineConfig{}), EmptyIndexSet);
}

TEST(BaselineTest, BaselinesTrailNewtonUnlearning) {
  const Trained s(6);
  const FeatureDesign design(s.ds);
  PipelineConfig cfg;
  cfg.loss = LossKind::logistic;
  cfg.lambda = s.lambda;
  cfg.run_baselines = true;
  cfg.baseline.steps = 50;
  cfg.baseline.step_size = 0.05;
  const PipelineResult r = run_pipeline(design, s.split, cfg);
  ASSERT_EQ(r.reports.size(), 6u);
  const EvalReport& exact = r.reports[2];
  const EvalReport& neggrad = r.reports[4];
  const EvalReport& relabel = r.reports[5];
  EXPECT_EQ(neggrad.method, "NegGrad");
  EXPECT_EQ(relabel.method, "RandomLabels");
  EXPECT_LT(neggrad.test_acc, exact.test_acc);
  EXPECT_LT(relabel.forget_acc, exact.forget_acc);
}

}  // namespace
}  // namespace sfmu
