#include <gtest/gtest.h>

#include "test_util.hpp"

namespace sfmu {
namespace {

TEST(TrainerTest, ScalarRidge) {
  const testing::ScalarRidgeInstance inst;
  const FeatureDesign design(inst.ds, inst.targets);
  const LinearModel full = train(SubsetLoss<FeatureDesign>(design, {0, 1}, 1.0, LossKind::quadratic));
  EXPECT_NEAR(full.w(0), 0.25, 1e-14);
  SplitSpec split;
  split.train_idx = {0, 1};
  split.forget_idx = {1};
  split.retain_idx = {0};
  const LinearModel r = retrain_oracle(design, split, 1.0, LossKind::quadratic);
  EXPECT_NEAR(r.w(0), 0.5, 1e-14);
  EXPECT_EQ(r.tag, "retrained");
}

TEST(TrainerTest, ZeroTargetsGiveZero) {
  SyntheticSpec spec;
  spec.n = 30;
  spec.d = 4;
  spec.k = 2;
  const FeatureDataset ds = make_synthetic_classification(spec, 1);
  const FeatureDesign design(ds, Matrix::Zero(30, 2));
  IndexList all(30);
  std::iota(all.begin(), all.end(), Index{0});
  for (double lambda : {1e-3, 0.1, 1.0}) {
    const LinearModel m = train(SubsetLoss<FeatureDesign>(design, all, lambda, LossKind::quadratic));
    EXPECT_EQ(m.w.norm(), 0.0);
  }
}

TEST(TrainerTest, QuadraticMatchesNormalEquations) {
  SyntheticSpec spec;
  spec.n = 200;
  spec.d = 8;
  spec.k = 3;
  const FeatureDataset ds = make_synthetic_classification(spec, 2);
  const FeatureDesign design(ds);
  IndexList all(200);
  std::iota(all.begin(), all.end(), Index{0});
  const double lambda = 0.05;
  const LinearModel m = train(SubsetLoss<FeatureDesign>(design, all, lambda, LossKind::quadratic));
  // Independent oracle: per-class ridge regression (X^T X + lambda n I) W = X^T Y.
  const Matrix& x = ds.features;
  Matrix y = Matrix::Zero(200, 3);
  for (Index i = 0; i < 200; ++i) y(i, ds.labels[i]) = 1.0;
  Matrix a = x.transpose() * x;
  a.diagonal().array() += lambda * 200.0;
  const Matrix wmat = a.ldlt().solve(x.transpose() * y);
  const Vector expected = Eigen::Map<const Vector>(wmat.data(), wmat.size());
  EXPECT_LT(testing::rel_err(m.w, expected), 1e-10);
}

TEST(TrainerTest, LogisticStationary) {
  SyntheticSpec spec;
  spec.n = 300;
  spec.d = 6;
  spec.k = 4;
  const FeatureDataset ds = make_synthetic_classification(spec, 3);
  const FeatureDesign design(ds);
  IndexList all(300);
  std::iota(all.begin(), all.end(), Index{0});
  const SubsetLoss<FeatureDesign> loss(design, all, 1e-2, LossKind::logistic);
  const LinearModel m = train(loss);
  const double scale = std::max(1.0, loss.gradient(Vector::Zero(24)).norm());
  EXPECT_LE(loss.gradient(m.w).norm(), 1e-6 * scale);
  EXPECT_LT(loss.value(m.w), loss.value(Vector::Zero(24)));
  EXPECT_GT(m.iterations, 0);
  const LinearModel again = train(loss);
  EXPECT_EQ(again.w, m.w);
}

TEST(TrainerTest, WarmStartAtOptimumStays) {
  const testing::ScalarRidgeInstance inst;
  const FeatureDesign design(inst.ds, inst.targets);
  TrainOptions opt;
  opt.init = Vector::Constant(1, 0.25);
  const LinearModel m = train(SubsetLoss<FeatureDesign>(design, {0, 1}, 1.0, LossKind::quadratic), opt);
  EXPECT_EQ(m.iterations, 0);
  EXPECT_EQ(m.w(0), 0.25);
}

TEST(TrainerTest, Failures) {
  SyntheticSpec spec;
  spec.n = 3;
  spec.d = 6;
  spec.k = 2;
  const FeatureDataset ds = make_synthetic_classification(spec, 4);
  const FeatureDesign design(ds);
  // n < d without ridge: singular normal equations
  EXPECT_THROW(train(SubsetLoss<FeatureDesign>(design, {0, 1, 2}, 0.0, LossKind::quadratic)), SingularSystem);
  TrainOptions bad;
  bad.init = Vector::Zero(3);
  EXPECT_THROW(train(SubsetLoss<FeatureDesign>(design, {0}, 1.0, LossKind::quadratic), bad), DimensionMismatch);

  SyntheticSpec big;
  big.n = 200;
  big.d = 5;
  big.k = 3;
  const FeatureDataset ds2 = make_synthetic_classification(big, 5);
  const FeatureDesign d2(ds2);
  IndexList all(200);
  std::iota(all.begin(), all.end(), Index{0});
  TrainOptions once;
  once.max_iter = 1;
  once.tol = 1e-12;
  EXPECT_THROW(train(SubsetLoss<FeatureDesign>(d2, all, 1e-3, LossKind::logistic), once), NotConverged);
  EXPECT_THROW(retrain_oracle(d2, SplitSpec{}, 1e-3, LossKind::quadratic), EmptyIndexSet);
}

}  // namespace
}  // namespace sfmu
