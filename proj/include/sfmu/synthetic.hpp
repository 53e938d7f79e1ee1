#pragma once

#include <cmath>
#include <cstdint>
#include <random>

#include "sfmu/data.hpp"

namespace sfmu {

struct SyntheticSpec {
  Index n = 500;
  Index d = 10;
  Index k = 3;
  double separation = 1.0;   // scale of the class means
  double decay = 1.0;        // per-coordinate noise std is decay^j
  double label_noise = 0.0;  // probability of a uniformly random label
  bool normalize = true;     // rescale so that max |x_i| = 1
};

/// Gaussian class clusters with an optional geometric noise spectrum.
/// Features are rounded to float32 so the dataset round-trips exactly
/// through the feature file format.
inline FeatureDataset make_synthetic_classification(const SyntheticSpec& spec, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::uniform_int_distribution<Index> pick(0, spec.k - 1);

  Matrix means(spec.k, spec.d);
  for (Index c = 0; c < spec.k; ++c)
    for (Index j = 0; j < spec.d; ++j) means(c, j) = spec.separation * normal(rng);

  FeatureDataset ds;
  ds.n = spec.n;
  ds.d = spec.d;
  ds.k = spec.k;
  ds.features.resize(spec.n, spec.d);
  ds.labels.resize(spec.n);
  for (Index i = 0; i < spec.n; ++i) {
    const Index y = pick(rng);
    double sd = 1.0;
    for (Index j = 0; j < spec.d; ++j) {
      ds.features(i, j) = means(y, j) + sd * normal(rng);
      sd *= spec.decay;
    }
    ds.labels[i] = unif(rng) < spec.label_noise ? pick(rng) : y;
  }
  if (spec.normalize) ds.normalize_rows();
  ds.features = ds.features.cast<float>().cast<double>();
  // Rounding can push a row norm a hair above 1.
  if (spec.normalize && ds.max_row_norm() > 1.0) {
    ds.features = (ds.features * (1.0 - 1e-6)).cast<float>().cast<double>();
  }
  return ds;
}

}  // namespace sfmu
