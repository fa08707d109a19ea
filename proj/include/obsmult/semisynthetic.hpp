#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <utility>

#include "obsmult/dataset.hpp"
#include "obsmult/glm.hpp"
#include "obsmult/random.hpp"

namespace obsmult {

/// Real (or generated) features with labels drawn from a known logistic
/// ground truth, so that true probabilities and true regret are available.
struct SemiSyntheticDataset {
  Dataset base;           ///< features with the drawn labels
  Vector true_probs;      ///< p*_i = sigmoid(x_i . ground_truth.theta)
  LogisticModel ground_truth;
  LabelDrawSeed seed;     ///< the draw that produced base.labels
  double ridge = 0.0;     ///< ridge used to fit ground_truth (metadata)

  /// Same features and ground truth, labels redrawn from stream `stream_index`.
  SemiSyntheticDataset redraw(std::uint32_t stream_index) const {
    SemiSyntheticDataset out = *this;
    out.seed.stream_index = stream_index;
    out.base = base.with_labels(draw_labels(true_probs, out.seed));
    return out;
  }
};

struct GroundTruthOptions {
  double ridge = 1.0;
  bool include_intercept = true;
};

/// Builds a semi-synthetic dataset from features and their original labels
/// (either label convention). Throws FitDiverged for separable raw labels
/// with ridge = 0.
inline SemiSyntheticDataset make_semisynthetic(const Matrix& features, const Vector& raw_labels,
                                               const GroundTruthOptions& gt, const LabelDrawSeed& seed,
                                               std::vector<std::string> feature_names = {}) {
  if (raw_labels.size() != features.rows()) {
    throw Error(ErrorKind::DimensionMismatch, "raw labels length " + std::to_string(raw_labels.size()) +
                                                  " != rows " + std::to_string(features.rows()));
  }
  if (!(gt.ridge >= 0.0)) throw Error(ErrorKind::InvalidConfig, "ground-truth ridge must be >= 0");
  if (feature_names.empty()) feature_names = Dataset::default_names(features.cols());

  Vector labels(raw_labels.size());
  for (Index i = 0; i < labels.size(); ++i) labels(i) = normalize_label(raw_labels(i), i);
  const Dataset original(features, labels, feature_names);

  FitOptions opts;
  opts.ridge = gt.ridge;
  opts.include_intercept = gt.include_intercept;
  LogisticModel truth = fit_logistic(original, opts);

  Vector probs = truth.predict_all(features);
  Vector drawn = draw_labels(probs, seed);
  return SemiSyntheticDataset{Dataset(features, std::move(drawn), std::move(feature_names)), std::move(probs),
                              std::move(truth), seed, gt.ridge};
}

/// Semi-synthetic data from a known parameter vector (no fitting step).
inline SemiSyntheticDataset semisynthetic_from_model(const Matrix& features, LogisticModel truth,
                                                     const LabelDrawSeed& seed) {
  if (truth.feature_names.empty()) truth.feature_names = Dataset::default_names(features.cols());
  Vector probs = truth.predict_all(features);
  Vector drawn = draw_labels(probs, seed);
  auto names = truth.feature_names;
  return SemiSyntheticDataset{Dataset(features, std::move(drawn), std::move(names)), std::move(probs),
                              std::move(truth), seed, 0.0};
}

// ---------------------------------------------------------------------------
// Feature generators

/// Features and original labels for two clusters stacked vertically: the top
/// cluster (centre (0, +separation/2)) has 80% positives, the bottom cluster
/// 20%. Positives are spread evenly over the cluster index so they are
/// uncorrelated with the jitter.
struct TwoClusterOptions {
  Index per_cluster = 100;
  double separation = 4.0;
  double jitter = 1.0;
};

struct RawProblem {
  Matrix features;
  Vector raw_labels;
};

inline RawProblem two_cluster_problem(const TwoClusterOptions& opts, std::uint64_t seed) {
  const CounterRng rng(seed);
  const Index m = opts.per_cluster;
  RawProblem out{Matrix(2 * m, 2), Vector(2 * m)};
  for (Index c = 0; c < 2; ++c) {
    const double centre = c == 0 ? 0.5 * opts.separation : -0.5 * opts.separation;
    for (Index k = 0; k < m; ++k) {
      const Index i = c * m + k;
      const auto idx = static_cast<std::uint64_t>(i);
      out.features(i, 0) = opts.jitter * rng.normal(RngDomain::Features, 0, idx, 0);
      out.features(i, 1) = centre + opts.jitter * rng.normal(RngDomain::Features, 0, idx, 1);
      // 4 of every 5 points positive on top, 1 of every 5 at the bottom.
      const bool positive = c == 0 ? (k % 5) != 4 : (k % 5) == 0;
      out.raw_labels(i) = positive ? 1.0 : -1.0;
    }
  }
  return out;
}

enum class FeatureDistribution {
  StandardNormal,  ///< i.i.d. N(0, 1) coordinates
  Annulus,         ///< uniform direction, radius uniform in [1, 2]: compact, bounded away from 0
};

inline Matrix sample_features(Index n, Index d, FeatureDistribution dist, std::uint64_t seed) {
  const CounterRng rng(seed);
  Matrix x(n, d);
  for (Index i = 0; i < n; ++i) {
    const auto idx = static_cast<std::uint64_t>(i);
    for (Index j = 0; j < d; ++j) x(i, j) = rng.normal(RngDomain::Features, 1, idx, static_cast<std::uint16_t>(j));
    if (dist == FeatureDistribution::Annulus) {
      const double radius = 1.0 + rng.uniform(RngDomain::Features, 2, idx);
      const double norm = x.row(i).norm();
      if (norm > 0.0) {
        x.row(i) *= radius / norm;
      } else {
        x.row(i).setZero();
        x(i, 0) = radius;
      }
    }
  }
  return x;
}

}  // namespace obsmult
