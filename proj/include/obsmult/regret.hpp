#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "obsmult/dataset.hpp"
#include "obsmult/error.hpp"
#include "obsmult/glm.hpp"
#include "obsmult/parallel.hpp"
#include "obsmult/random.hpp"
#include "obsmult/semisynthetic.hpp"

namespace obsmult {

enum class RegretEstimator { MonteCarlo, TrueResample, Bootstrap, Enumeration };

constexpr std::string_view estimator_name(RegretEstimator e) {
  switch (e) {
    case RegretEstimator::MonteCarlo: return "monte_carlo";
    case RegretEstimator::TrueResample: return "true_resample";
    case RegretEstimator::Bootstrap: return "bootstrap";
    case RegretEstimator::Enumeration: return "enumeration";
  }
  return "unknown";
}

/// Extra ridge applied when a refit fails: initial, initial*factor, ...
/// for `max_escalations` attempts (default 1e-6 up to 1e-2).
struct FallbackPolicy {
  double initial_ridge = 1e-6;
  double factor = 10.0;
  int max_escalations = 5;
};

struct FallbackStats {
  std::int64_t refits = 0;        ///< fits that needed any extra ridge
  double max_extra_ridge = 0.0;   ///< largest extra ridge that was needed

  void merge(const FallbackStats& other) {
    refits += other.refits;
    max_extra_ridge = std::max(max_extra_ridge, other.max_extra_ridge);
  }
};

struct RegretOptions {
  unsigned threads = 1;
  FallbackPolicy fallback{};
};

/// Per-point statistics of the resampled predictions.
struct RegretReport {
  Vector regret;          ///< variance of the resampled predictions, R_i
  Vector mean_pred;
  Vector base_pred;       ///< prediction of the initial model (enumeration: the label probabilities)
  Vector standard_error;  ///< estimated SE of regret (zero for enumeration)
  std::int64_t n_resamples = 0;  ///< K, or the number of label assignments for enumeration
  RegretEstimator estimator = RegretEstimator::MonteCarlo;
  std::uint64_t seed = 0;
  std::string trainer_name;
  FallbackStats fallback;
  double weight_total = 1.0;  ///< enumeration only: sum of assignment weights
};

/// e_i = |a_i - b_i| and s_i = e_i^2.
struct DeviationReport {
  Vector e;
  Vector s;
};

inline DeviationReport point_deviations(const Vector& preds_a, const Vector& preds_b) {
  if (preds_a.size() != preds_b.size()) throw Error(ErrorKind::LengthMismatch, "prediction vectors differ in length");
  DeviationReport out;
  out.e = (preds_a - preds_b).cwiseAbs();
  out.s = out.e.cwiseProduct(out.e);
  return out;
}

namespace detail {

/// Refits with escalating extra ridge when the trainer reports a fit failure.
inline FittedPredictor fit_with_fallback(const TrainerHandle& trainer, const Dataset& data, const Vector* warm,
                                         const FallbackPolicy& policy, FallbackStats& stats) {
  try {
    return trainer.fit(data, FitRequest{0.0, warm});
  } catch (const Error& e) {
    if (!is_fit_failure(e.kind())) throw;
  }
  double extra = policy.initial_ridge;
  for (int attempt = 0; attempt < policy.max_escalations; ++attempt, extra *= policy.factor) {
    try {
      FittedPredictor fitted = trainer.fit(data, FitRequest{extra, warm});
      stats.refits += 1;
      stats.max_extra_ridge = std::max(stats.max_extra_ridge, extra);
      return fitted;
    } catch (const Error& e) {
      if (!is_fit_failure(e.kind())) throw;
    }
  }
  throw Error(ErrorKind::RefitFallbackExhausted,
              "refit failed even with extra ridge " + io::format_double(extra / policy.factor));
}

inline FittedPredictor initial_fit(const TrainerHandle& trainer, const Dataset& data) {
  try {
    return trainer.fit(data, FitRequest{});
  } catch (const Error& e) {
    throw Error(ErrorKind::InitialFitFailed, std::string(e.what()));
  }
}

inline void check_predictions(const Vector& preds) {
  for (Index i = 0; i < preds.size(); ++i) {
    if (!(preds(i) >= 0.0 && preds(i) <= 1.0)) {
      throw Error(ErrorKind::ProbOutOfRange, "trainer predicted " + io::format_double(preds(i)) + " at point " +
                                                 std::to_string(i));
    }
  }
}

/// Power sums of (value - shift) for each query point, j = 1..4.
struct MomentSums {
  Matrix sums;  // rows: points, cols: powers 1..4
  FallbackStats fallback;

  explicit MomentSums(Index points = 0) : sums(Matrix::Zero(points, 4)) {}

  void add(const Vector& values, const Vector& shift) {
    for (Index i = 0; i < values.size(); ++i) {
      const double d = values(i) - shift(i);
      const double d2 = d * d;
      sums(i, 0) += d;
      sums(i, 1) += d2;
      sums(i, 2) += d2 * d;
      sums(i, 3) += d2 * d2;
    }
  }
};

inline constexpr std::int64_t kResampleBlock = 32;

/// Runs K refits on sample(k), k = 1..K, and summarizes predictions at
/// `query`. Work is split into fixed-size blocks reduced in block order, so
/// the result is bit-identical for every thread count.
inline RegretReport monte_carlo_regret(const std::function<Dataset(std::uint32_t)>& sample,
                                       const TrainerHandle& trainer, const Matrix& query, const Vector& shift,
                                       const Vector& warm, std::int64_t K, const RegretOptions& opts) {
  if (K < 2) throw Error(ErrorKind::TooFewResamples, "need at least 2 resamples, got " + std::to_string(K));
  const Index n = query.rows();
  const auto blocks = static_cast<std::size_t>((K + kResampleBlock - 1) / kResampleBlock);
  std::vector<MomentSums> partial(blocks, MomentSums(n));
  const Vector* warm_ptr = warm.size() > 0 ? &warm : nullptr;

  parallel_for(blocks, opts.threads, [&](std::size_t b) {
    MomentSums& acc = partial[b];
    const std::int64_t first = static_cast<std::int64_t>(b) * kResampleBlock + 1;
    const std::int64_t last = std::min<std::int64_t>(first + kResampleBlock - 1, K);
    for (std::int64_t k = first; k <= last; ++k) {
      const Dataset resampled = sample(static_cast<std::uint32_t>(k));
      const FittedPredictor fitted = fit_with_fallback(trainer, resampled, warm_ptr, opts.fallback, acc.fallback);
      const Vector preds = fitted.predict(query);
      check_predictions(preds);
      acc.add(preds, shift);
    }
  });

  MomentSums total(n);
  for (const auto& part : partial) {
    total.sums += part.sums;
    total.fallback.merge(part.fallback);
  }

  RegretReport report;
  report.regret.resize(n);
  report.mean_pred.resize(n);
  report.standard_error.resize(n);
  const auto k = static_cast<double>(K);
  for (Index i = 0; i < n; ++i) {
    const double a1 = total.sums(i, 0) / k;
    const double a2 = total.sums(i, 1) / k;
    const double a3 = total.sums(i, 2) / k;
    const double a4 = total.sums(i, 3) / k;
    const double m2 = std::max(a2 - a1 * a1, 0.0);
    const double m4 = std::max(a4 - 4.0 * a1 * a3 + 6.0 * a1 * a1 * a2 - 3.0 * a1 * a1 * a1 * a1, 0.0);
    const double var = m2 * k / (k - 1.0);
    report.regret(i) = var;
    report.mean_pred(i) = std::clamp(shift(i) + a1, 0.0, 1.0);
    const double se2 = (m4 - var * var * (k - 3.0) / (k - 1.0)) / k;
    report.standard_error(i) = std::sqrt(std::max(se2, 0.0));
  }
  report.n_resamples = K;
  report.trainer_name = trainer.name;
  report.fallback = total.fallback;
  return report;
}

}  // namespace detail

/// Label-resampling regret of `query` points for a model trained on `train`:
/// labels of the training rows are redrawn from `label_probs` (stream k for
/// resample k) and the trainer refit K times. `shift` is a per-query
/// reference value close to the mean prediction (used only for numerical
/// conditioning of the moment sums).
inline RegretReport resample_regret(const Dataset& train, const Vector& label_probs, const Matrix& query,
                                    const Vector& shift, const TrainerHandle& trainer, std::int64_t K,
                                    std::uint64_t seed, const Vector& warm = {}, const RegretOptions& opts = {}) {
  if (label_probs.size() != train.n()) throw Error(ErrorKind::LengthMismatch, "label probabilities != training rows");
  auto sample = [&](std::uint32_t k) { return train.with_labels(draw_labels(label_probs, LabelDrawSeed{seed, k})); };
  RegretReport report = detail::monte_carlo_regret(sample, trainer, query, shift, warm, K, opts);
  report.seed = seed;
  return report;
}

/// Estimated regret: fit once, redraw every label from the fitted
/// probabilities, refit K times, and take the per-point sample variance
/// (K - 1 denominator) of the refitted predictions.
inline RegretReport estimate_regret(const Dataset& data, const TrainerHandle& trainer, std::int64_t K,
                                    std::uint64_t seed, const RegretOptions& opts = {}) {
  if (K < 2) throw Error(ErrorKind::TooFewResamples, "need at least 2 resamples, got " + std::to_string(K));
  const FittedPredictor initial = detail::initial_fit(trainer, data);
  const Vector base = initial.predict(data.features());
  detail::check_predictions(base);
  RegretReport report = resample_regret(data, base, data.features(), base, trainer, K, seed, initial.params, opts);
  report.base_pred = base;
  report.estimator = RegretEstimator::MonteCarlo;
  return report;
}

/// Regret as defined against the ground truth: labels are redrawn from
/// ss.true_probs. base_pred is the fit on the observed labels.
inline RegretReport true_regret(const SemiSyntheticDataset& ss, const TrainerHandle& trainer, std::int64_t K,
                                std::uint64_t seed, const RegretOptions& opts = {}) {
  if (K < 2) throw Error(ErrorKind::TooFewResamples, "need at least 2 resamples, got " + std::to_string(K));
  const FittedPredictor initial = detail::initial_fit(trainer, ss.base);
  const Vector base = initial.predict(ss.base.features());
  detail::check_predictions(base);
  RegretReport report =
      resample_regret(ss.base, ss.true_probs, ss.base.features(), base, trainer, K, seed, initial.params, opts);
  report.base_pred = base;
  report.estimator = RegretEstimator::TrueResample;
  return report;
}

/// Bootstrap baseline: n rows drawn with replacement per replicate. Observed
/// labels are never flipped.
inline RegretReport bootstrap_regret(const Dataset& data, const TrainerHandle& trainer, std::int64_t K,
                                     std::uint64_t seed, const RegretOptions& opts = {}) {
  if (K < 2) throw Error(ErrorKind::TooFewResamples, "need at least 2 resamples, got " + std::to_string(K));
  const FittedPredictor initial = detail::initial_fit(trainer, data);
  const Vector base = initial.predict(data.features());
  detail::check_predictions(base);
  const CounterRng rng(seed);
  const auto n = static_cast<std::uint64_t>(data.n());
  auto sample = [&](std::uint32_t k) {
    std::vector<Index> rows(static_cast<std::size_t>(n));
    for (std::uint64_t i = 0; i < n; ++i) rows[i] = static_cast<Index>(rng.below(n, RngDomain::BootstrapRows, k, i));
    return data.subset(rows);
  };
  RegretReport report = detail::monte_carlo_regret(sample, trainer, data.features(), base, initial.params, K, opts);
  report.base_pred = base;
  report.seed = seed;
  report.estimator = RegretEstimator::Bootstrap;
  return report;
}

// ---------------------------------------------------------------------------
// Enumeration oracle

inline constexpr Index kMaxEnumerationPoints = 22;
inline constexpr std::uint64_t kEnumerationBlock = 1024;

/// Exact regret: the trainer is refit on every label vector in {-1,+1}^n and
/// predictions are weighted by the probability of that vector under
/// independent Bernoulli(probs). Points with probability 0 or 1 have a fixed
/// label, so only 2^m assignments over the m uncertain points are visited.
/// Assignments are walked in Gray-code order, warm-starting each refit from
/// the previous one; the walk restarts cold every 1024 assignments so the
/// result does not depend on the thread count.
inline RegretReport exact_regret_enumeration(const Matrix& features, const Vector& probs, const TrainerHandle& trainer,
                                             const RegretOptions& opts = {}) {
  const Index n = features.rows();
  if (n > kMaxEnumerationPoints) {
    throw Error(ErrorKind::TooLarge, "enumeration supports at most " + std::to_string(kMaxEnumerationPoints) +
                                         " points, got " + std::to_string(n));
  }
  if (probs.size() != n) throw Error(ErrorKind::LengthMismatch, "probs length != feature rows");
  std::vector<Index> free;
  Vector fixed_labels(n);
  for (Index i = 0; i < n; ++i) {
    const double p = probs(i);
    if (!(p >= 0.0 && p <= 1.0)) {
      throw Error(ErrorKind::ProbOutOfRange, "probability at index " + std::to_string(i) + " is " + io::format_double(p));
    }
    fixed_labels(i) = p >= 0.5 ? 1.0 : -1.0;
    if (p > 0.0 && p < 1.0) free.push_back(i);
  }
  const std::uint64_t assignments = std::uint64_t{1} << free.size();
  const std::uint64_t blocks = (assignments + kEnumerationBlock - 1) / kEnumerationBlock;

  struct WeightedSums {
    double weight = 0.0;
    Vector s1, s2;
    FallbackStats fallback;
  };
  std::vector<WeightedSums> partial(static_cast<std::size_t>(blocks));

  parallel_for(static_cast<std::size_t>(blocks), opts.threads, [&](std::size_t b) {
    WeightedSums& acc = partial[b];
    acc.s1 = Vector::Zero(n);
    acc.s2 = Vector::Zero(n);
    const std::uint64_t first = b * kEnumerationBlock;
    const std::uint64_t last = std::min(first + kEnumerationBlock, assignments);
    Vector labels = fixed_labels;
    Vector warm;
    for (std::uint64_t j = first; j < last; ++j) {
      const std::uint64_t gray = j ^ (j >> 1);
      double weight = 1.0;
      for (std::size_t f = 0; f < free.size(); ++f) {
        const Index i = free[f];
        const bool positive = (gray >> f) & 1u;
        labels(i) = positive ? 1.0 : -1.0;
        weight *= positive ? probs(i) : 1.0 - probs(i);
      }
      const FittedPredictor fitted = detail::fit_with_fallback(
          trainer, Dataset(features, labels), warm.size() > 0 ? &warm : nullptr, opts.fallback, acc.fallback);
      warm = fitted.params;
      const Vector preds = fitted.predict(features);
      detail::check_predictions(preds);
      const Vector centred = preds - probs;
      acc.weight += weight;
      acc.s1 += weight * centred;
      acc.s2 += weight * centred.cwiseProduct(centred);
    }
  });

  double weight = 0.0;
  Vector s1 = Vector::Zero(n);
  Vector s2 = Vector::Zero(n);
  RegretReport report;
  for (const auto& part : partial) {
    weight += part.weight;
    s1 += part.s1;
    s2 += part.s2;
    report.fallback.merge(part.fallback);
  }
  const Vector mean_shift = s1 / weight;
  report.regret = (s2 / weight - mean_shift.cwiseProduct(mean_shift)).cwiseMax(0.0);
  report.mean_pred = (probs + mean_shift).cwiseMax(0.0).cwiseMin(1.0);
  report.base_pred = probs;
  report.standard_error = Vector::Zero(n);
  report.n_resamples = static_cast<std::int64_t>(assignments);
  report.estimator = RegretEstimator::Enumeration;
  report.trainer_name = trainer.name;
  report.weight_total = weight;
  return report;
}

}  // namespace obsmult
