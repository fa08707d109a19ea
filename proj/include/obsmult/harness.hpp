#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <iterator>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "obsmult/dataset.hpp"
#include "obsmult/error.hpp"
#include "obsmult/glm.hpp"
#include "obsmult/parallel.hpp"
#include "obsmult/regret.hpp"
#include "obsmult/semisynthetic.hpp"
#include "obsmult/theory.hpp"

namespace obsmult {

// ---------------------------------------------------------------------------
// Statistics helpers

/// Linear-interpolation quantile (R type 7) of unsorted values.
inline double quantile(std::vector<double> values, double level) {
  if (values.empty()) throw Error(ErrorKind::EmptyDataset, "quantile of an empty sample");
  std::sort(values.begin(), values.end());
  const double pos = std::clamp(level, 0.0, 1.0) * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, values.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return frac == 0.0 ? values[lo] : values[lo] + frac * (values[hi] - values[lo]);
}

inline double pearson(const Vector& a, const Vector& b) {
  if (a.size() != b.size()) throw Error(ErrorKind::LengthMismatch, "correlation inputs differ in length");
  const Vector ca = a.array() - a.mean();
  const Vector cb = b.array() - b.mean();
  const double denom = std::sqrt(ca.squaredNorm() * cb.squaredNorm());
  return denom > 0.0 ? ca.dot(cb) / denom : 0.0;
}

inline std::vector<double> to_std(const Vector& v) { return {v.data(), v.data() + v.size()}; }

struct TrialSummary {
  double median = 0.0;
  double q25 = 0.0;
  double q75 = 0.0;
  double min = 0.0;
  double max = 0.0;
  std::int64_t n_trials = 0;
};

inline TrialSummary summarize(const std::vector<double>& values) {
  TrialSummary s;
  s.median = quantile(values, 0.5);
  s.q25 = quantile(values, 0.25);
  s.q75 = quantile(values, 0.75);
  s.min = *std::min_element(values.begin(), values.end());
  s.max = *std::max_element(values.begin(), values.end());
  s.n_trials = static_cast<std::int64_t>(values.size());
  return s;
}

// ---------------------------------------------------------------------------
// Selective prediction

enum class Ranking { TrueRegret, EstimatedRegret, OracleError };

constexpr std::string_view ranking_name(Ranking r) {
  switch (r) {
    case Ranking::TrueRegret: return "true_regret";
    case Ranking::EstimatedRegret: return "estimated_regret";
    case Ranking::OracleError: return "oracle_error";
  }
  return "unknown";
}

/// Either `levels` evenly spaced quantiles of the scores (0, ..., 1) or an
/// explicit list of cutoffs.
struct CutoffGrid {
  int levels = 21;
  std::vector<double> explicit_cutoffs;
};

struct SelectivePoint {
  double level = std::numeric_limits<double>::quiet_NaN();  ///< quantile level; NaN for explicit cutoffs
  double cutoff = 0.0;
  double coverage = 0.0;
  double mean_kl = 0.0;
  Index n_kept = 0;
};

struct SelectiveCurve {
  std::vector<SelectivePoint> points;  ///< ascending cutoff
  Ranking ranking = Ranking::EstimatedRegret;

  /// The entry at quantile level `level`, if the grid had one.
  const SelectivePoint* at_level(double level) const {
    for (const auto& p : points) {
      if (std::abs(p.level - level) < 1e-12) return &p;
    }
    return nullptr;
  }
};

/// Keeps points with score <= cutoff and reports mean KL to the true
/// probabilities over the kept set. Cutoffs that keep nothing are dropped.
inline SelectiveCurve selective_curve_from_kl(const Vector& pointwise, const Vector& scores, const CutoffGrid& grid,
                                              Ranking ranking) {
  if (scores.size() != pointwise.size()) throw Error(ErrorKind::LengthMismatch, "scores length != point count");
  if (!scores.allFinite()) throw Error(ErrorKind::InvalidConfig, "ranking scores must be finite");
  const Index n = scores.size();

  std::vector<std::pair<double, double>> cutoffs;  // (level, cutoff)
  if (grid.explicit_cutoffs.empty()) {
    if (grid.levels < 2) throw Error(ErrorKind::InvalidConfig, "cutoff grid needs at least 2 levels");
    const auto sorted_scores = to_std(scores);
    for (int j = 0; j < grid.levels; ++j) {
      const double level = static_cast<double>(j) / static_cast<double>(grid.levels - 1);
      cutoffs.emplace_back(level, quantile(sorted_scores, level));
    }
  } else {
    for (double c : grid.explicit_cutoffs) cutoffs.emplace_back(std::numeric_limits<double>::quiet_NaN(), c);
    std::sort(cutoffs.begin(), cutoffs.end(), [](auto& a, auto& b) { return a.second < b.second; });
    if (cutoffs.size() < 2 || cutoffs.back().second < scores.maxCoeff()) {
      throw Error(ErrorKind::InvalidConfig, "cutoff grid needs >= 2 cutoffs including one >= max(score)");
    }
  }

  SelectiveCurve curve;
  curve.ranking = ranking;
  for (const auto& [level, cutoff] : cutoffs) {
    double total = 0.0;
    Index kept = 0;
    for (Index i = 0; i < n; ++i) {
      if (scores(i) <= cutoff) {
        total += pointwise(i);
        ++kept;
      }
    }
    if (kept == 0) continue;
    curve.points.push_back({level, cutoff, static_cast<double>(kept) / static_cast<double>(n),
                            total / static_cast<double>(kept), kept});
  }
  if (curve.points.empty()) throw Error(ErrorKind::EmptyKeptSet, "every cutoff is below min(score)");
  return curve;
}

/// Selective prediction for `model` on the semi-synthetic points, abstaining on
/// points whose ranking score exceeds each cutoff.
inline SelectiveCurve selective_prediction_curve(const SemiSyntheticDataset& ss, const LogisticModel& model,
                                                 const Vector& ranking_scores, const CutoffGrid& grid,
                                                 Ranking ranking) {
  const Vector kl = pointwise_kl(ss.true_probs, model.predict_all(ss.base.features()));
  return selective_curve_from_kl(kl, ranking_scores, grid, ranking);
}

/// The "lowest error" curve: points ranked by their own KL.
inline SelectiveCurve oracle_error_curve(const SemiSyntheticDataset& ss, const LogisticModel& model,
                                         const CutoffGrid& grid) {
  const Vector kl = pointwise_kl(ss.true_probs, model.predict_all(ss.base.features()));
  return selective_curve_from_kl(kl, kl, grid, Ranking::OracleError);
}

/// Mean of the m smallest values; the best achievable mean KL at m kept points.
inline double best_prefix_mean(const Vector& values, Index m) {
  auto v = to_std(values);
  std::sort(v.begin(), v.end());
  const auto count = static_cast<std::size_t>(std::clamp<Index>(m, 1, values.size()));
  return std::accumulate(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(count), 0.0) /
         static_cast<double>(count);
}

// ---------------------------------------------------------------------------
// Active learning

enum class Acquisition { TrueRegret, EstimatedRegret, Uniform };

constexpr std::string_view acquisition_name(Acquisition a) {
  switch (a) {
    case Acquisition::TrueRegret: return "true_regret";
    case Acquisition::EstimatedRegret: return "estimated_regret";
    case Acquisition::Uniform: return "uniform";
  }
  return "unknown";
}

struct ActiveLearningOptions {
  double initial_fraction = 0.5;
  Index batch = 1;
  std::int64_t max_batches = -1;  ///< negative: until the pool is exhausted
  std::int64_t K = 300;
  std::uint64_t seed = 0;
  RegretOptions regret{};
};

struct ActiveLearningStep {
  Index n_labeled = 0;
  double mean_kl = 0.0;
  std::vector<Index> acquired;  ///< points moved into the labeled set at this step
};

struct ActiveLearningTrace {
  std::vector<ActiveLearningStep> steps;
  Acquisition strategy = Acquisition::EstimatedRegret;
  std::uint64_t seed = 0;
  FallbackStats fallback;
};

namespace detail {

enum SeedTag : std::uint32_t {
  kTagSplit = 1,
  kTagAcquire = 2,
  kTagEstimated = 3,
  kTagTrue = 4,
  kTagTrialEstimate = 5,
  kTagTrialTrue = 6,
  kTagTrialActive = 7,
};

inline Matrix rows_of(const Matrix& x, const std::vector<Index>& rows) {
  Matrix out(static_cast<Index>(rows.size()), x.cols());
  for (std::size_t r = 0; r < rows.size(); ++r) out.row(static_cast<Index>(r)) = x.row(rows[r]);
  return out;
}

inline Vector entries_of(const Vector& v, const std::vector<Index>& rows) {
  Vector out(static_cast<Index>(rows.size()));
  for (std::size_t r = 0; r < rows.size(); ++r) out(static_cast<Index>(r)) = v(rows[r]);
  return out;
}

}  // namespace detail

/// Starts from a seeded `initial_fraction` of the points, then repeatedly
/// moves the `batch` pool points with the highest score (ties: lower index
/// first) into the labeled set, revealing their drawn labels. After every
/// step, mean KL of the current model is measured over all points.
///
/// Estimated regret scores pool points by refitting on label draws from the
/// current model's probabilities at the labeled points; true regret uses the
/// ground-truth probabilities instead. The labeled set is always kept in
/// ascending point order, so exhausting the pool reproduces the full-data fit.
inline ActiveLearningTrace active_learning_run(const SemiSyntheticDataset& ss, Acquisition strategy,
                                               const TrainerHandle& trainer, const ActiveLearningOptions& opts) {
  if (!(opts.initial_fraction > 0.0 && opts.initial_fraction < 1.0)) {
    throw Error(ErrorKind::InvalidConfig, "initial_fraction must be in (0, 1)");
  }
  if (opts.batch < 1) throw Error(ErrorKind::InvalidConfig, "batch must be >= 1");
  const Index n = ss.base.n();
  const CounterRng rng(opts.seed);

  std::vector<Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Index{0});
  std::vector<double> keys(order.size());
  for (Index i = 0; i < n; ++i) {
    keys[static_cast<std::size_t>(i)] = rng.uniform(RngDomain::Permutation, 0, static_cast<std::uint64_t>(i));
  }
  std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) {
    return keys[static_cast<std::size_t>(a)] < keys[static_cast<std::size_t>(b)];
  });
  const auto initial = static_cast<std::size_t>(
      std::clamp<Index>(static_cast<Index>(std::llround(opts.initial_fraction * static_cast<double>(n))), 1, n));
  std::vector<Index> labeled(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(initial));
  std::vector<Index> pool(order.begin() + static_cast<std::ptrdiff_t>(initial), order.end());
  if (pool.empty()) throw Error(ErrorKind::EmptyPool, "no points left to acquire");
  std::sort(labeled.begin(), labeled.end());
  std::sort(pool.begin(), pool.end());

  ActiveLearningTrace trace;
  trace.strategy = strategy;
  trace.seed = opts.seed;

  const Matrix& x = ss.base.features();
  auto fit_labeled = [&](bool first) {
    const Dataset train = ss.base.subset(labeled);
    if (first) return detail::initial_fit(trainer, train);
    return detail::fit_with_fallback(trainer, train, nullptr, opts.regret.fallback, trace.fallback);
  };

  FittedPredictor model = fit_labeled(true);
  trace.steps.push_back({static_cast<Index>(labeled.size()), mean_kl(ss.true_probs, model.predict(x)), {}});

  for (std::int64_t step = 0; !pool.empty() && (opts.max_batches < 0 || step < opts.max_batches); ++step) {
    const auto step_index = static_cast<std::uint64_t>(step);
    Vector scores(static_cast<Index>(pool.size()));
    if (strategy == Acquisition::Uniform) {
      for (std::size_t j = 0; j < pool.size(); ++j) {
        scores(static_cast<Index>(j)) = rng.uniform(RngDomain::Acquisition, static_cast<std::uint32_t>(step),
                                                    static_cast<std::uint64_t>(pool[j]));
      }
    } else {
      const Dataset train = ss.base.subset(labeled);
      const Matrix query = detail::rows_of(x, pool);
      const Vector shift = model.predict(query);
      const bool estimated = strategy == Acquisition::EstimatedRegret;
      const Vector label_probs =
          estimated ? model.predict(train.features()) : detail::entries_of(ss.true_probs, labeled);
      const std::uint64_t seed = rng.derive(estimated ? detail::kTagEstimated : detail::kTagTrue, step_index);
      const RegretReport r =
          resample_regret(train, label_probs, query, shift, trainer, opts.K, seed, model.params, opts.regret);
      scores = r.regret;
      trace.fallback.merge(r.fallback);
    }

    std::vector<std::size_t> rank(pool.size());
    std::iota(rank.begin(), rank.end(), std::size_t{0});
    std::stable_sort(rank.begin(), rank.end(), [&](std::size_t a, std::size_t b) {
      return scores(static_cast<Index>(a)) > scores(static_cast<Index>(b));
    });
    const auto take = std::min<std::size_t>(static_cast<std::size_t>(opts.batch), pool.size());
    std::vector<Index> acquired;
    for (std::size_t j = 0; j < take; ++j) acquired.push_back(pool[rank[j]]);
    std::sort(acquired.begin(), acquired.end());

    std::vector<Index> remaining;
    std::set_difference(pool.begin(), pool.end(), acquired.begin(), acquired.end(), std::back_inserter(remaining));
    pool = std::move(remaining);
    std::vector<Index> merged;
    std::merge(labeled.begin(), labeled.end(), acquired.begin(), acquired.end(), std::back_inserter(merged));
    labeled = std::move(merged);

    model = fit_labeled(false);
    trace.steps.push_back(
        {static_cast<Index>(labeled.size()), mean_kl(ss.true_probs, model.predict(x)), std::move(acquired)});
  }
  return trace;
}

// ---------------------------------------------------------------------------
// Multi-trial orchestration

enum class Experiment { TheoryVsActual, Selective, Active };

constexpr std::string_view experiment_name(Experiment e) {
  switch (e) {
    case Experiment::TheoryVsActual: return "theory_vs_actual";
    case Experiment::Selective: return "selective";
    case Experiment::Active: return "active";
  }
  return "unknown";
}

/// Everything a trial needs besides the semi-synthetic dataset.
struct TrialSettings {
  std::uint64_t master_seed = 0;
  std::int64_t K = 300;
  std::int64_t n_trials = 100;
  FitOptions fit{};
  CutoffGrid grid{};
  double initial_fraction = 0.5;
  Index batch = 1;
  std::int64_t max_batches = -1;
  double epsilon_constant = kEpsilonConstant;
  unsigned threads = 1;
  FallbackPolicy fallback{};
};

/// One tracked scalar from one trial.
struct TrialRecord {
  std::int64_t trial = 0;
  std::string metric;
  double value = 0.0;
};

/// Per-point values from one trial (theory_vs_actual only).
struct PointRecord {
  std::int64_t trial = 0;
  Index point = 0;
  double estimated_regret = 0.0;
  double q = 0.0;
  double base_pred = 0.0;
};

struct TrialOutput {
  std::vector<TrialRecord> records;
  std::vector<PointRecord> points;
  FallbackStats fallback;
};

struct TrialResults {
  Experiment experiment = Experiment::Selective;
  std::vector<std::pair<std::string, TrialSummary>> summaries;  ///< in first-recorded metric order
  std::vector<TrialRecord> records;                             ///< ordered by trial, then metric
  std::vector<PointRecord> points;
  Vector true_regret;  ///< theory_vs_actual / selective: trial-independent true regret
  std::vector<std::pair<Index, TrialSummary>> per_point_estimates;  ///< theory_vs_actual
  FallbackStats fallback;
};

inline std::string level_tag(double level) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", level);
  return buf;
}

/// Runs trial `trial` (1-based): labels redrawn from stream `trial`, features
/// and ground truth fixed. Every seed is derived from (master_seed, trial),
/// so a trial's output does not depend on which other trials run.
inline TrialOutput run_single_trial(const SemiSyntheticDataset& ss, const TrialSettings& cfg, Experiment experiment,
                                    std::int64_t trial, const Vector& true_regret_values) {
  const SemiSyntheticDataset trial_ss = ss.redraw(static_cast<std::uint32_t>(trial));
  const TrainerHandle trainer = logistic_trainer(cfg.fit);
  const CounterRng rng(cfg.master_seed);
  const auto t = static_cast<std::uint64_t>(trial);
  RegretOptions ropts{1, cfg.fallback};
  TrialOutput out;
  auto record = [&](std::string metric, double value) { out.records.push_back({trial, std::move(metric), value}); };

  switch (experiment) {
    case Experiment::TheoryVsActual: {
      const RegretReport est = estimate_regret(trial_ss.base, trainer, cfg.K, rng.derive(detail::kTagTrialEstimate, t), ropts);
      out.fallback.merge(est.fallback);
      const LogisticModel model = fit_logistic(trial_ss.base, cfg.fit);
      const Vector q = q_values(model, trial_ss.base.features());
      Vector rel(q.size());
      for (Index i = 0; i < q.size(); ++i) rel(i) = std::abs(est.regret(i) - q(i)) / q(i);
      record("corr_estimated_vs_true", pearson(est.regret, true_regret_values));
      record("corr_q_vs_estimated", pearson(q, est.regret));
      record("corr_q_vs_true", pearson(q, true_regret_values));
      record("median_rel_error_estimated_vs_q", quantile(to_std(rel), 0.5));
      for (Index i = 0; i < q.size(); ++i) out.points.push_back({trial, i, est.regret(i), q(i), est.base_pred(i)});
      break;
    }
    case Experiment::Selective: {
      const RegretReport est = estimate_regret(trial_ss.base, trainer, cfg.K, rng.derive(detail::kTagTrialEstimate, t), ropts);
      out.fallback.merge(est.fallback);
      const LogisticModel model = fit_logistic(trial_ss.base, cfg.fit);
      const Vector kl = pointwise_kl(trial_ss.true_probs, model.predict_all(trial_ss.base.features()));
      const double full = kl.mean();
      const std::pair<Ranking, Vector> rankings[] = {
          {Ranking::TrueRegret, true_regret_values}, {Ranking::EstimatedRegret, est.regret}, {Ranking::OracleError, kl}};
      for (const auto& [ranking, scores] : rankings) {
        const SelectiveCurve curve = selective_curve_from_kl(kl, scores, cfg.grid, ranking);
        for (const auto& p : curve.points) {
          const std::string key = std::string(ranking_name(ranking)) + "@" + level_tag(p.level);
          record(key + ".mean_kl", p.mean_kl);
          record(key + ".relative_kl", full > 0.0 ? p.mean_kl / full : 1.0);
          record(key + ".coverage", p.coverage);
        }
      }
      break;
    }
    case Experiment::Active: {
      ActiveLearningOptions aopts;
      aopts.initial_fraction = cfg.initial_fraction;
      aopts.batch = cfg.batch;
      aopts.max_batches = cfg.max_batches;
      aopts.K = cfg.K;
      aopts.seed = rng.derive(detail::kTagTrialActive, t);
      aopts.regret = ropts;
      const LogisticModel full_model = fit_logistic(trial_ss.base, cfg.fit);
      const double full_kl = mean_kl(trial_ss.true_probs, full_model.predict_all(trial_ss.base.features()));
      for (Acquisition strategy : {Acquisition::TrueRegret, Acquisition::EstimatedRegret, Acquisition::Uniform}) {
        const ActiveLearningTrace trace = active_learning_run(trial_ss, strategy, trainer, aopts);
        out.fallback.merge(trace.fallback);
        for (std::size_t s = 0; s < trace.steps.size(); ++s) {
          const std::string key = std::string(acquisition_name(strategy)) + "@step" + std::to_string(s);
          record(key + ".mean_kl", trace.steps[s].mean_kl);
          record(key + ".excess_kl", trace.steps[s].mean_kl - full_kl);
        }
        record(std::string(acquisition_name(strategy)) + "@final.mean_kl", trace.steps.back().mean_kl);
      }
      break;
    }
  }
  return out;
}

/// Trials 1..n_trials, aggregated into median / IQR / range per metric.
/// Deterministic from the master seed for any thread count.
inline TrialResults run_trials(const SemiSyntheticDataset& ss, const TrialSettings& cfg, Experiment experiment) {
  if (cfg.n_trials < 1) throw Error(ErrorKind::InvalidConfig, "n_trials must be >= 1");
  TrialResults results;
  results.experiment = experiment;
  const CounterRng rng(cfg.master_seed);
  const TrainerHandle trainer = logistic_trainer(cfg.fit);

  if (experiment != Experiment::Active) {
    const RegretReport truth =
        true_regret(ss, trainer, cfg.K, rng.derive(detail::kTagTrialTrue, 0), RegretOptions{cfg.threads, cfg.fallback});
    results.true_regret = truth.regret;
    results.fallback.merge(truth.fallback);
  }

  std::vector<TrialOutput> outputs(static_cast<std::size_t>(cfg.n_trials));
  parallel_for(outputs.size(), cfg.threads, [&](std::size_t t) {
    const auto trial = static_cast<std::int64_t>(t) + 1;
    try {
      outputs[t] = run_single_trial(ss, cfg, experiment, trial, results.true_regret);
    } catch (const Error& e) {
      throw Error(e.kind(), "trial " + std::to_string(trial) + ": " + e.what());
    }
  });

  std::vector<std::string> order;
  std::vector<std::vector<double>> values;
  for (auto& out : outputs) {
    results.fallback.merge(out.fallback);
    for (auto& rec : out.records) {
      auto it = std::find(order.begin(), order.end(), rec.metric);
      if (it == order.end()) {
        order.push_back(rec.metric);
        values.emplace_back();
        it = order.end() - 1;
      }
      values[static_cast<std::size_t>(it - order.begin())].push_back(rec.value);
      results.records.push_back(rec);
    }
    results.points.insert(results.points.end(), out.points.begin(), out.points.end());
  }
  for (std::size_t m = 0; m < order.size(); ++m) results.summaries.emplace_back(order[m], summarize(values[m]));

  if (experiment == Experiment::TheoryVsActual) {
    const Index n = ss.base.n();
    std::vector<std::vector<double>> per_point(static_cast<std::size_t>(n));
    for (const auto& p : results.points) per_point[static_cast<std::size_t>(p.point)].push_back(p.estimated_regret);
    Vector medians(n);
    for (Index i = 0; i < n; ++i) {
      const TrialSummary s = summarize(per_point[static_cast<std::size_t>(i)]);
      results.per_point_estimates.emplace_back(i, s);
      medians(i) = s.median;
    }
    results.summaries.emplace_back("corr_median_estimated_vs_true",
                                   summarize({pearson(medians, results.true_regret)}));
  }
  return results;
}

inline const TrialSummary* find_summary(const TrialResults& r, std::string_view metric) {
  for (const auto& [name, s] : r.summaries) {
    if (name == metric) return &s;
  }
  return nullptr;
}

}  // namespace obsmult
