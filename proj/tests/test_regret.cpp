#include <gtest/gtest.h>

#include <cmath>
#include <functional>

#include "obsmult/regret.hpp"

using namespace obsmult;

namespace {

ErrorKind kind_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "no error thrown";
  return ErrorKind::IoError;
}

// Eight points in the plane whose classes interleave (not linearly separable).
Dataset eight_points() {
  Matrix x(8, 2);
  x << 1.0, 0.5, -0.3, 1.2, 0.8, -1.0, -1.1, -0.4, 0.2, 0.3, 1.5, 1.1, -0.7, 0.9, 0.4, -1.6;
  Vector y(8);
  y << 1, -1, -1, -1, 1, 1, 1, -1;
  return Dataset(x, y);
}

double sample_variance_bound(std::int64_t k) { return 0.25 * static_cast<double>(k) / static_cast<double>(k - 1); }

void expect_report_bounds(const RegretReport& r) {
  const double cap = r.estimator == RegretEstimator::Enumeration ? 0.25 : sample_variance_bound(r.n_resamples);
  EXPECT_GE(r.regret.minCoeff(), 0.0);
  EXPECT_LE(r.regret.maxCoeff(), cap);
  EXPECT_GE(r.mean_pred.minCoeff(), 0.0);
  EXPECT_LE(r.mean_pred.maxCoeff(), 1.0);
}

}  // namespace

TEST(EightPoints, NotSeparable) {
  EXPECT_NO_THROW(fit_logistic(eight_points(), {0.0, 100, 1e-8, true}));
}

TEST(EstimateRegret, ConstantTrainerHasZeroRegret) {
  const auto r = estimate_regret(eight_points(), constant_trainer(0.37), 50, 1);
  EXPECT_TRUE(r.regret.isZero(0.0));
  EXPECT_EQ(r.estimator, RegretEstimator::MonteCarlo);
  EXPECT_EQ(r.n_resamples, 50);
}

TEST(EstimateRegret, BoundsForSeveralTrainers) {
  const auto data = eight_points();
  for (const auto& trainer : {logistic_trainer({0.01, 100, 1e-8, true}), logistic_trainer({0.0, 100, 1e-8, false}),
                              echo_trainer(), constant_trainer(1.0)}) {
    for (std::int64_t k : {2, 3, 40}) {
      const auto r = estimate_regret(data, trainer, k, 5);
      expect_report_bounds(r);
    }
  }
}

TEST(EstimateRegret, Errors) {
  EXPECT_EQ(kind_of([] { estimate_regret(eight_points(), constant_trainer(0.5), 1, 0); }), ErrorKind::TooFewResamples);
  Matrix x(2, 1);
  x << -1, 1;
  const Dataset separable(x, (Vector(2) << -1, 1).finished());
  EXPECT_EQ(kind_of([&] { estimate_regret(separable, logistic_trainer({0.0, 100, 1e-8, false}), 10, 0); }),
            ErrorKind::InitialFitFailed);

  // A trainer that succeeds once and then always fails.
  auto calls = std::make_shared<std::atomic<int>>(0);
  TrainerHandle flaky{"flaky", [calls](const Dataset&, const FitRequest&) -> FittedPredictor {
                        if ((*calls)++ == 0) {
                          return FittedPredictor{[](const Matrix& q) { return Vector::Constant(q.rows(), 0.5); }, {}};
                        }
                        throw Error(ErrorKind::FitDiverged, "always");
                      }};
  EXPECT_EQ(kind_of([&] { estimate_regret(eight_points(), flaky, 4, 0); }), ErrorKind::RefitFallbackExhausted);

  TrainerHandle out_of_range{"bad", [](const Dataset&, const FitRequest&) {
                               return FittedPredictor{[](const Matrix& q) { return Vector::Constant(q.rows(), 1.5); }, {}};
                             }};
  EXPECT_EQ(kind_of([&] { estimate_regret(eight_points(), out_of_range, 4, 0); }), ErrorKind::ProbOutOfRange);
}

TEST(EstimateRegret, SeparableResamplesUseFallback) {
  // Six points; with ridge 0 several resampled label vectors are separable.
  Matrix x(6, 1);
  x << -1.5, -0.5, -0.2, 0.3, 0.6, 1.4;
  Vector y(6);
  y << -1, 1, -1, 1, -1, 1;
  const auto r = estimate_regret(Dataset(x, y), logistic_trainer({0.0, 100, 1e-8, false}), 200, 3);
  EXPECT_GT(r.fallback.refits, 0);
  EXPECT_GT(r.fallback.max_extra_ridge, 0.0);
  expect_report_bounds(r);
}

TEST(EstimateRegret, BitIdenticalAcrossThreadCounts) {
  const auto data = eight_points();
  const auto trainer = logistic_trainer({0.01, 100, 1e-8, true});
  const auto a = estimate_regret(data, trainer, 301, 42, {1, {}});
  const auto b = estimate_regret(data, trainer, 301, 42, {4, {}});
  const auto c = estimate_regret(data, trainer, 301, 42, {1, {}});
  EXPECT_EQ(a.regret, b.regret);
  EXPECT_EQ(a.mean_pred, b.mean_pred);
  EXPECT_EQ(a.regret, c.regret);
  EXPECT_NE(a.regret, estimate_regret(data, trainer, 301, 43).regret);
}

TEST(EstimateRegret, MatchesEnumerationOracle) {
  const auto data = eight_points();
  const auto trainer = logistic_trainer({0.01, 100, 1e-8, true});
  const auto base = trainer.fit(data, {}).predict(data.features());
  const auto exact = exact_regret_enumeration(data.features(), base, trainer);
  const auto mc = estimate_regret(data, trainer, 20000, 7);
  for (Index i = 0; i < data.n(); ++i) {
    EXPECT_LE(std::abs(mc.regret(i) - exact.regret(i)), 4.0 * mc.standard_error(i))
        << "point " << i << " mc " << mc.regret(i) << " exact " << exact.regret(i);
  }
}

TEST(EstimateRegret, EchoTrainerConvergesToBernoulliVariance) {
  // With the echo trainer the base predictions are the labels themselves, so
  // resampling is degenerate; use resample_regret with explicit probs.
  const auto data = eight_points();
  Vector probs(8);
  probs << 0.1, 0.5, 0.9, 0.3, 0.7, 0.02, 0.6, 0.45;
  const auto r = resample_regret(data, probs, data.features(), probs, echo_trainer(), 40000, 3);
  for (Index i = 0; i < 8; ++i) {
    EXPECT_LE(std::abs(r.regret(i) - probs(i) * (1 - probs(i))), 4.0 * r.standard_error(i) + 1e-12);
  }
}

TEST(TrueRegret, DeterministicLabelsGiveZero) {
  const auto data = eight_points();
  SemiSyntheticDataset ss{data, ((data.labels().array() + 1.0) / 2.0).matrix(), LogisticModel{}, {0, 0}, 0.0};
  const auto r = true_regret(ss, logistic_trainer({0.1, 100, 1e-8, true}), 20, 9);
  EXPECT_LE(r.regret.maxCoeff(), 1e-24);
  EXPECT_EQ(r.estimator, RegretEstimator::TrueResample);
}

TEST(TrueRegret, UsesTrueProbabilities) {
  const auto data = eight_points();
  Vector probs(8);
  probs << 0.1, 0.5, 0.9, 0.3, 0.7, 0.02, 0.6, 0.45;
  SemiSyntheticDataset ss{data, probs, LogisticModel{}, {0, 0}, 0.0};
  const auto trainer = logistic_trainer({0.01, 100, 1e-8, true});
  const auto r = true_regret(ss, trainer, 500, 4);
  const auto direct = resample_regret(data, probs, data.features(), r.base_pred, trainer, 500, 4,
                                      trainer.fit(data, {}).params);
  EXPECT_EQ(r.regret, direct.regret);
  expect_report_bounds(r);
}

TEST(BootstrapRegret, IdenticalRowsGiveZero) {
  Matrix x = Matrix::Constant(10, 2, 0.7);
  const Dataset data(x, Vector::Ones(10));
  const auto r = bootstrap_regret(data, logistic_trainer({0.5, 100, 1e-8, true}), 30, 2);
  EXPECT_TRUE(r.regret.isZero(0.0));
  EXPECT_EQ(r.estimator, RegretEstimator::Bootstrap);
}

TEST(BootstrapRegret, DiffersFromLabelResampling) {
  const RawProblem raw = two_cluster_problem({100, 4.0, 1.0}, 6);
  const auto ss = make_semisynthetic(raw.features, raw.raw_labels, {}, {6, 0});
  const auto trainer = logistic_trainer({0.0, 100, 1e-8, true});
  const auto boot = bootstrap_regret(ss.base, trainer, 300, 1);
  const auto mc = estimate_regret(ss.base, trainer, 300, 1);
  expect_report_bounds(boot);
  EXPECT_GT((boot.regret - mc.regret).cwiseAbs().maxCoeff(), 0.0);
}

TEST(Enumeration, EchoIdentityIsExact) {
  const CounterRng rng(31);
  for (Index n : {1, 5, 12}) {
    Matrix x(n, 1);
    Vector p(n);
    for (Index i = 0; i < n; ++i) {
      x(i, 0) = static_cast<double>(i);
      p(i) = rng.uniform(RngDomain::Features, 0, static_cast<std::uint64_t>(i));
    }
    const auto r = exact_regret_enumeration(x, p, echo_trainer());
    EXPECT_NEAR(r.weight_total, 1.0, 1e-12);
    for (Index i = 0; i < n; ++i) EXPECT_NEAR(r.regret(i), p(i) * (1 - p(i)), 1e-12);
  }
}

TEST(Enumeration, DegenerateProbabilities) {
  const auto data = eight_points();
  Vector p(8);
  p << 1, 0, 0, 1, 1, 0, 1, 0;
  const auto r = exact_regret_enumeration(data.features(), p, logistic_trainer({0.01, 100, 1e-8, true}));
  EXPECT_EQ(r.n_resamples, 1);
  EXPECT_TRUE(r.regret.isZero(0.0));
  EXPECT_EQ(r.weight_total, 1.0);
}

TEST(Enumeration, Errors) {
  EXPECT_EQ(kind_of([] { exact_regret_enumeration(Matrix::Ones(23, 1), Vector::Constant(23, 0.5), echo_trainer()); }),
            ErrorKind::TooLarge);
  EXPECT_EQ(kind_of([] { exact_regret_enumeration(Matrix::Ones(3, 1), Vector::Constant(3, 1.2), echo_trainer()); }),
            ErrorKind::ProbOutOfRange);
  EXPECT_EQ(kind_of([] { exact_regret_enumeration(Matrix::Ones(3, 1), Vector::Constant(2, 0.5), echo_trainer()); }),
            ErrorKind::LengthMismatch);
}

TEST(Enumeration, ThreadCountDoesNotChangeResult) {
  Matrix x(12, 1);
  for (Index i = 0; i < 12; ++i) x(i, 0) = -1.5 + 0.27 * static_cast<double>(i);
  const auto trainer = logistic_trainer({0.01, 100, 1e-8, false});
  const Vector p = trainer.fit(Dataset(x, (Vector(12) << 1, -1, -1, 1, -1, 1, 1, -1, 1, 1, -1, 1).finished()), {})
                       .predict(x);
  const auto a = exact_regret_enumeration(x, p, trainer, {1, {}});
  const auto b = exact_regret_enumeration(x, p, trainer, {3, {}});
  EXPECT_EQ(a.regret, b.regret);
  EXPECT_EQ(a.n_resamples, 4096);
}

// Enumeration is the K -> infinity limit of Monte Carlo resampling.
TEST(Enumeration, MonteCarloConvergesToIt) {
  Matrix x(6, 1);
  x << -1.2, -0.6, -0.1, 0.4, 0.9, 1.6;
  const Dataset data(x, (Vector(6) << -1, 1, -1, 1, -1, 1).finished());
  const auto trainer = logistic_trainer({0.01, 100, 1e-8, false});
  const Vector p = trainer.fit(data, {}).predict(x);
  const auto exact = exact_regret_enumeration(x, p, trainer);
  const auto mc = estimate_regret(data, trainer, 100000, 11);
  for (Index i = 0; i < 6; ++i) {
    EXPECT_LE(std::abs(mc.regret(i) - exact.regret(i)), 3.0 * mc.standard_error(i)) << "point " << i;
  }
}

TEST(PointDeviations, Values) {
  const auto r = point_deviations(Vector::Constant(1, 0.3), Vector::Constant(1, 0.5));
  EXPECT_NEAR(r.e(0), 0.2, 1e-15);
  EXPECT_NEAR(r.s(0), 0.04, 1e-15);
  const Vector a = (Vector(3) << 0.1, 0.9, 0.5).finished();
  const Vector b = (Vector(3) << 0.4, 0.2, 0.5).finished();
  EXPECT_TRUE(point_deviations(a, a).e.isZero(0.0));
  EXPECT_EQ(point_deviations(a, b).e, point_deviations(b, a).e);
  EXPECT_EQ(point_deviations(a, b).s, point_deviations(a, b).e.cwiseAbs2());
  EXPECT_EQ(kind_of([&] { point_deviations(a, Vector::Ones(2)); }), ErrorKind::LengthMismatch);
}
