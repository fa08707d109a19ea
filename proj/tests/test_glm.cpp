#include <gtest/gtest.h>

#include <cmath>
#include <functional>

#include "obsmult/glm.hpp"
#include "obsmult/semisynthetic.hpp"

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

// Central finite differences of the loss, as an oracle for the gradient.
Vector fd_gradient(const Matrix& design, const Vector& y, const Vector& theta, double ridge) {
  Vector g(theta.size());
  for (Index j = 0; j < theta.size(); ++j) {
    const double h = 1e-5 * std::max(1.0, std::abs(theta(j)));
    Vector plus = theta, minus = theta;
    plus(j) += h;
    minus(j) -= h;
    g(j) = (logistic_loss(design, y, plus, ridge) - logistic_loss(design, y, minus, ridge)) / (2 * h);
  }
  return g;
}

double rel_error(const Vector& a, const Vector& b) {
  return (a - b).norm() / std::max(1e-12, std::max(a.norm(), b.norm()));
}

SemiSyntheticDataset gaussian_problem(Index n, const Vector& theta, std::uint64_t seed) {
  const Matrix x = sample_features(n, theta.size(), FeatureDistribution::StandardNormal, seed);
  return semisynthetic_from_model(x, LogisticModel{theta, false, {}}, {seed, 0});
}

}  // namespace

TEST(Sigmoid, Values) {
  EXPECT_EQ(sigmoid(0.0), 0.5);
  EXPECT_NEAR(sigmoid(std::log(3.0)), 0.75, 1e-15);
  EXPECT_EQ(sigmoid(700.0), 1.0);
  EXPECT_GT(sigmoid(-700.0), 0.0);
  EXPECT_TRUE(std::isfinite(sigmoid(-700.0)));
  EXPECT_TRUE(std::isnan(sigmoid(std::nan(""))));
  for (double z : {-30.0, -3.1, -0.2, 0.7, 5.0, 36.0}) EXPECT_NEAR(sigmoid(-z), 1.0 - sigmoid(z), 1e-15);
}

TEST(PredictProba, Basics) {
  LogisticModel zero{Vector::Zero(3), false, {}};
  EXPECT_EQ(predict_proba(zero, Vector::Constant(3, 7.0)), 0.5);
  LogisticModel m{Vector::Constant(1, std::log(3.0)), false, {}};
  EXPECT_NEAR(predict_proba(m, Vector::Ones(1)), 0.75, 1e-15);
  EXPECT_EQ(kind_of([&] { predict_proba(m, Vector::Ones(2)); }), ErrorKind::DimensionMismatch);

  LogisticModel with_intercept{(Vector(3) << 0.3, -1.2, 0.5).finished(), true, {}};
  const Matrix x = sample_features(50, 2, FeatureDistribution::StandardNormal, 3);
  const Vector all = with_intercept.predict_all(x);
  for (Index i = 0; i < x.rows(); ++i) {
    const double direct = sigmoid(x(i, 0) * 0.3 - 1.2 * x(i, 1) + 0.5);
    EXPECT_NEAR(predict_proba(with_intercept, x.row(i).transpose()), direct, 1e-15);
    EXPECT_NEAR(all(i), direct, 1e-15);
  }
}

TEST(FitLogistic, SymmetricLabelsGiveZero) {
  Matrix x = Matrix::Ones(6, 1);
  Vector y(6);
  y << 1, -1, 1, -1, 1, -1;
  const auto model = fit_logistic(Dataset(x, y), {0.0, 100, 1e-8, false});
  EXPECT_NEAR(model.theta(0), 0.0, 1e-12);
}

TEST(FitLogistic, SeparableDiverges) {
  Matrix x(2, 1);
  x << -1, 1;
  Vector y(2);
  y << -1, 1;
  EXPECT_EQ(kind_of([&] { fit_logistic(Dataset(x, y), {0.0, 100, 1e-8, false}); }), ErrorKind::FitDiverged);
  EXPECT_EQ(kind_of([&] { fit_logistic(Dataset(x, y), {0.0, 100, 1e-8, true}); }), ErrorKind::FitDiverged);
  // Any ridge makes the minimizer finite.
  const auto m = fit_logistic(Dataset(x, y), {1e-3, 100, 1e-8, false});
  EXPECT_GT(m.theta(0), 0.0);
}

TEST(FitLogistic, RankDeficientIsSingular) {
  Matrix x(4, 2);
  x << 1, 2, 2, 4, -1, -2, 3, 6;
  Vector y(4);
  y << 1, -1, 1, -1;
  EXPECT_EQ(kind_of([&] { fit_logistic(Dataset(x, y), {0.0, 100, 1e-8, false}); }), ErrorKind::SingularHessian);
  EXPECT_NO_THROW(fit_logistic(Dataset(x, y), {0.1, 100, 1e-8, false}));
}

TEST(FitLogistic, NoConvergenceWhenIterationsExhausted) {
  const auto ss = gaussian_problem(200, (Vector(2) << 1.0, -0.5).finished(), 4);
  EXPECT_EQ(kind_of([&] { fit_logistic(ss.base, {0.0, 1, 1e-8, false}); }), ErrorKind::NoConvergence);
}

TEST(FitLogistic, InvalidOptions) {
  const Dataset d(Matrix::Ones(2, 1), (Vector(2) << 1, -1).finished());
  EXPECT_EQ(kind_of([&] { fit_logistic(d, {-1.0, 100, 1e-8, false}); }), ErrorKind::InvalidConfig);
  EXPECT_EQ(kind_of([&] { fit_logistic(d, {0.0, 0, 1e-8, false}); }), ErrorKind::InvalidConfig);
  EXPECT_EQ(kind_of([&] { fit_logistic(d, {0.0, 10, 0.0, false}); }), ErrorKind::InvalidConfig);
}

TEST(FitLogistic, RecoversGeneratingParameters) {
  const Vector truth = (Vector(2) << 1.5, -0.7).finished();
  const auto ss = gaussian_problem(50000, truth, 12);
  const auto model = fit_logistic(ss.base, {0.0, 100, 1e-8, false});
  EXPECT_NEAR(model.theta(0), 1.5, 0.05);
  EXPECT_NEAR(model.theta(1), -0.7, 0.05);
}

TEST(FitLogistic, OptimalityAndFiniteDifferences) {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    for (double ridge : {0.0, 0.3}) {
      for (bool intercept : {false, true}) {
        const auto ss = gaussian_problem(300, (Vector(3) << 0.8, -0.4, 0.2).finished(), seed);
        const FitOptions opts{ridge, 100, 1e-8, intercept};
        const FitTrace trace = fit_logistic_traced(ss.base, opts);
        const Matrix design = design_matrix(ss.base.features(), intercept);
        const ObjectiveTerms t = logistic_objective(design, ss.base.labels(), trace.model.theta, ridge);
        EXPECT_LE(t.gradient.lpNorm<Eigen::Infinity>(), 1e-8);
        EXPECT_LE(trace.gradient_norm, 1e-8);
        // Gradient at the optimum is ~0, so compare the Hessian-vector action
        // there and the raw gradient at perturbed points.
        for (int k = 0; k < 3; ++k) {
          Vector theta = trace.model.theta;
          theta(k) += 0.5;
          const Vector analytic = logistic_objective(design, ss.base.labels(), theta, ridge, false).gradient;
          EXPECT_LE(rel_error(analytic, fd_gradient(design, ss.base.labels(), theta, ridge)), 1e-5);
        }
        // Monotone loss over accepted Newton steps.
        for (std::size_t s = 1; s < trace.losses.size(); ++s) {
          EXPECT_LE(trace.losses[s], trace.losses[s - 1] * (1 + 1e-14));
        }
      }
    }
  }
}

TEST(FitLogistic, GradientMatchesFiniteDifferencesAtRandomTheta) {
  const auto ss = gaussian_problem(400, (Vector(2) << 0.5, 1.0).finished(), 8);
  const Matrix design = design_matrix(ss.base.features(), true);
  const CounterRng rng(77);
  for (std::uint32_t k = 0; k < 100; ++k) {
    Vector theta(3);
    for (Index j = 0; j < 3; ++j) theta(j) = 2.0 * rng.normal(RngDomain::Features, k, static_cast<std::uint64_t>(j));
    const Vector analytic = logistic_objective(design, ss.base.labels(), theta, 0.1, false).gradient;
    EXPECT_LE(rel_error(analytic, fd_gradient(design, ss.base.labels(), theta, 0.1)), 1e-5) << "draw " << k;
  }
}

TEST(FitLogistic, LabelFlipAntisymmetry) {
  const auto ss = gaussian_problem(500, (Vector(2) << 0.9, -0.3).finished(), 21);
  const FitOptions opts{0.0, 100, 1e-8, true};
  const auto a = fit_logistic(ss.base, opts);
  const auto b = fit_logistic(ss.base.with_labels(-ss.base.labels()), opts);
  EXPECT_LE((a.theta + b.theta).cwiseAbs().maxCoeff(), 10 * opts.grad_tol);
}

TEST(FitLogistic, WarmStartReachesSameOptimum) {
  const auto ss = gaussian_problem(300, (Vector(2) << 0.9, -0.3).finished(), 22);
  const FitOptions opts{0.0, 100, 1e-8, true};
  const auto cold = fit_logistic(ss.base, opts);
  const auto warm = fit_logistic(ss.base, opts, (cold.theta.array() + 0.3).matrix());
  EXPECT_LE((cold.theta - warm.theta).cwiseAbs().maxCoeff(), 1e-7);
}

TEST(LogLoss, Values) {
  EXPECT_LE(log_loss(Vector::Ones(1), Vector::Ones(1)), 1e-11);
  EXPECT_NEAR(log_loss(Vector::Constant(2, 0.5), (Vector(2) << 1, -1).finished()), std::log(2.0), 1e-15);
  EXPECT_EQ(kind_of([&] { log_loss(Vector::Ones(2), Vector::Ones(3)); }), ErrorKind::LengthMismatch);
  EXPECT_TRUE(std::isfinite(log_loss(Vector::Zero(1), Vector::Ones(1))));
}

TEST(LogLoss, EqualsThetaFormPerPoint) {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const auto ss = gaussian_problem(100, (Vector(2) << 1.2, -0.6).finished(), seed);
    LogisticModel m{(Vector(2) << 0.7, 0.2).finished(), false, {}};
    const double via_probs = log_loss(m.predict_all(ss.base.features()), ss.base.labels());
    double theta_form = 0.0;
    for (Index i = 0; i < ss.base.n(); ++i) {
      theta_form += std::log(1.0 + std::exp(-ss.base.labels()(i) * ss.base.features().row(i).dot(m.theta)));
    }
    EXPECT_NEAR(via_probs, theta_form / ss.base.n(), 1e-12);
  }
}

TEST(Auc, Values) {
  EXPECT_EQ(auc((Vector(4) << 0.1, 0.2, 0.8, 0.9).finished(), (Vector(4) << -1, -1, 1, 1).finished()), 1.0);
  EXPECT_EQ(auc(Vector::Constant(4, 0.3), (Vector(4) << -1, 1, 1, -1).finished()), 0.5);
  EXPECT_EQ(kind_of([&] { auc(Vector::Ones(3), Vector::Ones(3)); }), ErrorKind::SingleClass);
  EXPECT_EQ(kind_of([&] { auc(Vector::Ones(3), Vector::Ones(2)); }), ErrorKind::LengthMismatch);
}

TEST(Auc, MatchesPairwiseBruteForce) {
  const CounterRng rng(5);
  for (std::uint32_t trial = 0; trial < 50; ++trial) {
    const Index n = 2 + static_cast<Index>(rng.below(199, RngDomain::Features, trial, 0));
    Vector s(n), y(n);
    for (Index i = 0; i < n; ++i) {
      // Coarse scores so ties occur.
      s(i) = std::floor(10.0 * rng.uniform(RngDomain::Features, trial, 10 + static_cast<std::uint64_t>(i))) / 10.0;
      y(i) = i == 0 ? 1.0 : i == 1 ? -1.0 : (rng.uniform(RngDomain::LabelDraw, trial, static_cast<std::uint64_t>(i)) < 0.4 ? 1.0 : -1.0);
    }
    double wins = 0.0, pairs = 0.0;
    for (Index a = 0; a < n; ++a) {
      for (Index b = 0; b < n; ++b) {
        if (y(a) > 0 && y(b) < 0) {
          pairs += 1.0;
          wins += s(a) > s(b) ? 1.0 : s(a) == s(b) ? 0.5 : 0.0;
        }
      }
    }
    EXPECT_NEAR(auc(s, y), wins / pairs, 1e-12);
  }
}

TEST(MeanKl, Values) {
  const Vector p = (Vector(3) << 0.1, 0.5, 0.97).finished();
  EXPECT_EQ(mean_kl(p, p), 0.0);
  EXPECT_NEAR(mean_kl(Vector::Ones(1), Vector::Constant(1, 0.5)), std::log(2.0), 1e-15);
  // 0.8 ln 1.6 + 0.2 ln 0.4 evaluated directly.
  EXPECT_NEAR(mean_kl(Vector::Constant(1, 0.8), Vector::Constant(1, 0.5)), 0.19274475702175753, 1e-15);
  EXPECT_EQ(kind_of([&] { mean_kl(p, Vector::Ones(2)); }), ErrorKind::LengthMismatch);
  EXPECT_TRUE(std::isfinite(mean_kl(Vector::Ones(1), Vector::Zero(1))));
}

TEST(MeanKl, NonNegativeProperty) {
  const CounterRng rng(6);
  for (std::uint64_t i = 0; i < 2000; ++i) {
    const double a = rng.uniform(RngDomain::Features, 0, i);
    const double b = rng.uniform(RngDomain::Features, 1, i);
    EXPECT_GE(bernoulli_kl(a, b), 0.0);
  }
}

TEST(Trainers, ContractShapes) {
  const auto ss = gaussian_problem(20, (Vector(2) << 0.5, 0.5).finished(), 2);
  const auto constant = constant_trainer(0.3).fit(ss.base, {});
  EXPECT_EQ(constant.predict(ss.base.features()), Vector::Constant(20, 0.3));
  const auto echo = echo_trainer().fit(ss.base, {});
  EXPECT_EQ(echo.predict(ss.base.features()), ((ss.base.labels().array() + 1.0) / 2.0).matrix());
  const auto logistic = logistic_trainer({0.01, 100, 1e-8, true});
  const Vector a = logistic.fit(ss.base, {}).predict(ss.base.features());
  const Vector b = logistic.fit(ss.base, {}).predict(ss.base.features());
  EXPECT_EQ(a, b);
  EXPECT_TRUE((a.array() > 0).all() && (a.array() < 1).all());
}
