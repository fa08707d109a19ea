#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "obsmult/dataset.hpp"
#include "obsmult/error.hpp"

namespace obsmult {

/// 1 / (1 + e^-z) without overflow for any finite z. NaN propagates.
inline double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

/// log(1 + e^z), stable for large |z|.
inline double softplus(double z) {
  return z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
}

/// Probability clipping used by log_loss and mean_kl.
inline constexpr double kProbClip = 1e-12;

struct FitOptions {
  double ridge = 0.0;  ///< L2 coefficient on the sum-form loss: loss + ridge * |theta|^2 / 2
  int max_iters = 100;
  double grad_tol = 1e-8;
  bool include_intercept = true;
};

/// theta over the d features, plus a trailing intercept entry when
/// `includes_intercept` is set.
struct LogisticModel {
  Vector theta;
  bool includes_intercept = false;
  std::vector<std::string> feature_names;

  Index feature_dim() const { return theta.size() - (includes_intercept ? 1 : 0); }

  double logit(const Eigen::Ref<const Vector>& x) const {
    if (x.size() != feature_dim()) {
      throw Error(ErrorKind::DimensionMismatch, "feature vector has " + std::to_string(x.size()) +
                                                    " entries, model expects " + std::to_string(feature_dim()));
    }
    double z = x.dot(theta.head(feature_dim()));
    if (includes_intercept) z += theta(theta.size() - 1);
    return z;
  }

  /// Probabilities for every row of `x`.
  Vector predict_all(const Matrix& x) const {
    if (x.cols() != feature_dim()) {
      throw Error(ErrorKind::DimensionMismatch, "feature matrix has " + std::to_string(x.cols()) +
                                                    " columns, model expects " + std::to_string(feature_dim()));
    }
    Vector z = x * theta.head(feature_dim());
    if (includes_intercept) z.array() += theta(theta.size() - 1);
    return z.unaryExpr([](double v) { return sigmoid(v); });
  }
};

inline double predict_proba(const LogisticModel& model, const Eigen::Ref<const Vector>& x) {
  return sigmoid(model.logit(x));
}

/// The matrix the optimizer sees: features, with a trailing column of ones
/// when an intercept is fitted.
inline Matrix design_matrix(const Matrix& features, bool intercept) {
  if (!intercept) return features;
  Matrix out(features.rows(), features.cols() + 1);
  out.leftCols(features.cols()) = features;
  out.col(features.cols()).setOnes();
  return out;
}

// ---------------------------------------------------------------------------
// Objective

/// Sum-form logistic loss sum_i log(1 + exp(-y_i z_i)) + ridge |theta|^2 / 2.
inline double logistic_loss(const Matrix& design, const Vector& labels, const Vector& theta, double ridge) {
  const Vector z = design * theta;
  double loss = 0.0;
  for (Index i = 0; i < z.size(); ++i) loss += softplus(-labels(i) * z(i));
  return loss + 0.5 * ridge * theta.squaredNorm();
}

struct ObjectiveTerms {
  double loss = 0.0;
  Vector gradient;
  Matrix hessian;
};

/// Loss, gradient sum_i (sigma(z_i) - (y_i+1)/2) x_i + ridge theta, and
/// Hessian sum_i p_i (1 - p_i) x_i x_i^T + ridge I.
inline ObjectiveTerms logistic_objective(const Matrix& design, const Vector& labels, const Vector& theta,
                                         double ridge, bool with_hessian = true) {
  const Vector z = design * theta;
  Vector residual(z.size());
  Vector weight(z.size());
  ObjectiveTerms out;
  for (Index i = 0; i < z.size(); ++i) {
    const double p = sigmoid(z(i));
    residual(i) = p - 0.5 * (labels(i) + 1.0);
    weight(i) = p * (1.0 - p);
    out.loss += softplus(-labels(i) * z(i));
  }
  out.loss += 0.5 * ridge * theta.squaredNorm();
  out.gradient = design.transpose() * residual + ridge * theta;
  if (with_hessian) {
    out.hessian = design.transpose() * weight.asDiagonal() * design;
    out.hessian.diagonal().array() += ridge;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Newton fit

struct FitTrace {
  LogisticModel model;
  int iterations = 0;
  double gradient_norm = 0.0;  ///< infinity norm at the returned theta
  std::vector<double> losses;  ///< regularized loss after each accepted step, starting point first
};

inline constexpr double kDivergenceGuard = 1e6;

namespace detail {

inline bool full_column_rank(const Matrix& design) {
  Eigen::ColPivHouseholderQR<Matrix> qr(design);
  return qr.rank() == design.cols();
}

}  // namespace detail

/// Minimizes the regularized sum-form logistic loss by Newton's method with
/// Cholesky solves and step halving. `warm_start`, when non-empty, replaces
/// the zero starting point.
///
/// With ridge = 0 a finite minimizer exists only for full-rank, non-separable
/// data. Rank deficiency raises SingularHessian; separation (a parameter
/// vector that classifies every point with non-negative margin, or a norm
/// beyond the divergence guard) raises FitDiverged.
inline FitTrace fit_logistic_traced(const Dataset& data, const FitOptions& opts, const Vector& warm_start = {}) {
  if (!(opts.ridge >= 0.0) || !std::isfinite(opts.ridge)) {
    throw Error(ErrorKind::InvalidConfig, "ridge must be finite and non-negative");
  }
  if (opts.max_iters < 1) throw Error(ErrorKind::InvalidConfig, "max_iters must be >= 1");
  if (!(opts.grad_tol > 0.0)) throw Error(ErrorKind::InvalidConfig, "grad_tol must be > 0");

  const Matrix design = design_matrix(data.features(), opts.include_intercept);
  const Vector& y = data.labels();
  const Index p = design.cols();
  const bool unregularized = opts.ridge == 0.0;

  if (unregularized && !detail::full_column_rank(design)) {
    throw Error(ErrorKind::SingularHessian, "design matrix is rank deficient and ridge is 0");
  }

  Vector theta = Vector::Zero(p);
  if (warm_start.size() == p && warm_start.allFinite()) theta = warm_start;

  FitTrace trace;
  ObjectiveTerms terms = logistic_objective(design, y, theta, opts.ridge);
  trace.losses.push_back(terms.loss);

  auto finish = [&](int iterations) {
    if (unregularized) {
      const Vector margin = (design * theta).cwiseProduct(y);
      if (margin.minCoeff() >= 0.0 && margin.maxCoeff() > 0.0) {
        throw Error(ErrorKind::FitDiverged, "data is linearly separable; no finite minimizer");
      }
    }
    trace.model = LogisticModel{theta, opts.include_intercept, data.feature_names()};
    trace.iterations = iterations;
    trace.gradient_norm = terms.gradient.lpNorm<Eigen::Infinity>();
    return trace;
  };

  for (int iter = 0; iter < opts.max_iters; ++iter) {
    if (terms.gradient.lpNorm<Eigen::Infinity>() <= opts.grad_tol) return finish(iter);

    Eigen::LLT<Matrix> chol(terms.hessian);
    if (chol.info() != Eigen::Success) {
      throw Error(unregularized ? ErrorKind::FitDiverged : ErrorKind::SingularHessian,
                  "Hessian lost positive definiteness at iteration " + std::to_string(iter));
    }
    const Vector step = chol.solve(-terms.gradient);
    if (!step.allFinite()) throw Error(ErrorKind::FitDiverged, "non-finite Newton step");
    const double decrement = -terms.gradient.dot(step);

    // Once the Newton decrement is this small the loss can no longer resolve
    // progress, and the full step is well inside the quadratic region.
    const double quadratic_region = 1e-10 * std::max(1.0, std::abs(terms.loss));
    Vector candidate = theta + step;
    if (decrement > quadratic_region) {
      double scale = 1.0;
      bool accepted = false;
      for (int halving = 0; halving <= 30; ++halving, scale *= 0.5) {
        candidate = theta + scale * step;
        if (logistic_loss(design, y, candidate, opts.ridge) < terms.loss) {
          accepted = true;
          break;
        }
      }
      if (!accepted) {
        throw Error(ErrorKind::NoConvergence, "line search failed at iteration " + std::to_string(iter));
      }
    }
    theta = candidate;
    if (!theta.allFinite() || theta.norm() > kDivergenceGuard) {
      throw Error(ErrorKind::FitDiverged, "parameter norm exceeded divergence guard");
    }
    terms = logistic_objective(design, y, theta, opts.ridge);
    trace.losses.push_back(terms.loss);
  }
  if (terms.gradient.lpNorm<Eigen::Infinity>() <= opts.grad_tol) return finish(opts.max_iters);
  throw Error(ErrorKind::NoConvergence, "gradient norm " + io::format_double(terms.gradient.lpNorm<Eigen::Infinity>()) +
                                            " after " + std::to_string(opts.max_iters) + " iterations");
}

inline LogisticModel fit_logistic(const Dataset& data, const FitOptions& opts, const Vector& warm_start = {}) {
  return fit_logistic_traced(data, opts, warm_start).model;
}

// ---------------------------------------------------------------------------
// Metrics

/// Mean of -log(prob of the observed label), probabilities clipped to
/// [1e-12, 1 - 1e-12].
inline double log_loss(const Vector& probs, const Vector& labels) {
  if (probs.size() != labels.size()) throw Error(ErrorKind::LengthMismatch, "probs and labels differ in length");
  if (probs.size() == 0) return 0.0;
  double total = 0.0;
  for (Index i = 0; i < probs.size(); ++i) {
    const double p = std::clamp(probs(i), kProbClip, 1.0 - kProbClip);
    total -= labels(i) > 0 ? std::log(p) : std::log1p(-p);
  }
  return total / static_cast<double>(probs.size());
}

/// Mann-Whitney AUC: P(score+ > score-) + P(tie) / 2, via midranks.
inline double auc(const Vector& scores, const Vector& labels) {
  if (scores.size() != labels.size()) throw Error(ErrorKind::LengthMismatch, "scores and labels differ in length");
  const auto n = static_cast<std::size_t>(scores.size());
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return scores(static_cast<Index>(a)) < scores(static_cast<Index>(b));
  });

  double positive_rank_sum = 0.0;
  double positives = 0.0;
  for (std::size_t start = 0; start < n;) {
    std::size_t end = start;
    while (end < n && scores(static_cast<Index>(order[end])) == scores(static_cast<Index>(order[start]))) ++end;
    const double midrank = 0.5 * static_cast<double>(start + 1 + end);
    for (std::size_t k = start; k < end; ++k) {
      if (labels(static_cast<Index>(order[k])) > 0) {
        positive_rank_sum += midrank;
        positives += 1.0;
      }
    }
    start = end;
  }
  const double negatives = static_cast<double>(n) - positives;
  if (positives == 0.0 || negatives == 0.0) throw Error(ErrorKind::SingleClass, "AUC needs both classes");
  return (positive_rank_sum - positives * (positives + 1.0) / 2.0) / (positives * negatives);
}

/// Bernoulli KL divergence D(p* || p) with p clipped to [1e-12, 1 - 1e-12].
inline double bernoulli_kl(double true_p, double pred_p) {
  const double q = std::clamp(pred_p, kProbClip, 1.0 - kProbClip);
  double kl = 0.0;
  if (true_p > 0.0) kl += true_p * std::log(true_p / q);
  if (true_p < 1.0) kl += (1.0 - true_p) * std::log((1.0 - true_p) / (1.0 - q));
  return std::max(kl, 0.0);
}

inline Vector pointwise_kl(const Vector& true_probs, const Vector& pred_probs) {
  if (true_probs.size() != pred_probs.size()) {
    throw Error(ErrorKind::LengthMismatch, "true and predicted probabilities differ in length");
  }
  Vector out(true_probs.size());
  for (Index i = 0; i < out.size(); ++i) out(i) = bernoulli_kl(true_probs(i), pred_probs(i));
  return out;
}

inline double mean_kl(const Vector& true_probs, const Vector& pred_probs) {
  const Vector kl = pointwise_kl(true_probs, pred_probs);
  return kl.size() == 0 ? 0.0 : kl.mean();
}

// ---------------------------------------------------------------------------
// Trainers

/// Per-call adjustments a resampling driver may request from a trainer.
struct FitRequest {
  double extra_ridge = 0.0;  ///< added to the trainer's own ridge (separability fallback)
  const Vector* warm_start = nullptr;
};

/// A fitted model seen as a black box: batch prediction at arbitrary rows.
struct FittedPredictor {
  std::function<Vector(const Matrix&)> predict;
  Vector params;  ///< optional optimizer state usable as a warm start; empty if none
};

/// An opaque training procedure A(D). Must be deterministic and thread-safe;
/// predictions must lie in [0, 1].
struct TrainerHandle {
  std::string name;
  std::function<FittedPredictor(const Dataset&, const FitRequest&)> fit;
};

inline FittedPredictor logistic_predictor(LogisticModel model) {
  Vector params = model.theta;
  auto shared = std::make_shared<const LogisticModel>(std::move(model));
  return FittedPredictor{[shared](const Matrix& x) { return shared->predict_all(x); }, std::move(params)};
}

inline TrainerHandle logistic_trainer(FitOptions opts) {
  std::string name = "logistic(ridge=" + io::format_double(opts.ridge) +
                     ",intercept=" + (opts.include_intercept ? "true" : "false") + ")";
  return TrainerHandle{std::move(name), [opts](const Dataset& data, const FitRequest& req) {
                         FitOptions effective = opts;
                         effective.ridge += req.extra_ridge;
                         const Vector warm = req.warm_start ? *req.warm_start : Vector{};
                         return logistic_predictor(fit_logistic(data, effective, warm));
                       }};
}

/// Ignores the data and always predicts `p`.
inline TrainerHandle constant_trainer(double p) {
  return TrainerHandle{"constant(" + io::format_double(p) + ")", [p](const Dataset&, const FitRequest&) {
                         return FittedPredictor{[p](const Matrix& x) { return Vector::Constant(x.rows(), p); }, {}};
                       }};
}

/// Predicts (y + 1) / 2 for a query row equal to a training row (first match),
/// 0.5 for unseen rows. Its resampled predictions are exactly the resampled
/// labels, so its regret is the Bernoulli variance p (1 - p).
inline TrainerHandle echo_trainer() {
  return TrainerHandle{"echo", [](const Dataset& data, const FitRequest&) {
                         auto train = std::make_shared<const Dataset>(data);
                         return FittedPredictor{[train](const Matrix& x) {
                                                  Vector out = Vector::Constant(x.rows(), 0.5);
                                                  for (Index q = 0; q < x.rows(); ++q) {
                                                    for (Index i = 0; i < train->n(); ++i) {
                                                      if (train->features().row(i) == x.row(q)) {
                                                        out(q) = 0.5 * (train->labels()(i) + 1.0);
                                                        break;
                                                      }
                                                    }
                                                  }
                                                  return out;
                                                },
                                                {}};
                       }};
}

}  // namespace obsmult
