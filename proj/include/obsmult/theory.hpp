#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <limits>

#include "obsmult/dataset.hpp"
#include "obsmult/error.hpp"
#include "obsmult/glm.hpp"

namespace obsmult {

/// Closed-form regret approximation for logistic regression and the relative
/// error bound under which it holds: |Var(p_i) - Q_i| <= epsilon * Q_i when
/// epsilon < 1.
struct TheoryReport {
  Vector q;
  double lambda_min = 0.0;
  double lambda_max = 0.0;
  double x_max = 0.0;
  double x_min = 0.0;
  double theta_norm = 0.0;
  double epsilon = 0.0;
  bool bound_applies = false;
  double constant = 800.0;
};

inline constexpr double kEpsilonConstant = 800.0;

/// H = sum_i p_i (1 - p_i) x_i x_i^T at the model's parameters. An intercept
/// column, if the model has one, is treated as an ordinary feature.
inline Matrix compute_hessian(const LogisticModel& model, const Matrix& features) {
  if (features.cols() != model.feature_dim()) {
    throw Error(ErrorKind::DimensionMismatch, "features have " + std::to_string(features.cols()) +
                                                  " columns, model expects " + std::to_string(model.feature_dim()));
  }
  const Matrix design = design_matrix(features, model.includes_intercept);
  const Vector p = model.predict_all(features);
  const Vector w = p.cwiseProduct((1.0 - p.array()).matrix());
  const Matrix h = design.transpose() * w.asDiagonal() * design;
  return 0.5 * (h + h.transpose());
}

namespace detail {

inline Eigen::LLT<Matrix> factor_hessian(const Matrix& h) {
  Eigen::SelfAdjointEigenSolver<Matrix> eig(h, Eigen::EigenvaluesOnly);
  const double lmax = eig.eigenvalues().maxCoeff();
  const double lmin = eig.eigenvalues().minCoeff();
  if (!(lmin > static_cast<double>(h.rows()) * std::numeric_limits<double>::epsilon() * lmax)) {
    throw Error(ErrorKind::SingularHessian, "Hessian is not positive definite (lambda_min = " +
                                                io::format_double(lmin) + ")");
  }
  Eigen::LLT<Matrix> chol(h);
  if (chol.info() != Eigen::Success) throw Error(ErrorKind::SingularHessian, "Cholesky factorization failed");
  return chol;
}

}  // namespace detail

/// Q_i = p_i^2 (1 - p_i)^2 x_i^T H^{-1} x_i, using one Cholesky factor of H.
inline Vector q_values(const LogisticModel& model, const Matrix& features) {
  const Matrix h = compute_hessian(model, features);
  const auto chol = detail::factor_hessian(h);
  const Matrix design = design_matrix(features, model.includes_intercept);
  const Vector p = model.predict_all(features);
  // Columns of L^{-1} X^T; x^T H^{-1} x is the squared norm of each column.
  const Matrix solved = chol.matrixL().solve(design.transpose());
  Vector q(features.rows());
  for (Index i = 0; i < q.size(); ++i) {
    const double w = p(i) * (1.0 - p(i));
    q(i) = w * w * solved.col(i).squaredNorm();
  }
  return q;
}

struct EpsilonBound {
  double epsilon = 0.0;
  bool bound_applies = false;
};

/// epsilon = C d X_max (log(n X_max / X_min) + X_max |theta|) / sqrt(lambda_min).
inline double epsilon_formula(double constant, double d, double n, double x_max, double x_min, double theta_norm,
                              double lambda_min) {
  return constant * d * x_max * (std::log(n * x_max / x_min) + x_max * theta_norm) / std::sqrt(lambda_min);
}

inline TheoryReport theory_report(const LogisticModel& model, const Matrix& features,
                                  double constant = kEpsilonConstant) {
  if (!(constant > 0.0)) throw Error(ErrorKind::InvalidConfig, "epsilon constant must be > 0");
  const Matrix design = design_matrix(features, model.includes_intercept);
  const Vector norms = design.rowwise().norm();
  if (norms.size() == 0) throw Error(ErrorKind::EmptyDataset, "no points");
  if (norms.minCoeff() == 0.0) {
    Index where = 0;
    norms.minCoeff(&where);
    throw Error(ErrorKind::ZeroNormPoint, "point " + std::to_string(where) + " has zero norm");
  }

  TheoryReport r;
  const Matrix h = compute_hessian(model, features);
  detail::factor_hessian(h);
  Eigen::SelfAdjointEigenSolver<Matrix> eig(h, Eigen::EigenvaluesOnly);
  r.lambda_min = eig.eigenvalues().minCoeff();
  r.lambda_max = eig.eigenvalues().maxCoeff();
  r.q = q_values(model, features);
  r.x_max = norms.maxCoeff();
  r.x_min = norms.minCoeff();
  r.theta_norm = model.theta.norm();
  r.constant = constant;
  const auto n = static_cast<double>(features.rows());
  const auto d = static_cast<double>(design.cols());
  r.epsilon = epsilon_formula(constant, d, n, r.x_max, r.x_min, r.theta_norm, r.lambda_min);
  r.bound_applies = r.epsilon < 1.0 && features.rows() >= 2;
  return r;
}

inline EpsilonBound epsilon_bound(const LogisticModel& model, const Matrix& features,
                                  double constant = kEpsilonConstant) {
  const TheoryReport r = theory_report(model, features, constant);
  return {r.epsilon, r.bound_applies};
}

}  // namespace obsmult
