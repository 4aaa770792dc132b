#pragma once

#include "radsim/common.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <vector>

namespace radsim {

struct NnlsResult {
  Eigen::VectorXd x;
  /// ||A x - b||^2 of the system actually solved (augmented when regularized).
  double objective = 0.0;
  std::size_t iterations = 0;
  bool converged = true;
};

/// Lawson-Hanson active-set solver for min ||A x - b||^2 subject to x >= 0.
inline NnlsResult nnls(const Eigen::MatrixXd& A, const Eigen::VectorXd& b, std::size_t max_iterations = 0) {
  const Eigen::Index m = A.rows();
  const Eigen::Index n = A.cols();
  if (b.size() != m) throw Error(ErrorCode::kDimensionMismatch, "rhs length must equal the number of rows");
  if (max_iterations == 0) max_iterations = static_cast<std::size_t>(3 * n + 30);

  NnlsResult r;
  r.x = Eigen::VectorXd::Zero(n);
  std::vector<bool> passive(static_cast<std::size_t>(n), false);
  const double scale = std::max(1.0, A.cwiseAbs().maxCoeff() * std::max(1.0, b.cwiseAbs().maxCoeff()));
  const double tol = 10.0 * std::numeric_limits<double>::epsilon() * scale * static_cast<double>(std::max(m, n));

  const auto solve_passive = [&](Eigen::VectorXd& z) {
    std::vector<Eigen::Index> idx;
    for (Eigen::Index j = 0; j < n; ++j)
      if (passive[static_cast<std::size_t>(j)]) idx.push_back(j);
    z = Eigen::VectorXd::Zero(n);
    if (idx.empty()) return;
    Eigen::MatrixXd sub(m, static_cast<Eigen::Index>(idx.size()));
    for (std::size_t k = 0; k < idx.size(); ++k) sub.col(static_cast<Eigen::Index>(k)) = A.col(idx[k]);
    const Eigen::VectorXd zs = sub.colPivHouseholderQr().solve(b);
    for (std::size_t k = 0; k < idx.size(); ++k) z[idx[k]] = zs[static_cast<Eigen::Index>(k)];
  };

  Eigen::VectorXd w = A.transpose() * (b - A * r.x);
  while (true) {
    Eigen::Index best = -1;
    double best_w = tol;
    for (Eigen::Index j = 0; j < n; ++j)
      if (!passive[static_cast<std::size_t>(j)] && w[j] > best_w) {
        best_w = w[j];
        best = j;
      }
    if (best < 0) break;
    if (r.iterations++ >= max_iterations) {
      r.converged = false;
      break;
    }
    passive[static_cast<std::size_t>(best)] = true;

    Eigen::VectorXd z;
    for (;;) {
      solve_passive(z);
      bool feasible = true;
      for (Eigen::Index j = 0; j < n; ++j)
        if (passive[static_cast<std::size_t>(j)] && z[j] <= 0.0) feasible = false;
      if (feasible) break;
      // Step back toward the previous iterate until a passive variable hits zero.
      double alpha = 1.0;
      for (Eigen::Index j = 0; j < n; ++j)
        if (passive[static_cast<std::size_t>(j)] && z[j] <= 0.0) alpha = std::min(alpha, r.x[j] / (r.x[j] - z[j]));
      r.x += alpha * (z - r.x);
      for (Eigen::Index j = 0; j < n; ++j)
        if (passive[static_cast<std::size_t>(j)] && r.x[j] <= tol) {
          passive[static_cast<std::size_t>(j)] = false;
          r.x[j] = 0.0;
        }
    }
    r.x = z;
    w = A.transpose() * (b - A * r.x);
  }
  r.objective = (A * r.x - b).squaredNorm();
  return r;
}

/// min ||M f - s||^2 + beta ||f||^2 with f >= 0, solved as plain NNLS on the
/// augmented system [M; sqrt(beta) I] f = [s; 0].
inline NnlsResult nnls_l2(const Eigen::MatrixXd& M, const Eigen::VectorXd& s, double beta) {
  if (beta < 0.0) throw Error(ErrorCode::kInvalidArgument, "beta must be non-negative");
  if (s.size() != M.rows()) throw Error(ErrorCode::kDimensionMismatch, "signal length must equal design rows");
  if (beta == 0.0) return nnls(M, s);
  const Eigen::Index m = M.rows();
  const Eigen::Index n = M.cols();
  Eigen::MatrixXd A(m + n, n);
  A.topRows(m) = M;
  A.bottomRows(n) = std::sqrt(beta) * Eigen::MatrixXd::Identity(n, n);
  Eigen::VectorXd b = Eigen::VectorXd::Zero(m + n);
  b.head(m) = s;
  return nnls(A, b);
}

/// Gradient of the regularized objective, 2 (M^T (M f - s) + beta f).
inline Eigen::VectorXd nnls_l2_gradient(const Eigen::MatrixXd& M, const Eigen::VectorXd& s, double beta,
                                        const Eigen::VectorXd& f) {
  return 2.0 * (M.transpose() * (M * f - s) + beta * f);
}

}  // namespace radsim
