// Linear least squares under homogeneous linear inequality constraints:
//
//   minimize ||C x - d||^2   subject to   A x >= 0
#pragma once

#include <Eigen/Dense>

#include <vector>

namespace fodnet {

struct QpResult {
  Eigen::VectorXd x;
  double objective = 0.0;            // ||C x - d||^2
  int iterations = 0;
  bool converged = false;
  std::vector<int> active;           // working set at termination
};

/// Primal active-set solver. The working set holds constraints enforced as
/// equalities; a constraint is released when its multiplier goes negative
/// and added when it blocks a step, until the KKT conditions hold.
/// The object is immutable after construction and solve() is thread-safe.
class ConstrainedLeastSquares {
 public:
  /// Throws std::invalid_argument if C does not have full column rank.
  ConstrainedLeastSquares(Eigen::MatrixXd c, Eigen::MatrixXd a, int max_iterations = 500);

  /// `start` must be feasible (A start >= 0); pass an empty vector to use x = 0.
  QpResult solve(const Eigen::VectorXd& d, const Eigen::VectorXd& start = {}) const;

  const Eigen::MatrixXd& c() const { return c_; }
  const Eigen::MatrixXd& a() const { return a_; }

 private:
  Eigen::MatrixXd c_;
  Eigen::MatrixXd a_;
  Eigen::MatrixXd h_;                  // C^T C
  Eigen::LLT<Eigen::MatrixXd> h_llt_;
  int max_iterations_;
};

/// Reference solver: enumerates every subset of constraints held as
/// equalities and keeps the best feasible candidate. Exponential in the
/// number of constraints; only meant for tiny problems.
QpResult exhaustive_qp(const Eigen::MatrixXd& c, const Eigen::VectorXd& d, const Eigen::MatrixXd& a);

}  // namespace fodnet
