#include "fodnet/qp.hpp"

#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>

namespace fodnet {

ConstrainedLeastSquares::ConstrainedLeastSquares(Eigen::MatrixXd c, Eigen::MatrixXd a, int max_iterations)
    : c_(std::move(c)), a_(std::move(a)), max_iterations_(max_iterations) {
  if (a_.cols() != c_.cols()) throw std::invalid_argument("constraint matrix column count differs from system matrix");
  h_ = c_.transpose() * c_;
  h_llt_.compute(h_);
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(c_);
  qr.setThreshold(1e-10);
  if (h_llt_.info() != Eigen::Success || qr.rank() < c_.cols())
    throw std::invalid_argument("system matrix is rank deficient (rank " + std::to_string(qr.rank()) + " < " +
                                std::to_string(c_.cols()) + ")");
}

QpResult ConstrainedLeastSquares::solve(const Eigen::VectorXd& d, const Eigen::VectorXd& start) const {
  const Eigen::Index n = c_.cols();
  const Eigen::VectorXd ctd = c_.transpose() * d;
  const double grad_scale = 1.0 + ctd.norm();
  QpResult res;
  Eigen::VectorXd x = start.size() == n ? start : Eigen::VectorXd::Zero(n);
  std::vector<int> working;
  std::vector<char> in_working(std::size_t(a_.rows()), 0);

  for (int it = 0; it < max_iterations_; ++it) {
    res.iterations = it + 1;
    const Eigen::VectorXd g = h_ * x - ctd;
    const Eigen::Index w = Eigen::Index(working.size());

    Eigen::VectorXd p;
    Eigen::HouseholderQR<Eigen::MatrixXd> qr;
    if (w == 0) {
      p = -h_llt_.solve(g);
    } else {
      Eigen::MatrixXd awt(n, w);
      for (Eigen::Index k = 0; k < w; ++k) awt.col(k) = a_.row(working[std::size_t(k)]).transpose();
      qr.compute(awt);
      const Eigen::MatrixXd q = qr.householderQ();
      if (w >= n) {
        p = Eigen::VectorXd::Zero(n);
      } else {
        const Eigen::MatrixXd z = q.rightCols(n - w);
        const Eigen::MatrixXd zhz = z.transpose() * h_ * z;
        p = z * zhz.llt().solve(-(z.transpose() * g));
      }
    }

    if (p.norm() <= 1e-12 * (1.0 + x.norm())) {
      if (w == 0) {
        res.converged = true;
        break;
      }
      // Multipliers: A_W^T lambda = H x - C^T d.
      const Eigen::VectorXd rhs = g + h_ * p;
      const Eigen::VectorXd lambda = qr.solve(rhs);
      Eigen::Index worst = 0;
      const double min_lambda = lambda.minCoeff(&worst);
      if (min_lambda >= -1e-12 * grad_scale) {
        res.converged = true;
        break;
      }
      in_working[std::size_t(working[std::size_t(worst)])] = 0;
      working.erase(working.begin() + worst);
      continue;
    }

    // Longest feasible step along p, capped at 1.
    double alpha = 1.0;
    int blocking = -1;
    const Eigen::VectorXd ap = a_ * p;
    const Eigen::VectorXd ax = a_ * x;
    const double ap_tol = 1e-14 * (1.0 + p.norm()) * (1.0 + a_.rowwise().norm().maxCoeff());
    for (Eigen::Index i = 0; i < a_.rows(); ++i) {
      if (in_working[std::size_t(i)] || ap[i] >= -ap_tol) continue;
      const double step = std::max(0.0, ax[i]) / -ap[i];
      if (step < alpha) {
        alpha = step;
        blocking = int(i);
      }
    }
    x += alpha * p;
    if (blocking >= 0) {
      working.push_back(blocking);
      in_working[std::size_t(blocking)] = 1;
    }
  }
  res.x = x;
  res.objective = (c_ * x - d).squaredNorm();
  res.active = working;
  return res;
}

QpResult exhaustive_qp(const Eigen::MatrixXd& c, const Eigen::VectorXd& d, const Eigen::MatrixXd& a) {
  const Eigen::Index n = c.cols();
  const Eigen::Index q = a.rows();
  if (q > 24) throw std::invalid_argument("exhaustive_qp: too many constraints");
  QpResult best;
  best.objective = std::numeric_limits<double>::infinity();
  const double feas_tol = 1e-9 * (1.0 + d.norm());
  for (std::uint32_t mask = 0; mask < (1u << q); ++mask) {
    std::vector<int> set;
    for (Eigen::Index i = 0; i < q; ++i)
      if (mask & (1u << i)) set.push_back(int(i));
    Eigen::VectorXd x;
    if (set.empty()) {
      x = c.colPivHouseholderQr().solve(d);
    } else {
      Eigen::MatrixXd as(Eigen::Index(set.size()), n);
      for (std::size_t k = 0; k < set.size(); ++k) as.row(Eigen::Index(k)) = a.row(set[k]);
      Eigen::JacobiSVD<Eigen::MatrixXd> svd(as, Eigen::ComputeFullV);
      svd.setThreshold(1e-10);
      const Eigen::Index rank = svd.rank();
      if (rank >= n) {
        x = Eigen::VectorXd::Zero(n);
      } else {
        const Eigen::MatrixXd z = svd.matrixV().rightCols(n - rank);
        const Eigen::VectorXd y = (c * z).colPivHouseholderQr().solve(d);
        x = z * y;
      }
    }
    if ((a * x).minCoeff() < -feas_tol) continue;
    const double obj = (c * x - d).squaredNorm();
    if (obj < best.objective) {
      best.objective = obj;
      best.x = x;
      best.active = set;
    }
  }
  best.converged = std::isfinite(best.objective);
  return best;
}

}  // namespace fodnet
