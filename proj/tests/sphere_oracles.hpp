// Test-only helpers: sphere samplings and quadratures that do not share code
// with the library under test.
#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <numbers>
#include <random>
#include <vector>

namespace oracle {

/// Fibonacci lattice on the full sphere.
inline Eigen::Matrix<double, Eigen::Dynamic, 3> fibonacci_sphere(int n) {
  Eigen::Matrix<double, Eigen::Dynamic, 3> d(n, 3);
  const double golden = std::numbers::pi * (3.0 - std::sqrt(5.0));
  for (int i = 0; i < n; ++i) {
    const double z = 1.0 - (2.0 * i + 1.0) / n;
    const double r = std::sqrt(1.0 - z * z);
    d.row(i) << r * std::cos(golden * i), r * std::sin(golden * i), z;
  }
  return d;
}

/// Fibonacci start refined by Coulomb repulsion on the full sphere.
inline Eigen::Matrix<double, Eigen::Dynamic, 3> repelled_sphere(int n, int iterations = 500) {
  auto d = fibonacci_sphere(n);
  for (int it = 0; it < iterations; ++it) {
    Eigen::Matrix<double, Eigen::Dynamic, 3> f = Eigen::Matrix<double, Eigen::Dynamic, 3>::Zero(n, 3);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        if (i == j) continue;
        const Eigen::RowVector3d r = d.row(i) - d.row(j);
        f.row(i) += r / std::pow(r.norm(), 3);
      }
    const double step = 0.1 / n;
    for (int i = 0; i < n; ++i) d.row(i) = (d.row(i) + step * f.row(i)).normalized();
  }
  return d;
}

inline Eigen::Vector3d random_unit(std::mt19937_64& rng) {
  std::normal_distribution<double> g;
  Eigen::Vector3d v(g(rng), g(rng), g(rng));
  return v.normalized();
}

/// Gauss-Legendre nodes/weights on [-1, 1] by Newton iteration.
inline void gauss_legendre(int n, std::vector<double>& x, std::vector<double>& w) {
  x.assign(n, 0.0);
  w.assign(n, 0.0);
  for (int i = 0; i < n; ++i) {
    double t = std::cos(std::numbers::pi * (i + 0.75) / (n + 0.5));
    for (int it = 0; it < 100; ++it) {
      double p0 = 1.0, p1 = t;
      for (int k = 2; k <= n; ++k) {
        const double p2 = ((2.0 * k - 1.0) * t * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
      }
      const double dp = n * (t * p1 - p0) / (t * t - 1.0);
      const double dt = p1 / dp;
      t -= dt;
      if (std::abs(dt) < 1e-16) break;
    }
    double p0 = 1.0, p1 = t;
    for (int k = 2; k <= n; ++k) {
      const double p2 = ((2.0 * k - 1.0) * t * p1 - (k - 1.0) * p0) / k;
      p0 = p1;
      p1 = p2;
    }
    const double dp = n * (t * p1 - p0) / (t * t - 1.0);
    x[i] = t;
    w[i] = 2.0 / ((1.0 - t * t) * dp * dp);
  }
}

/// Product quadrature on the sphere, exact for polynomials of degree < 2 * n.
struct SphereQuadrature {
  Eigen::Matrix<double, Eigen::Dynamic, 3> dirs;
  Eigen::VectorXd weights;
};

inline SphereQuadrature product_quadrature(int n) {
  std::vector<double> x, w;
  gauss_legendre(n, x, w);
  const int nphi = 2 * n;
  SphereQuadrature q;
  q.dirs.resize(n * nphi, 3);
  q.weights.resize(n * nphi);
  int k = 0;
  for (int i = 0; i < n; ++i) {
    const double st = std::sqrt(1.0 - x[i] * x[i]);
    for (int j = 0; j < nphi; ++j, ++k) {
      const double phi = 2.0 * std::numbers::pi * j / nphi;
      q.dirs.row(k) << st * std::cos(phi), st * std::sin(phi), x[i];
      q.weights[k] = w[i] * 2.0 * std::numbers::pi / nphi;
    }
  }
  return q;
}

/// Symmetrized (antipodal) angle between two unit vectors, radians.
inline double sym_angle(const Eigen::Vector3d& a, const Eigen::Vector3d& b) {
  return std::acos(std::min(1.0, std::abs(a.dot(b))));
}

}  // namespace oracle
