#include "fodnet/shmath.hpp"

#include "fodnet/volume.hpp"

#include <complex>

namespace fodnet {

int lmax_for_count(int count) {
  for (int l = 0; n_coeffs(l) <= count; l += 2)
    if (n_coeffs(l) == count) return l;
  throw std::invalid_argument("no even lmax has " + std::to_string(count) + " coefficients");
}

void require_even_lmax(int lmax) {
  if (lmax < 0 || lmax % 2 != 0)
    throw std::invalid_argument("lmax must be even and non-negative, got " + std::to_string(lmax));
}

UnitDirection::UnitDirection(double x, double y, double z) : v_(x, y, z) {
  if (std::abs(v_.squaredNorm() - 1.0) > 1e-12) throw std::invalid_argument("UnitDirection: vector is not unit norm");
}

UnitDirection UnitDirection::from(const Eigen::Vector3d& v) {
  const double n = v.norm();
  if (!(n > 0) || !std::isfinite(n)) throw std::invalid_argument("UnitDirection: zero or non-finite vector");
  return UnitDirection(v / n, true);
}

SHCoeffs::SHCoeffs(int lmax) : lmax_(lmax) {
  require_even_lmax(lmax);
  values_ = Eigen::VectorXd::Zero(n_coeffs(lmax));
}

SHCoeffs::SHCoeffs(int lmax, Eigen::VectorXd values) : lmax_(lmax), values_(std::move(values)) {
  require_even_lmax(lmax);
  if (values_.size() != n_coeffs(lmax))
    throw std::invalid_argument("SHCoeffs: expected " + std::to_string(n_coeffs(lmax)) + " values, got " +
                                std::to_string(values_.size()));
  if (!values_.allFinite()) throw std::invalid_argument("SHCoeffs: non-finite coefficient");
}

Eigen::Matrix3d RotationSpec::matrix() const {
  using Eigen::AngleAxisd;
  using Eigen::Vector3d;
  return (AngleAxisd(alpha, Vector3d::UnitZ()) * AngleAxisd(beta, Vector3d::UnitY()) *
          AngleAxisd(gamma, Vector3d::UnitZ()))
      .toRotationMatrix();
}

RotationSpec RotationSpec::from_matrix(const Eigen::Matrix3d& r) {
  // R = Rz(a) Ry(b) Rz(g): R(2,2) = cos b, R(0,2) = cos a sin b, R(1,2) = sin a sin b,
  // R(2,0) = -sin b cos g, R(2,1) = sin b sin g.
  const double beta = std::acos(std::clamp(r(2, 2), -1.0, 1.0));
  if (std::abs(std::sin(beta)) < 1e-12) {
    // Gimbal lock: only alpha + gamma (or alpha - gamma) is determined.
    const double a = std::atan2(r(1, 0), r(0, 0));
    return {beta < 1.0 ? a : -a, beta, 0.0};
  }
  return {std::atan2(r(1, 2), r(0, 2)), beta, std::atan2(r(2, 1), -r(2, 0))};
}

Eigen::MatrixXd sh_basis(const std::vector<UnitDirection>& dirs, int lmax) {
  DirectionMatrix<double> m(dirs.size(), 3);
  for (std::size_t i = 0; i < dirs.size(); ++i) m.row(Eigen::Index(i)) = dirs[i].vec().transpose();
  return sh_basis<double>(m, lmax);
}

double sh_evaluate(const SHCoeffs& c, const Eigen::Vector3d& d) {
  Eigen::RowVectorXd row(c.size());
  sh_basis_row<double>(d.x(), d.y(), d.z(), c.lmax(), row);
  return row.dot(c.values());
}

namespace {

double factorial(int n) {
  double f = 1.0;
  for (int i = 2; i <= n; ++i) f *= i;
  return f;
}

// Wigner small-d matrix d^l_{m'm}(beta), rows m' = -l..l, columns m = -l..l.
Eigen::MatrixXd wigner_small_d(int l, double beta) {
  const int n = 2 * l + 1;
  Eigen::MatrixXd d(n, n);
  const double c = std::cos(beta / 2);
  const double s = std::sin(beta / 2);
  for (int mp = -l; mp <= l; ++mp) {
    for (int m = -l; m <= l; ++m) {
      const double pre = std::sqrt(factorial(l + mp) * factorial(l - mp) * factorial(l + m) * factorial(l - m));
      double sum = 0.0;
      const int kmin = std::max(0, m - mp);
      const int kmax = std::min(l + m, l - mp);
      for (int k = kmin; k <= kmax; ++k) {
        const double sign = ((k - m + mp) % 2 == 0) ? 1.0 : -1.0;
        const double den = factorial(l + m - k) * factorial(k) * factorial(l - k - mp) * factorial(k - m + mp);
        sum += sign * std::pow(c, 2 * l + m - mp - 2 * k) * std::pow(s, 2 * k - m + mp) / den;
      }
      d(mp + l, m + l) = pre * sum;
    }
  }
  return d;
}

// Rows: real basis functions (m = -l..l); columns: complex Y_l^m (m = -l..l).
Eigen::MatrixXcd real_from_complex(int l) {
  using cd = std::complex<double>;
  const int n = 2 * l + 1;
  const double r = 1.0 / std::sqrt(2.0);
  Eigen::MatrixXcd u = Eigen::MatrixXcd::Zero(n, n);
  u(l, l) = 1.0;
  for (int m = 1; m <= l; ++m) {
    const double sgn = (m % 2 == 0) ? 1.0 : -1.0;
    u(l + m, l + m) = sgn * r;
    u(l + m, l - m) = r;
    u(l - m, l - m) = cd(0, r);
    u(l - m, l + m) = cd(0, -sgn * r);
  }
  return u;
}

}  // namespace

Eigen::MatrixXd wigner_real_block(int l, const RotationSpec& r) {
  using cd = std::complex<double>;
  const int n = 2 * l + 1;
  const Eigen::MatrixXd d = wigner_small_d(l, r.beta);
  Eigen::MatrixXcd big_d(n, n);
  for (int mp = -l; mp <= l; ++mp)
    for (int m = -l; m <= l; ++m)
      big_d(mp + l, m + l) = std::exp(cd(0, -mp * r.alpha)) * d(mp + l, m + l) * std::exp(cd(0, -m * r.gamma));
  const Eigen::MatrixXcd u = real_from_complex(l);
  // Complex coefficients transform as c' = D c; real ones as a' = conj(U) D U^T a.
  const Eigen::MatrixXcd real = u.conjugate() * big_d * u.transpose();
  return real.real();
}

Eigen::MatrixXd sh_rotation_matrix(int lmax, const RotationSpec& r) {
  require_even_lmax(lmax);
  const int n = n_coeffs(lmax);
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(n, n);
  for (int l = 0; l <= lmax; l += 2) {
    const int off = sh_index(l, -l);
    out.block(off, off, 2 * l + 1, 2 * l + 1) = wigner_real_block(l, r);
  }
  return out;
}

SHCoeffs rotate_sh(const SHCoeffs& c, const RotationSpec& r) {
  return SHCoeffs(c.lmax(), sh_rotation_matrix(c.lmax(), r) * c.values());
}

double acc(const SHCoeffs& u, const SHCoeffs& v, double alpha) {
  if (u.lmax() != v.lmax()) throw std::invalid_argument("acc: lmax mismatch");
  return acc(u.values(), v.values(), alpha);
}

double mae(const CoeffVolume& u, const CoeffVolume& v, const Mask& mask) {
  if (u.channels() != v.channels()) throw std::invalid_argument("mae: coefficient counts differ");
  return mae(u, v, mask, 0, u.channels());
}

double mae(const CoeffVolume& u, const CoeffVolume& v, const Mask& mask, int first, int count) {
  if (!(u.dims() == v.dims()) || !(u.dims() == mask.dims())) throw std::invalid_argument("mae: dimension mismatch");
  if (first < 0 || count <= 0 || first + count > u.channels() || first + count > v.channels())
    throw std::invalid_argument("mae: channel range out of bounds");
  double total = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < u.voxels(); ++i) {
    if (!mask[i]) continue;
    double s = 0.0;
    for (int c = first; c < first + count; ++c) s += std::abs(double(u.at(i, c)) - double(v.at(i, c)));
    total += s / count;
    ++n;
  }
  if (n == 0) throw std::invalid_argument("mae: empty mask");
  return total / double(n);
}

}  // namespace fodnet
