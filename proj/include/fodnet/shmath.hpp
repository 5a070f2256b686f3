// Real even-order spherical harmonics: basis evaluation, rotation and
// coefficient-similarity metrics.
//
// Basis convention (used everywhere in this library):
//
//   Y_l^0      = N_l^0 P_l^0(cos t)
//   Y_l^m, m>0 = sqrt(2) N_l^m P_l^m(cos t) cos(m p)
//   Y_l^m, m<0 = sqrt(2) N_l^|m| P_l^|m|(cos t) sin(|m| p)
//
// with N_l^m = sqrt((2l+1)/(4 pi) (l-m)!/(l+m)!) and P_l^m the associated
// Legendre functions WITHOUT the Condon-Shortley phase. Coefficients are
// stored by degree l = 0, 2, ..., lmax and, within a degree, by order
// m = -l .. l, i.e. index(l, m) = l (l + 1) / 2 + m.
#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>
#include <algorithm>

namespace fodnet {

/// Number of even-order real SH coefficients up to degree `lmax`.
constexpr int n_coeffs(int lmax) { return (lmax + 1) * (lmax + 2) / 2; }

/// Column of (l, m) in an even-order coefficient vector.
constexpr int sh_index(int l, int m) { return l * (l + 1) / 2 + m; }

/// Inverse of n_coeffs(); throws if `count` is not a valid even-order size.
int lmax_for_count(int count);

/// Throws std::invalid_argument unless lmax is even and non-negative.
void require_even_lmax(int lmax);

template <typename Scalar>
using DirectionMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, 3>;

template <typename Scalar>
using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

template <typename Scalar>
using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

/// A direction on the unit sphere. Construct through `from` (normalizes) or
/// the checked constructor (requires unit norm within 1e-12).
class UnitDirection {
 public:
  UnitDirection(double x, double y, double z);
  static UnitDirection from(const Eigen::Vector3d& v);

  const Eigen::Vector3d& vec() const { return v_; }
  double x() const { return v_.x(); }
  double y() const { return v_.y(); }
  double z() const { return v_.z(); }
  UnitDirection operator-() const { return UnitDirection::from(-v_); }

 private:
  explicit UnitDirection(const Eigen::Vector3d& v, bool) : v_(v) {}
  Eigen::Vector3d v_;
};

/// Even-order coefficient vector with its degree.
class SHCoeffs {
 public:
  explicit SHCoeffs(int lmax);
  SHCoeffs(int lmax, Eigen::VectorXd values);

  int lmax() const { return lmax_; }
  Eigen::Index size() const { return values_.size(); }
  const Eigen::VectorXd& values() const { return values_; }
  Eigen::VectorXd& values() { return values_; }
  double operator[](Eigen::Index i) const { return values_[i]; }
  double& operator[](Eigen::Index i) { return values_[i]; }

  /// Coefficients of degree l.
  auto degree(int l) const { return values_.segment(sh_index(l, -l), 2 * l + 1); }

 private:
  int lmax_;
  Eigen::VectorXd values_;
};

/// Euler angles in radians, z-y-z convention: R = Rz(alpha) Ry(beta) Rz(gamma).
struct RotationSpec {
  double alpha = 0.0;
  double beta = 0.0;
  double gamma = 0.0;

  Eigen::Matrix3d matrix() const;
  RotationSpec inverse() const { return {-gamma, -beta, -alpha}; }
  static RotationSpec from_matrix(const Eigen::Matrix3d& r);
};

/// Fills `row` with the basis functions evaluated at the unit vector (x, y, z).
template <typename Scalar, typename Row>
void sh_basis_row(Scalar x, Scalar y, Scalar z, int lmax, Row&& row) {
  using std::sqrt;
  using std::atan2;
  using std::cos;
  using std::sin;
  constexpr Scalar inv4pi = Scalar(1) / (Scalar(4) * std::numbers::pi_v<Scalar>);
  const Scalar ct = z;
  const Scalar st = sqrt(std::max(Scalar(0), x * x + y * y));
  const Scalar phi = atan2(y, x);
  const Scalar sqrt2 = std::numbers::sqrt2_v<Scalar>;

  // pmm holds normalized P_m^m; walk up in l for each m.
  Scalar pmm = sqrt(inv4pi);
  for (int m = 0; m <= lmax; ++m) {
    if (m > 0) pmm *= sqrt(Scalar(2 * m + 1) / Scalar(2 * m)) * st;
    const Scalar cm = m == 0 ? Scalar(1) : sqrt2 * cos(Scalar(m) * phi);
    const Scalar sm = m == 0 ? Scalar(0) : sqrt2 * sin(Scalar(m) * phi);
    Scalar p_lm2 = 0;
    Scalar p_lm1 = pmm;
    for (int l = m; l <= lmax; ++l) {
      Scalar p;
      if (l == m) {
        p = pmm;
      } else if (l == m + 1) {
        p = sqrt(Scalar(2 * m + 3)) * ct * pmm;
      } else {
        const Scalar a = sqrt(Scalar(4 * l * l - 1) / Scalar(l * l - m * m));
        const Scalar b = sqrt(Scalar((l - 1) * (l - 1) - m * m) / Scalar(4 * (l - 1) * (l - 1) - 1));
        p = a * (ct * p_lm1 - b * p_lm2);
      }
      if (l > m) {
        p_lm2 = p_lm1;
        p_lm1 = p;
      }
      if (l % 2 == 0) {
        if (m == 0) {
          row(sh_index(l, 0)) = p;
        } else {
          row(sh_index(l, m)) = p * cm;
          row(sh_index(l, -m)) = p * sm;
        }
      }
    }
  }
}

/// Basis matrix, one row per direction, n_coeffs(lmax) columns.
/// Rejects odd lmax and directions that are not unit norm.
template <typename Scalar>
Mat<Scalar> sh_basis(const DirectionMatrix<Scalar>& dirs, int lmax) {
  require_even_lmax(lmax);
  if (dirs.rows() == 0) throw std::invalid_argument("sh_basis: empty direction set");
  const Scalar tol = std::is_same_v<Scalar, float> ? Scalar(1e-5) : Scalar(1e-9);
  Mat<Scalar> out(dirs.rows(), n_coeffs(lmax));
  for (Eigen::Index i = 0; i < dirs.rows(); ++i) {
    const Scalar n2 = dirs.row(i).squaredNorm();
    if (std::abs(n2 - Scalar(1)) > tol)
      throw std::invalid_argument("sh_basis: direction " + std::to_string(i) + " is not unit norm");
    sh_basis_row<Scalar>(dirs(i, 0), dirs(i, 1), dirs(i, 2), lmax, out.row(i));
  }
  return out;
}

Eigen::MatrixXd sh_basis(const std::vector<UnitDirection>& dirs, int lmax);

/// Value of the SH series `c` at direction d.
double sh_evaluate(const SHCoeffs& c, const Eigen::Vector3d& d);

/// Real Wigner rotation matrix (block diagonal over degrees) for the active
/// rotation R: if g = rotate_sh(f, R) then g(R d) = f(d).
Eigen::MatrixXd sh_rotation_matrix(int lmax, const RotationSpec& r);

/// Per-degree real Wigner block of size (2l+1) x (2l+1).
Eigen::MatrixXd wigner_real_block(int l, const RotationSpec& r);

SHCoeffs rotate_sh(const SHCoeffs& c, const RotationSpec& r);

/// Default regularizer of the angular correlation coefficient.
inline constexpr double kAccAlpha = 1e-8;

/// Angular correlation coefficient over degrees l >= 1 (the DC term is excluded).
template <typename DerivedU, typename DerivedV>
auto acc(const Eigen::MatrixBase<DerivedU>& u, const Eigen::MatrixBase<DerivedV>& v,
         double alpha = kAccAlpha) {
  using Scalar = typename DerivedU::Scalar;
  if (u.size() != v.size()) throw std::invalid_argument("acc: coefficient vectors differ in length");
  if (!(alpha > 0)) throw std::invalid_argument("acc: alpha must be positive");
  const Eigen::Index n = u.size() - 1;
  if (n < 0) throw std::invalid_argument("acc: empty coefficient vectors");
  const auto uh = u.tail(n);
  const auto vh = v.tail(n);
  const double num = static_cast<double>(uh.template cast<double>().dot(vh.template cast<double>()));
  const double den = std::sqrt(static_cast<double>(uh.template cast<double>().squaredNorm())) *
                         std::sqrt(static_cast<double>(vh.template cast<double>().squaredNorm())) +
                     alpha;
  return static_cast<Scalar>(num / den);
}

double acc(const SHCoeffs& u, const SHCoeffs& v, double alpha = kAccAlpha);

class CoeffVolume;
class Mask;

/// Mean over masked voxels of the per-voxel mean absolute coefficient difference.
double mae(const CoeffVolume& u, const CoeffVolume& v, const Mask& mask);

/// Same, restricted to channels [first, first + count).
double mae(const CoeffVolume& u, const CoeffVolume& v, const Mask& mask, int first, int count);

}  // namespace fodnet
