// Diffusion gradient tables: shell detection, single-shell extraction,
// half-sphere reordering and protocol subsampling.
#pragma once

#include <Eigen/Core>

#include <filesystem>
#include <vector>

namespace fodnet {

struct GradientEntry {
  double b = 0.0;               // s/mm^2
  Eigen::Vector3d dir{0, 0, 0};  // unit for b > 0
};

/// Default maximum b-value spread within one shell, s/mm^2.
inline constexpr double kShellTolerance = 70.0;

struct GradientScheme {
  std::vector<GradientEntry> entries;
  double shell_tolerance = kShellTolerance;

  std::size_t size() const { return entries.size(); }
  bool is_b0(std::size_t i) const { return entries[i].b <= shell_tolerance; }
  std::size_t b0_count() const;

  /// Directions (rows) of the listed entries.
  Eigen::Matrix<double, Eigen::Dynamic, 3> directions(const std::vector<std::size_t>& idx) const;

  /// Scheme made of the listed entries, in that order.
  GradientScheme select(const std::vector<std::size_t>& idx) const;

  /// Throws if b-values are negative or diffusion-weighted directions are not unit norm.
  void validate() const;
};

struct Shell {
  double nominal_b = 0.0;
  std::vector<std::size_t> members;
  bool is_b0(double tolerance = kShellTolerance) const { return nominal_b <= tolerance; }
};

/// Greedy 1D clustering of b-values; shells ascend by nominal b-value (the
/// member mean). Every entry lands in exactly one shell.
std::vector<Shell> detect_shells(const GradientScheme& g);

/// Indices of all b0 entries plus all entries of the shell nearest `b`, in
/// original order. Throws if no shell lies within tolerance of `b`.
std::vector<std::size_t> single_shell_indices(const GradientScheme& g, double b);
GradientScheme extract_single_shell(const GradientScheme& g, double b);

/// Permutation putting b0 entries first (original order) followed by the
/// diffusion directions in greedy max-min antipodal-angle order starting from
/// the first direction. Requires at most one non-b0 shell.
std::vector<std::size_t> reorder_halfsphere_indices(const GradientScheme& g);
GradientScheme reorder_halfsphere(const GradientScheme& g);

/// Keeps the first ceil(fraction * n) b0 entries (at least one) and the first
/// ceil(fraction * n) diffusion entries, preserving order. Fractions outside
/// {0.25, 0.5, 0.75, 1} are accepted with a warning on stderr.
std::vector<std::size_t> subsample_indices(const GradientScheme& g, double keep_fraction);
GradientScheme subsample(const GradientScheme& g, double keep_fraction);

/// Minimum pairwise antipodally-symmetrized angle (radians) among the rows.
double min_symmetric_angle(const Eigen::Matrix<double, Eigen::Dynamic, 3>& dirs);

/// Deterministic near-uniform half-sphere point set (antipodal electrostatic
/// repulsion from a Fibonacci start).
Eigen::Matrix<double, Eigen::Dynamic, 3> half_sphere_directions(int n);

/// FSL-style text tables: bvecs is 3 rows x N columns, bvals 1 row x N.
GradientScheme read_fsl(const std::filesystem::path& bvecs, const std::filesystem::path& bvals);
void write_fsl(const GradientScheme& g, const std::filesystem::path& bvecs, const std::filesystem::path& bvals);

/// Builds a scheme from `n_b0` b0 entries followed by each (b, directions) shell.
GradientScheme make_scheme(int n_b0, const std::vector<std::pair<double, int>>& shells);

}  // namespace fodnet
