// Constrained spherical deconvolution.
//
// The signal of a voxel is modeled as a sum of tissue compartments, each
// convolved with a per-shell response kernel. WM carries a full even SH
// expansion; GM and CSF are isotropic (one l=0 term each). Fitting solves a
// least-squares problem with the WM FOD and the isotropic terms constrained
// to be non-negative.
//
// Response file (text, same comment rules as config files):
//   [wm]
//   0     r0 r2 r4 ...     # one row per shell: b-value then zonal factors
//   1000  r0 r2 r4 ...
//   [gm]                   # optional
//   0     r0
//   [csf]
//   0     r0
// Every section must list the same b-values in the same order.
#pragma once

#include "fodnet/dwi.hpp"
#include "fodnet/gradients.hpp"
#include "fodnet/qp.hpp"
#include "fodnet/volume.hpp"

#include <Eigen/Dense>

#include <filesystem>
#include <memory>
#include <string>
#include <vector>

namespace fodnet {

/// Per-shell zonal kernel factors. A WM FOD with coefficients c_lm produces
/// the shell signal sum_lm wm(shell, l/2) c_lm Y_lm(dir); an isotropic term x
/// produces csf(shell) x Y_00.
struct ResponseSet {
  std::vector<double> bvals;   // ascending
  Eigen::MatrixXd wm;          // shells x (lmax/2 + 1)
  Eigen::VectorXd gm;          // shells, or empty when no GM response exists
  Eigen::VectorXd csf;         // shells

  int lmax() const { return 2 * (int(wm.cols()) - 1); }
  bool has_gm() const { return gm.size() > 0; }
  std::size_t shells() const { return bvals.size(); }

  /// Row of the shell whose b-value lies within `tolerance`, or -1.
  int shell_for(double b, double tolerance = kShellTolerance) const;

  /// Same responses with WM truncated to `lmax` (must not exceed lmax()).
  ResponseSet truncated(int lmax) const;

  /// Throws std::invalid_argument naming the offending tissue and shell.
  void validate() const;
};

ResponseSet parse_responses(const std::string& text, const std::string& source = "<responses>");
ResponseSet read_responses(const std::filesystem::path& path);
std::string format_responses(const ResponseSet& r);
void write_responses(const std::filesystem::path& path, const ResponseSet& r);

/// Axially symmetric diffusion-tensor compartment; isotropic when d_par == d_perp.
struct TissueModel {
  double s0 = 1.0;
  double d_par = 1.7e-3;   // mm^2/s
  double d_perp = 0.3e-3;
};

struct TissueModels {
  TissueModel wm{1.0, 1.7e-3, 0.3e-3};
  TissueModel gm{1.1, 0.8e-3, 0.8e-3};
  TissueModel csf{1.4, 3.0e-3, 3.0e-3};
};

/// Zonal factors 2 pi * integral K(t) P_l(t) dt of the kernel
/// K(t) = s0 exp(-b (d_perp + (d_par - d_perp) t^2)), by Gauss-Legendre quadrature.
Eigen::VectorXd zonal_factors(const TissueModel& m, double b, int lmax);

/// Responses of the tissue models at the given b-values (a b=0 shell is added if absent).
ResponseSet model_responses(std::vector<double> bvals, int lmax, const TissueModels& models = {},
                            bool with_gm = true);

/// Design matrix of the forward model. Column order follows TissueLayout:
/// WM SH coefficients, then GM, then CSF.
struct ConvolutionMatrix {
  Eigen::MatrixXd matrix;            // gradient entries x layout.channels()
  TissueLayout layout;
  std::vector<int> shell_of_row;     // response shell used by each row
};

/// Throws std::invalid_argument when a gradient entry has no response shell
/// or the layout asks for a tissue the responses lack.
ConvolutionMatrix build_convolution(const GradientScheme& g, const ResponseSet& resp, const TissueLayout& layout);

/// Throws std::invalid_argument naming the deficient block when `c` does not
/// determine every coefficient.
void check_rank(const ConvolutionMatrix& c, const GradientScheme& g);

inline constexpr int kConstraintDirections = 300;

/// Rows enforcing non-negativity: WM amplitude at the constraint directions,
/// then one row per isotropic term.
Eigen::MatrixXd constraint_matrix(const TissueLayout& layout, int n_directions = kConstraintDirections);

/// Per-voxel solver bound to one gradient table and response set.
class CsdModel {
 public:
  CsdModel(const GradientScheme& g, const ResponseSet& resp, const TissueLayout& layout);

  const ConvolutionMatrix& convolution() const { return conv_; }
  const TissueLayout& layout() const { return conv_.layout; }

  /// Constrained fit of one signal vector (ordered like the gradient table).
  QpResult fit(const Eigen::VectorXd& signal) const;

  /// Forward model: signals for a coefficient vector.
  Eigen::VectorXd predict(const Eigen::VectorXd& coeffs) const { return conv_.matrix * coeffs; }

 private:
  ConvolutionMatrix conv_;
  std::shared_ptr<const ConstrainedLeastSquares> solver_;
};

struct FitOptions {
  const Mask* mask = nullptr;  // voxels outside are left at zero; null fits every voxel
  int threads = 0;             // 0: resolve_threads()
};

struct FitReport {
  std::size_t fitted = 0;
  std::size_t failed = 0;      // zero-filled voxels
  int max_iterations = 0;
};

/// Multi-shell fit with WM, GM and CSF compartments. Needs b=0 entries and
/// at least two distinct non-zero shells.
CoeffVolume fit_mcsd(const DwiVolume& dwi, const ResponseSet& resp, int lmax, const FitOptions& opt = {},
                     FitReport* report = nullptr);

/// Single-shell fit with WM and CSF, using the mean b=0 image as a second
/// one-sample shell. Needs b=0 entries and exactly one non-zero shell.
CoeffVolume fit_2ts_csd(const DwiVolume& dwi, const ResponseSet& resp, int lmax, const FitOptions& opt = {},
                        FitReport* report = nullptr);

/// Summed l=0 amplitude (c00 * Y00 over all tissues) of one voxel.
double isotropic_amplitude(const CoeffVolume& v, std::size_t voxel);

/// Global scaling so that the masked median of isotropic_amplitude() is 1.
/// The applied factor is multiplied into `scale`. Throws if the median is not positive.
CoeffVolume normalize_volume(const CoeffVolume& v, const Mask& mask);

/// Median of isotropic_amplitude() over the mask.
double masked_amplitude_median(const CoeffVolume& v, const Mask& mask);

}  // namespace fodnet
