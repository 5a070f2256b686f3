// Synthetic multi-shell phantoms with known ground truth.
//
// A scene is an ellipsoidal brain filled with GM/CSF background and crossed
// by tube-shaped fiber bundles. Each voxel's truth is a 3-tissue coefficient
// vector; its signal is the forward convolution of that vector, plus Gaussian
// noise. Scene files use the config grammar (see config.hpp):
//
//   [scene]
//   name = crossing-X
//   dims = 48, 48, 48
//   lmax = 4
//   snr = 30            # b0 signal / noise sigma; "inf" disables noise
//   seed = 1
//   protocol = B        # A, B, or "custom" with b0 / shells below
//   b0 = 6
//   shells = 1000:90, 2000:90
//   [brain]
//   radii = 22, 22, 20  # ellipsoid semi-axes in voxels, centered in the grid
//   rim = 3             # CSF-rich boundary layer thickness, voxels
//   interior_csf = 0.2  # CSF share of non-WM tissue inside
//   rim_csf = 0.8       # CSF share of non-WM tissue in the rim
//   [bundle.0]
//   points = 4 24 24; 44 24 24   # centerline polyline, voxel coordinates
//   radius = 6
//   fraction = 0.5
//   [tissue.wm]         # optional overrides of the tissue models
//   s0 = 1.0
#pragma once

#include "fodnet/config.hpp"
#include "fodnet/csd.hpp"
#include "fodnet/dwi.hpp"
#include "fodnet/shmath.hpp"
#include "fodnet/volume.hpp"

#include <string>
#include <vector>

namespace fodnet {

/// Zonal coefficients c_l0 (l = 0, 2, ..., lmax) of the apodized-delta
/// template t^lmax, scaled to unit integral. Non-negative on the sphere.
const Eigen::VectorXd& fod_template(int lmax);

/// Template rotated to point along u (unit integral).
SHCoeffs single_fiber_fod(const UnitDirection& u, int lmax);

struct Bundle {
  std::vector<Eigen::Vector3d> points;   // centerline polyline, voxel coordinates
  double radius = 5.0;                   // voxels
  double fraction = 0.5;                 // WM volume fraction inside the tube
};

struct BrainShape {
  Eigen::Vector3d radii{22, 22, 20};
  double rim = 3.0;
  double interior_csf = 0.2;
  double rim_csf = 0.8;
};

struct PhantomSpec {
  std::string name = "scene";
  Dims dims{48, 48, 48};
  int lmax = 4;
  double snr = 30.0;                     // <= 0 or infinite: noiseless
  std::uint64_t seed = 1;
  std::string protocol = "B";
  GradientScheme scheme;
  TissueModels tissues;
  BrainShape brain;
  std::vector<Bundle> bundles;

  bool noiseless() const { return !(snr > 0.0) || !std::isfinite(snr); }
  ResponseSet responses() const;
};

struct PhantomTruth {
  CoeffVolume coeffs;       // WM SH, GM, CSF (unit fractions integrate to 1)
  Mask brain;
  Mask wm;                  // WM fraction >= kWmMaskThreshold
  LabelVolume regions;      // 1..kRegionCount inside the WM mask
  Volume noiseless;         // signals before noise (same layout as the DWI)
};

inline constexpr double kWmMaskThreshold = 0.3;
inline constexpr int kRegionCount = 5;

/// Short name of a region label (1-based).
std::string region_name(int label);

struct Phantom {
  DwiVolume dwi;
  PhantomTruth truth;
  double sigma = 0.0;       // noise standard deviation used
};

/// Deterministic in spec.seed; independent of the thread count.
/// Throws std::invalid_argument naming the voxel if bundle fractions exceed 1.
Phantom generate(const PhantomSpec& spec, int threads = 0);

/// Acquisition protocols: "A" (6 b0, 32 @ 700, 64 @ 2500) and
/// "B" (6 b0, 90 each @ 1000, 2000, 3000).
GradientScheme protocol_scheme(const std::string& name);

/// b-value used for the single-shell input of each protocol.
double single_shell_b(const std::string& protocol);

/// Named scenes: crossing-X, kissing-C, three-way, crossing-oblique, arc-U.
std::vector<PhantomSpec> standard_scenes(const std::string& protocol = "B");
PhantomSpec standard_scene(const std::string& name, const std::string& protocol = "B");

PhantomSpec spec_from_config(const Config& cfg);
std::string spec_to_config(const PhantomSpec& spec);

}  // namespace fodnet
