// Evaluation of predicted FOD volumes against ground truth: per-voxel ACC,
// MAE, ACC CDF and region-wise summaries.
#pragma once

#include "fodnet/volume.hpp"

#include <string>
#include <vector>

namespace fodnet {

inline constexpr int kCdfBins = 256;

struct Summary {
  std::size_t count = 0;
  double min = 0, q1 = 0, median = 0, q3 = 0, max = 0, mean = 0, std = 0;  // NaN when count == 0
};

/// Order statistics with linear interpolation between closest ranks.
Summary summarize(std::vector<double> values);

struct RegionReport {
  int label = 0;
  std::string name;
  Summary acc;
};

struct EvalReport {
  Dims dims;
  std::vector<std::size_t> voxels;  // WM voxel indices, ascending
  std::vector<double> acc;          // ACC per WM voxel (degrees >= 1)
  std::vector<double> mae;          // mean |difference| over WM coefficients per voxel
  double acc_mean = 0, acc_std = 0, acc_median = 0;
  double mae_mean = 0, mae_std = 0;
  std::vector<double> cdf;          // fraction of voxels with ACC <= upper edge of bin k on [-1, 1]
  std::vector<RegionReport> regions;
  std::string provenance = "{}";    // JSON text

  std::string to_json() const;
  std::string cdf_csv() const;      // bin_upper,cdf
  std::string acc_csv() const;      // x,y,z,acc,mae
};

/// Compares the WM coefficients of `pred` and `truth` inside `wm`. Region
/// labels 1..n are summarized over WM voxels carrying that label.
/// Throws std::invalid_argument on misaligned inputs or an empty mask.
EvalReport evaluate(const CoeffVolume& pred, const CoeffVolume& truth, const Mask& wm, const LabelVolume& regions,
                    const std::string& provenance = "{}", int region_count = 5);

/// Voxel ACC values as a one-channel volume (0 outside the mask).
Volume acc_map(const EvalReport& report, const Dims& dims);

/// Across-report statistics of the per-report means and medians (the "across
/// subjects" reading of mean(std)), as JSON text.
std::string aggregate_json(const std::vector<EvalReport>& reports);

}  // namespace fodnet
