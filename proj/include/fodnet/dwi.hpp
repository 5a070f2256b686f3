// Diffusion-weighted image: one channel per gradient-table entry.
#pragma once

#include "fodnet/gradients.hpp"
#include "fodnet/volume.hpp"

#include <filesystem>

namespace fodnet {

struct DwiVolume {
  Volume signals;          // channels == scheme.size()
  GradientScheme scheme;

  const Dims& dims() const { return signals.dims(); }

  /// Keeps the listed gradient entries (channels), in that order.
  DwiVolume select(const std::vector<std::size_t>& idx) const;

  /// Throws if the channel count and the scheme disagree or any signal is negative or non-finite.
  void validate() const;
};

/// Writes `stem.vol`, `stem.bvec` and `stem.bval`.
void write_dwi(const std::filesystem::path& stem, const DwiVolume& dwi, const std::string& provenance = "{}");
DwiVolume read_dwi(const std::filesystem::path& volume, const std::filesystem::path& bvecs,
                   const std::filesystem::path& bvals);

}  // namespace fodnet
