#include "fodnet/dwi.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace fodnet {

DwiVolume DwiVolume::select(const std::vector<std::size_t>& idx) const {
  std::vector<int> channels(idx.begin(), idx.end());
  DwiVolume out{signals.select_channels(channels), scheme.select(idx)};
  return out;
}

void DwiVolume::validate() const {
  if (std::size_t(signals.channels()) != scheme.size())
    throw std::invalid_argument("DWI has " + std::to_string(signals.channels()) + " volumes but the gradient table has " +
                                std::to_string(scheme.size()) + " entries");
  scheme.validate();
  for (std::size_t i = 0; i < signals.data().size(); ++i) {
    const float v = signals.data()[i];
    if (!std::isfinite(v) || v < 0.0f) {
      const std::size_t voxel = i / std::size_t(signals.channels());
      throw std::invalid_argument("DWI signal at voxel " + std::to_string(voxel) + ", volume " +
                                  std::to_string(i % std::size_t(signals.channels())) + " is negative or non-finite");
    }
  }
}

void write_dwi(const std::filesystem::path& stem, const DwiVolume& dwi, const std::string& provenance) {
  auto with_ext = [&](const char* ext) {
    auto p = stem;
    p += ext;
    return p;
  };
  write_volume(with_ext(".vol"), dwi.signals, "dwi", "", -1, 1.0, provenance);
  write_fsl(dwi.scheme, with_ext(".bvec"), with_ext(".bval"));
}

DwiVolume read_dwi(const std::filesystem::path& volume, const std::filesystem::path& bvecs,
                   const std::filesystem::path& bvals) {
  DwiVolume dwi{read_volume(volume), read_fsl(bvecs, bvals)};
  dwi.validate();
  return dwi;
}

}  // namespace fodnet
