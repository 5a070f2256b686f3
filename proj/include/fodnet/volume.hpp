// 3D rasters with a per-voxel channel vector, plus the binary container
// used for every volume this library writes to disk.
//
// File layout (all integers little-endian):
//   bytes 0..7   magic "FODVOL01"
//   bytes 8..11  uint32 header length H
//   bytes 12..   H bytes of UTF-8 JSON header
//   then         nx*ny*nz*channels float32 values, channel fastest, then x, y, z
//
// Header keys: version, kind ("coeff" | "dwi" | "mask" | "labels"), dims,
// voxel_size_mm, channels, layout, lmax, scale, provenance.
#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace fodnet {

struct Dims {
  int x = 0;
  int y = 0;
  int z = 0;

  std::size_t voxels() const { return std::size_t(x) * std::size_t(y) * std::size_t(z); }
  std::size_t index(int i, int j, int k) const {
    return (std::size_t(k) * std::size_t(y) + std::size_t(j)) * std::size_t(x) + std::size_t(i);
  }
  bool contains(int i, int j, int k) const { return i >= 0 && j >= 0 && k >= 0 && i < x && j < y && k < z; }
  Eigen::Vector3i coords(std::size_t idx) const {
    return {int(idx % std::size_t(x)), int((idx / std::size_t(x)) % std::size_t(y)),
            int(idx / (std::size_t(x) * std::size_t(y)))};
  }
  int min() const { return std::min(x, std::min(y, z)); }
  bool operator==(const Dims&) const = default;
};

std::string to_string(const Dims& d);

/// Dense float raster with `channels` values per voxel (channel fastest).
class Volume {
 public:
  Volume() = default;
  Volume(Dims dims, int channels, float fill = 0.0f);

  const Dims& dims() const { return dims_; }
  int channels() const { return channels_; }
  std::size_t voxels() const { return dims_.voxels(); }

  std::span<float> voxel(std::size_t idx) { return {data_.data() + idx * channels_, std::size_t(channels_)}; }
  std::span<const float> voxel(std::size_t idx) const {
    return {data_.data() + idx * channels_, std::size_t(channels_)};
  }
  Eigen::Map<Eigen::VectorXf> voxel_vec(std::size_t idx) {
    return {data_.data() + idx * channels_, channels_};
  }
  Eigen::Map<const Eigen::VectorXf> voxel_vec(std::size_t idx) const {
    return {data_.data() + idx * channels_, channels_};
  }
  float& at(std::size_t idx, int c) { return data_[idx * channels_ + c]; }
  float at(std::size_t idx, int c) const { return data_[idx * channels_ + c]; }

  std::vector<float>& data() { return data_; }
  const std::vector<float>& data() const { return data_; }

  /// New volume holding only the listed channels, in the given order.
  Volume select_channels(std::span<const int> channels) const;

  double voxel_size_mm = 2.0;

 private:
  Dims dims_;
  int channels_ = 0;
  std::vector<float> data_;
};

/// Binary voxel mask.
class Mask {
 public:
  Mask() = default;
  explicit Mask(Dims dims, bool fill = false) : dims_(dims), bits_(dims.voxels(), fill ? 1 : 0) {}

  const Dims& dims() const { return dims_; }
  bool operator[](std::size_t idx) const { return bits_[idx] != 0; }
  void set(std::size_t idx, bool on) { bits_[idx] = on ? 1 : 0; }
  std::size_t count() const;
  std::vector<std::size_t> indices() const;
  bool subset_of(const Mask& other) const;

 private:
  Dims dims_;
  std::vector<std::uint8_t> bits_;
};

/// Integer label raster; 0 means unlabeled.
class LabelVolume {
 public:
  LabelVolume() = default;
  explicit LabelVolume(Dims dims) : dims_(dims), labels_(dims.voxels(), 0) {}

  const Dims& dims() const { return dims_; }
  int operator[](std::size_t idx) const { return labels_[idx]; }
  void set(std::size_t idx, int label) { labels_[idx] = label; }
  int max_label() const;

 private:
  Dims dims_;
  std::vector<int> labels_;
};

/// Tissue layout of a coefficient volume: WM SH coefficients first, then the
/// optional isotropic GM and CSF terms.
struct TissueLayout {
  int wm_lmax = 4;
  bool gm = false;
  bool csf = true;

  int wm_count() const;
  int channels() const { return wm_count() + (gm ? 1 : 0) + (csf ? 1 : 0); }
  int gm_channel() const { return gm ? wm_count() : -1; }
  int csf_channel() const { return csf ? wm_count() + (gm ? 1 : 0) : -1; }
  std::string describe() const;
  static TissueLayout parse(const std::string& text);
  bool operator==(const TissueLayout&) const = default;
};

/// Per-tissue coefficient raster.
class CoeffVolume : public Volume {
 public:
  CoeffVolume() = default;
  CoeffVolume(Dims dims, TissueLayout layout) : Volume(dims, layout.channels()), layout_(layout) {}

  const TissueLayout& layout() const { return layout_; }
  int lmax() const { return layout_.wm_lmax; }

  /// Copy of this volume with only the WM SH channels.
  CoeffVolume wm_only() const;

  double scale = 1.0;        // normalization factor applied so far
  std::string provenance;    // free-form JSON text

 private:
  TissueLayout layout_;
};

/// Header of a volume file, as read back from disk.
struct VolumeHeader {
  int version = 1;
  std::string kind;
  Dims dims;
  double voxel_size_mm = 2.0;
  int channels = 0;
  std::string layout;
  int lmax = -1;
  double scale = 1.0;
  std::string provenance;
};

inline constexpr int kVolumeFormatVersion = 1;

void write_volume(const std::filesystem::path& path, const Volume& v, const std::string& kind,
                  const std::string& layout = "", int lmax = -1, double scale = 1.0,
                  const std::string& provenance = "{}");
Volume read_volume(const std::filesystem::path& path, VolumeHeader* header = nullptr);

void write_coeff_volume(const std::filesystem::path& path, const CoeffVolume& v);
CoeffVolume read_coeff_volume(const std::filesystem::path& path);

void write_mask(const std::filesystem::path& path, const Mask& m, const std::string& provenance = "{}");
Mask read_mask(const std::filesystem::path& path);

void write_labels(const std::filesystem::path& path, const LabelVolume& l, const std::string& provenance = "{}");
LabelVolume read_labels(const std::filesystem::path& path);

/// Error raised for malformed files; the message names the byte offset or line.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace fodnet
