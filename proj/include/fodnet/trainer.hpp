// Patch sampling, coefficient-domain rotation augmentation, the training
// loop and sliding-window inference.
//
// Training configs use the config grammar (see config.hpp):
//
//   [train]
//   arch = highresnet         # highresnet | unet
//   epochs = 400
//   base_lr = 0.03
//   lr_halving_period = 50    # epochs
//   weight_decay = 1e-6
//   patches_per_subject = 40
//   patch_size = 32
//   micro_batch = 4           # patches per forward/backward pass
//   rotation_range_deg = 25
//   seed = 1
//   validation_every = 1      # epochs
//   validation_patches = 8    # fixed patches per validation scene
//   rho = 0.9
//   eps = 1e-8
#pragma once

#include "fodnet/config.hpp"
#include "fodnet/net/checkpoint.hpp"
#include "fodnet/net/network.hpp"
#include "fodnet/shmath.hpp"
#include "fodnet/volume.hpp"

#include <filesystem>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace fodnet {

struct TrainConfig {
  std::string arch = "highresnet";
  int epochs = 400;
  double base_lr = 3e-2;
  int lr_halving_period = 50;
  double weight_decay = 1e-6;
  int patches_per_subject = 40;
  int patch_size = 32;
  int micro_batch = 4;
  double rotation_range_deg = 25.0;
  std::uint64_t seed = 1;
  int validation_every = 1;
  int validation_patches = 8;
  double rho = 0.9;
  double eps = 1e-8;

  /// Learning rate for a 0-based epoch: base_lr / 2^(epoch / lr_halving_period).
  double lr_at(int epoch) const;
  void validate() const;
  static TrainConfig from_config(const Config& cfg);  // reads the [train] section
  std::string to_config() const;
};

/// One training or validation subject: aligned WM coefficient volumes.
struct TrainingScene {
  std::string name;
  CoeffVolume input;   // single-shell fit
  CoeffVolume target;  // multi-shell fit
  Mask mask;           // patch-center sampling mask
};

struct PatchPair {
  net::Tensor4<float> input;   // 1 x coeffs x P x P x P
  net::Tensor4<float> target;
  Eigen::Vector3i origin;      // patch center voxel; the patch spans origin - P/2 .. origin + P/2 - 1
};

/// Mask voxels whose centered patch lies fully inside the volume.
std::vector<std::size_t> patch_centers(const Mask& mask, int patch_size);

/// n patch pairs with centers drawn uniformly from patch_centers(mask, patch_size).
/// Throws std::invalid_argument when no center is valid.
std::vector<PatchPair> sample_patches(const CoeffVolume& input, const CoeffVolume& target, const Mask& mask, int n,
                                      int patch_size, std::mt19937_64& rng);

/// Euler angles drawn independently from U(-range, range) degrees.
RotationSpec draw_rotation(std::mt19937_64& rng, double range_deg);

/// Applies the same SH rotation voxel-wise to input and target; the spatial raster is untouched.
void rotate_patch(PatchPair& pair, const RotationSpec& r);

/// Draws one rotation and applies it to every pair.
void augment_rotation(std::vector<PatchPair>& pairs, std::mt19937_64& rng, double range_deg);
PatchPair augment_rotation(PatchPair pair, std::mt19937_64& rng, double range_deg);

struct EpochRecord {
  int epoch = 0;  // 1-based
  double train_loss = 0.0;
  double val_loss = 0.0;  // NaN when not validated this epoch
  double lr = 0.0;
};

struct TrainResult {
  net::Checkpoint best;   // lowest validation loss
  net::Checkpoint final;
  std::vector<EpochRecord> history;
};

struct TrainOptions {
  std::filesystem::path out_dir;  // when set: best.ckpt, final.ckpt, loss.csv, divergence snapshot
  int threads = 1;
  bool verbose = false;
  std::string provenance = "{}";  // JSON text stored in checkpoints
};

/// Raised when the training loss becomes non-finite.
class TrainingDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

TrainResult train(const TrainConfig& cfg, const std::vector<TrainingScene>& train_scenes,
                  const std::vector<TrainingScene>& val_scenes, const TrainOptions& opt = {});

std::string loss_history_csv(const std::vector<EpochRecord>& history);

/// Sliding-window prediction with patch `patch_size`, step `stride` and uniform
/// averaging of overlaps; volumes smaller than a patch are reflect-padded and
/// cropped back. Voxels outside the mask are zero. Output layout: WM only.
CoeffVolume infer_volume(net::Network<float>& net, const CoeffVolume& input, const Mask& mask, int patch_size = 32,
                         int stride = 16);

}  // namespace fodnet
