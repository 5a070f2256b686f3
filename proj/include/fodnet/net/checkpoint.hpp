// Versioned model checkpoints.
//
// File layout (all integers little-endian):
//   bytes 0..7   magic "FODNETCK"
//   bytes 8..11  uint32 format version
//   bytes 12..15 uint32 header length H
//   bytes 16..   H bytes of UTF-8 JSON header
//   then         float32 blobs in header order: parameters, buffers, optimizer accumulators
//
// Header keys: arch, channels, epoch, train_loss, val_loss, optimizer
// {lr, rho, eps, weight_decay}, rng, extra, params / buffers / accumulators
// (lists of {name, size}).
#pragma once

#include "fodnet/net/network.hpp"
#include "fodnet/net/optimizer.hpp"
#include "fodnet/volume.hpp"

#include <filesystem>
#include <limits>
#include <memory>
#include <string>
#include <vector>

namespace fodnet::net {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Blob {
  std::string name;
  std::vector<float> values;
};

struct Checkpoint {
  std::string arch;
  int channels = 15;
  int epoch = 0;
  double train_loss = std::numeric_limits<double>::quiet_NaN();
  double val_loss = std::numeric_limits<double>::quiet_NaN();
  RmsPropConfig optimizer;
  std::string rng;            // serialized generator state
  std::string extra = "{}";   // JSON text: training config and provenance
  std::vector<Blob> params;
  std::vector<Blob> buffers;
  std::vector<Blob> accumulators;  // empty when no optimizer state was saved
};

/// Copies network (and optional optimizer) state into a checkpoint.
Checkpoint snapshot(Network<float>& net, const RmsProp<float>* opt = nullptr);

/// Loads parameters and buffers; optimizer accumulators too when given and present.
void restore(const Checkpoint& ck, Network<float>& net, RmsProp<float>* opt = nullptr);

/// Builds the checkpoint's architecture and loads its state.
std::unique_ptr<Network<float>> load_network(const Checkpoint& ck, int threads = 1);

std::string encode_checkpoint(const Checkpoint& ck);
/// Throws FormatError naming the byte offset of the problem.
Checkpoint decode_checkpoint(const std::string& bytes, const std::string& source = "checkpoint");

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ck);
Checkpoint read_checkpoint(const std::filesystem::path& path);

}  // namespace fodnet::net
