// Layer graphs: named nodes wired by name, with cached activations for
// reverse-mode gradients, plus the two shipped architectures.
#pragma once

#include "fodnet/net/layers.hpp"

#include <cstdint>
#include <memory>
#include <string>
#include <utility>
#include <vector>

namespace fodnet::net {

struct LayerSpec {
  std::string name;
  std::string kind;                 // conv3d, batchnorm, prelu, add, maxpool2, upsample2, concat
  std::vector<std::string> inputs;  // node names, "input" for the network input; empty = previous node
  int channels = 0;                 // conv3d output channels
  int kernel = 3;
  int dilation = 1;
  bool bias = true;
};

/// Ordered layer graph; the last node is the output.
struct NetworkSpec {
  std::string arch;
  int in_channels = 15;
  std::vector<LayerSpec> layers;
};

/// Residual network with two dilation levels (about 153k parameters).
NetworkSpec highresnet_lite(int channels = 15);
/// One-pool encoder/decoder with ten convolutions (about 3.82M parameters).
NetworkSpec unet_lite(int channels = 15);
/// A single 1x1x1 convolution; he_uniform_init does not make it an identity.
NetworkSpec identity_net(int channels = 15);
/// "highresnet", "unet" or "identity".
NetworkSpec architecture(const std::string& name, int channels = 15);

/// Receptive field edge length in voxels, from kernels, dilations and pooling.
int receptive_field(const NetworkSpec& spec);
/// Spatial sizes must be multiples of this (2 per pooling level).
int size_multiple(const NetworkSpec& spec);

template <typename S>
class Network {
 public:
  explicit Network(NetworkSpec spec, int threads = 1);

  const NetworkSpec& spec() const { return spec_; }
  int in_channels() const { return spec_.in_channels; }
  int out_channels() const { return out_channels_; }

  /// Static shape propagation; throws std::invalid_argument naming the layer.
  Shape output_shape(const Shape& input) const;

  /// Runs every node and caches activations for backward().
  const Tensor4<S>& forward(const Tensor4<S>& x, Mode mode);

  /// Adds parameter gradients for upstream gradient `grad_out` and releases
  /// the cache. Returns the input gradient when requested, else an empty tensor.
  Tensor4<S> backward(const Tensor4<S>& grad_out, bool input_grad = false);

  bool has_cache() const { return cached_; }
  void clear_cache();
  void zero_grad();
  void set_threads(int threads);

  std::size_t layer_count() const { return layers_.size(); }
  Layer<S>& layer(std::size_t i) { return *layers_[i]; }

  /// "<layer>.<param>" names in layer order.
  std::vector<std::pair<std::string, Param<S>*>> named_params();
  std::vector<std::pair<std::string, Eigen::Array<S, Eigen::Dynamic, 1>*>> named_buffers();
  std::vector<Param<S>*> params();
  std::size_t parameter_count() const;

 private:
  NetworkSpec spec_;
  std::vector<std::unique_ptr<Layer<S>>> layers_;
  std::vector<std::vector<int>> inputs_;  // node indices, -1 = network input
  int out_channels_ = 0;
  Tensor4<S> input_;
  std::vector<Tensor4<S>> outputs_;
  bool cached_ = false;
};

/// Conv weights ~ U(-b, b) with b = sqrt(6 / fan_in); biases and BN shifts 0,
/// BN scales 1, PReLU slopes 0.25, running statistics reset. Deterministic in seed.
template <typename S>
void he_uniform_init(Network<S>& net, std::uint64_t seed);

/// Copies parameters and buffers between networks of the same spec.
template <typename To, typename From>
void copy_state(Network<To>& to, Network<From>& from) {
  auto tp = to.named_params();
  auto fp = from.named_params();
  auto tb = to.named_buffers();
  auto fb = from.named_buffers();
  if (tp.size() != fp.size() || tb.size() != fb.size()) throw std::invalid_argument("copy_state: networks differ");
  for (std::size_t i = 0; i < tp.size(); ++i) {
    if (tp[i].first != fp[i].first || tp[i].second->value.size() != fp[i].second->value.size())
      throw std::invalid_argument("copy_state: parameter mismatch at " + fp[i].first);
    tp[i].second->value = fp[i].second->value.template cast<To>();
  }
  for (std::size_t i = 0; i < tb.size(); ++i) *tb[i].second = fb[i].second->template cast<To>();
}

}  // namespace fodnet::net
