// Layer kinds of the CNN engine with hand-written backward passes.
//
// Every layer reads one or two input tensors and writes one output. backward()
// adds into the input-gradient tensors and the parameter gradients, so
// callers zero them first.
#pragma once

#include "fodnet/net/tensor.hpp"

#include <memory>
#include <string>
#include <vector>

namespace fodnet::net {

enum class Mode { train, infer };

enum class ParamRole { conv_weight, bias, bn_scale, bn_shift, prelu_slope };

template <typename S>
struct Param {
  std::string name;
  ParamRole role = ParamRole::bias;
  int fan_in = 0;                              // conv weights only
  Eigen::Array<S, Eigen::Dynamic, 1> value;
  Eigen::Array<S, Eigen::Dynamic, 1> grad;

  Param() = default;
  Param(std::string n, ParamRole r, Eigen::Index size, int fan = 0)
      : name(std::move(n)), role(r), fan_in(fan), value(Eigen::Array<S, Eigen::Dynamic, 1>::Zero(size)),
        grad(Eigen::Array<S, Eigen::Dynamic, 1>::Zero(size)) {}
};

template <typename S>
using Inputs = std::vector<const Tensor4<S>*>;

template <typename S>
class Layer {
 public:
  virtual ~Layer() = default;
  virtual std::string kind() const = 0;

  /// Output shape for the given input shapes; throws std::invalid_argument on mismatch.
  virtual Shape output_shape(const std::vector<Shape>& in) const = 0;

  virtual void forward(const Inputs<S>& in, Tensor4<S>& out, Mode mode) = 0;
  virtual void backward(const Inputs<S>& in, const Tensor4<S>& out, const Tensor4<S>& grad_out,
                        const std::vector<Tensor4<S>*>& grad_in) = 0;

  virtual std::vector<Param<S>*> params() { return {}; }
  /// Non-trainable state saved with the model (batch-norm running statistics).
  virtual std::vector<Eigen::Array<S, Eigen::Dynamic, 1>*> buffers() { return {}; }

  int threads = 1;
};

/// 3D convolution with cubic kernel, "same" zero padding and optional dilation.
template <typename S>
class Conv3d : public Layer<S> {
 public:
  Conv3d(int in_channels, int out_channels, int kernel, int dilation = 1, bool bias = true);
  std::string kind() const override { return "conv3d"; }
  Shape output_shape(const std::vector<Shape>& in) const override;
  void forward(const Inputs<S>& in, Tensor4<S>& out, Mode mode) override;
  void backward(const Inputs<S>& in, const Tensor4<S>& out, const Tensor4<S>& grad_out,
                const std::vector<Tensor4<S>*>& grad_in) override;
  std::vector<Param<S>*> params() override;

  int in_channels() const { return cin_; }
  int out_channels() const { return cout_; }
  int kernel() const { return k_; }
  int dilation() const { return dil_; }

  Param<S> weight;  // [out][in][kz][ky][kx]
  Param<S> bias;

 private:
  int cin_, cout_, k_, dil_;
  bool has_bias_;
};

/// Per-channel batch normalization over batch and space.
template <typename S>
class BatchNorm : public Layer<S> {
 public:
  explicit BatchNorm(int channels, double momentum = 0.1, double eps = 1e-5);
  std::string kind() const override { return "batchnorm"; }
  Shape output_shape(const std::vector<Shape>& in) const override;
  void forward(const Inputs<S>& in, Tensor4<S>& out, Mode mode) override;
  void backward(const Inputs<S>& in, const Tensor4<S>& out, const Tensor4<S>& grad_out,
                const std::vector<Tensor4<S>*>& grad_in) override;
  std::vector<Param<S>*> params() override { return {&scale, &shift}; }
  std::vector<Eigen::Array<S, Eigen::Dynamic, 1>*> buffers() override { return {&running_mean, &running_var}; }

  Param<S> scale;
  Param<S> shift;
  Eigen::Array<S, Eigen::Dynamic, 1> running_mean;
  Eigen::Array<S, Eigen::Dynamic, 1> running_var;

 private:
  int channels_;
  double momentum_, eps_;
  std::vector<double> batch_mean_, batch_invstd_;
  bool used_batch_stats_ = false;
};

/// Leaky rectifier with one learned negative slope per channel.
template <typename S>
class PRelu : public Layer<S> {
 public:
  explicit PRelu(int channels);
  std::string kind() const override { return "prelu"; }
  Shape output_shape(const std::vector<Shape>& in) const override;
  void forward(const Inputs<S>& in, Tensor4<S>& out, Mode mode) override;
  void backward(const Inputs<S>& in, const Tensor4<S>& out, const Tensor4<S>& grad_out,
                const std::vector<Tensor4<S>*>& grad_in) override;
  std::vector<Param<S>*> params() override { return {&slope}; }

  Param<S> slope;

 private:
  int channels_;
};

/// Residual sum: out = main + skip, where a narrower skip is zero-padded in channels.
template <typename S>
class Add : public Layer<S> {
 public:
  std::string kind() const override { return "add"; }
  Shape output_shape(const std::vector<Shape>& in) const override;
  void forward(const Inputs<S>& in, Tensor4<S>& out, Mode mode) override;
  void backward(const Inputs<S>& in, const Tensor4<S>& out, const Tensor4<S>& grad_out,
                const std::vector<Tensor4<S>*>& grad_in) override;
};

/// 2x2x2 max pooling with stride 2 (spatial sizes must be even).
template <typename S>
class MaxPool2 : public Layer<S> {
 public:
  std::string kind() const override { return "maxpool2"; }
  Shape output_shape(const std::vector<Shape>& in) const override;
  void forward(const Inputs<S>& in, Tensor4<S>& out, Mode mode) override;
  void backward(const Inputs<S>& in, const Tensor4<S>& out, const Tensor4<S>& grad_out,
                const std::vector<Tensor4<S>*>& grad_in) override;

 private:
  std::vector<std::uint8_t> argmax_;  // winning offset (0..7) per output element
};

/// Nearest-neighbour 2x upsampling.
template <typename S>
class Upsample2 : public Layer<S> {
 public:
  std::string kind() const override { return "upsample2"; }
  Shape output_shape(const std::vector<Shape>& in) const override;
  void forward(const Inputs<S>& in, Tensor4<S>& out, Mode mode) override;
  void backward(const Inputs<S>& in, const Tensor4<S>& out, const Tensor4<S>& grad_out,
                const std::vector<Tensor4<S>*>& grad_in) override;
};

/// Channel concatenation of two inputs.
template <typename S>
class Concat : public Layer<S> {
 public:
  std::string kind() const override { return "concat"; }
  Shape output_shape(const std::vector<Shape>& in) const override;
  void forward(const Inputs<S>& in, Tensor4<S>& out, Mode mode) override;
  void backward(const Inputs<S>& in, const Tensor4<S>& out, const Tensor4<S>& grad_out,
                const std::vector<Tensor4<S>*>& grad_in) override;
};

/// Mean over all elements of (prediction - target)^2 / 2, and its gradient.
template <typename S>
double l2_loss(const Tensor4<S>& prediction, const Tensor4<S>& target, Tensor4<S>* grad = nullptr);

}  // namespace fodnet::net
