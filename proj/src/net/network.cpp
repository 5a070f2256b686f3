#include "fodnet/net/network.hpp"

#include <cmath>
#include <map>
#include <random>
#include <stdexcept>

namespace fodnet::net {

namespace {

LayerSpec conv(std::string name, int channels, int kernel = 3, int dilation = 1, std::vector<std::string> in = {}) {
  LayerSpec l;
  l.name = std::move(name);
  l.kind = "conv3d";
  l.channels = channels;
  l.kernel = kernel;
  l.dilation = dilation;
  l.inputs = std::move(in);
  return l;
}

LayerSpec simple(std::string name, std::string kind, std::vector<std::string> in = {}) {
  LayerSpec l;
  l.name = std::move(name);
  l.kind = std::move(kind);
  l.inputs = std::move(in);
  return l;
}

void conv_bn_act(std::vector<LayerSpec>& ls, const std::string& name, int channels, int dilation = 1) {
  ls.push_back(conv(name, channels, 3, dilation));
  ls.push_back(simple(name + "_bn", "batchnorm"));
  ls.push_back(simple(name + "_act", "prelu"));
}

// Pre-activation residual block; returns the name of its output node.
std::string residual_block(std::vector<LayerSpec>& ls, const std::string& name, const std::string& input, int channels,
                           int dilation) {
  ls.push_back(simple(name + "_bn1", "batchnorm", {input}));
  ls.push_back(simple(name + "_act1", "prelu"));
  ls.push_back(conv(name + "_conv1", channels, 3, dilation));
  ls.push_back(simple(name + "_bn2", "batchnorm"));
  ls.push_back(simple(name + "_act2", "prelu"));
  ls.push_back(conv(name + "_conv2", channels, 3, dilation));
  ls.push_back(simple(name + "_add", "add", {name + "_conv2", input}));
  return name + "_add";
}

struct Node {
  int channels = 0;
  int level = 0;  // pooling depth
};

// Resolves input names to node indices (-1 = network input) and channel counts.
std::vector<std::vector<int>> wire(const NetworkSpec& spec, std::vector<Node>* nodes) {
  std::map<std::string, int> index;
  std::vector<std::vector<int>> wiring;
  nodes->clear();
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const LayerSpec& l = spec.layers[i];
    const std::string where = "layer '" + l.name + "' (" + l.kind + "): ";
    if (l.name.empty() || l.name == "input" || index.count(l.name))
      throw std::invalid_argument(where + "missing, reserved or duplicate name");
    std::vector<int> in;
    if (l.inputs.empty()) {
      in.push_back(int(i) - 1);
    } else {
      for (const auto& n : l.inputs) {
        if (n == "input") {
          in.push_back(-1);
        } else {
          const auto it = index.find(n);
          if (it == index.end()) throw std::invalid_argument(where + "unknown input '" + n + "'");
          in.push_back(it->second);
        }
      }
    }
    auto node_of = [&](int k) { return k < 0 ? Node{spec.in_channels, 0} : (*nodes)[std::size_t(k)]; };
    const bool binary = l.kind == "add" || l.kind == "concat";
    if (in.size() != (binary ? 2u : 1u))
      throw std::invalid_argument(where + "expects " + std::string(binary ? "2" : "1") + " input(s)");
    Node a = node_of(in[0]);
    Node out = a;
    if (l.kind == "conv3d") {
      if (l.channels <= 0) throw std::invalid_argument(where + "channels must be positive");
      out.channels = l.channels;
    } else if (l.kind == "batchnorm" || l.kind == "prelu") {
    } else if (l.kind == "maxpool2") {
      out.level = a.level + 1;
    } else if (l.kind == "upsample2") {
      if (a.level == 0) throw std::invalid_argument(where + "upsampling above input resolution");
      out.level = a.level - 1;
    } else if (binary) {
      const Node b = node_of(in[1]);
      if (a.level != b.level) throw std::invalid_argument(where + "inputs at different resolutions");
      if (l.kind == "add" && b.channels > a.channels)
        throw std::invalid_argument(where + "skip input wider than main input");
      if (l.kind == "concat") out.channels = a.channels + b.channels;
    } else {
      throw std::invalid_argument(where + "unknown layer kind");
    }
    nodes->push_back(out);
    index[l.name] = int(i);
    wiring.push_back(in);
  }
  if (spec.layers.empty()) throw std::invalid_argument("network has no layers");
  if (nodes->back().level != 0) throw std::invalid_argument("network output is not at input resolution");
  return wiring;
}

}  // namespace

NetworkSpec highresnet_lite(int channels) {
  NetworkSpec s;
  s.arch = "highresnet";
  s.in_channels = channels;
  auto& ls = s.layers;
  ls.push_back(conv("conv0", 20, 3, 1, {"input"}));
  ls.push_back(simple("conv0_bn", "batchnorm"));
  ls.push_back(simple("conv0_act", "prelu"));
  std::string x = "conv0_act";
  x = residual_block(ls, "l1b1", x, 20, 1);
  x = residual_block(ls, "l1b2", x, 20, 1);
  x = residual_block(ls, "l2b1", x, 32, 2);
  x = residual_block(ls, "l2b2", x, 32, 2);
  ls.push_back(simple("final_bn", "batchnorm", {x}));
  ls.push_back(simple("final_act", "prelu"));
  ls.push_back(conv("head", channels, 1));
  return s;
}

NetworkSpec unet_lite(int channels) {
  NetworkSpec s;
  s.arch = "unet";
  s.in_channels = channels;
  auto& ls = s.layers;
  conv_bn_act(ls, "enc1", 48);
  ls.front().inputs = {"input"};
  conv_bn_act(ls, "enc2", 48);
  conv_bn_act(ls, "enc3", 96);
  ls.push_back(simple("pool", "maxpool2"));
  conv_bn_act(ls, "mid1", 192);
  conv_bn_act(ls, "mid2", 192);
  conv_bn_act(ls, "mid3", 192);
  conv_bn_act(ls, "mid4", 96);
  ls.push_back(simple("up", "upsample2"));
  ls.push_back(simple("skip", "concat", {"up", "enc3_act"}));
  conv_bn_act(ls, "dec1", 96);
  conv_bn_act(ls, "dec2", 48);
  ls.push_back(conv("head", channels, 1));
  return s;
}

NetworkSpec identity_net(int channels) {
  NetworkSpec s;
  s.arch = "identity";
  s.in_channels = channels;
  s.layers.push_back(conv("head", channels, 1, 1, {"input"}));
  return s;
}

NetworkSpec architecture(const std::string& name, int channels) {
  if (name == "highresnet") return highresnet_lite(channels);
  if (name == "unet") return unet_lite(channels);
  if (name == "identity") return identity_net(channels);
  throw std::invalid_argument("unknown architecture '" + name + "' (expected highresnet, unet or identity)");
}

int receptive_field(const NetworkSpec& spec) {
  std::vector<Node> nodes;
  const auto wiring = wire(spec, &nodes);
  // Per node: receptive field edge and input-voxel spacing of one output step.
  std::vector<int> rf(spec.layers.size()), jump(spec.layers.size());
  auto rf_of = [&](int k) { return k < 0 ? 1 : rf[std::size_t(k)]; };
  auto jump_of = [&](int k) { return k < 0 ? 1 : jump[std::size_t(k)]; };
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const LayerSpec& l = spec.layers[i];
    const int a = wiring[i][0];
    int r = rf_of(a), j = jump_of(a);
    if (l.kind == "conv3d") {
      r += (l.kernel - 1) * l.dilation * j;
    } else if (l.kind == "maxpool2") {
      r += j;
      j *= 2;
    } else if (l.kind == "upsample2") {
      j /= 2;
    } else if (wiring[i].size() == 2) {
      r = std::max(r, rf_of(wiring[i][1]));
    }
    rf[i] = r;
    jump[i] = j;
  }
  return rf.back();
}

int size_multiple(const NetworkSpec& spec) {
  std::vector<Node> nodes;
  wire(spec, &nodes);
  int depth = 0;
  for (const auto& n : nodes) depth = std::max(depth, n.level);
  return 1 << depth;
}

template <typename S>
Network<S>::Network(NetworkSpec spec, int threads) : spec_(std::move(spec)) {
  std::vector<Node> nodes;
  inputs_ = wire(spec_, &nodes);
  for (std::size_t i = 0; i < spec_.layers.size(); ++i) {
    const LayerSpec& l = spec_.layers[i];
    const int in_c = inputs_[i][0] < 0 ? spec_.in_channels : nodes[std::size_t(inputs_[i][0])].channels;
    std::unique_ptr<Layer<S>> layer;
    if (l.kind == "conv3d")
      layer = std::make_unique<Conv3d<S>>(in_c, l.channels, l.kernel, l.dilation, l.bias);
    else if (l.kind == "batchnorm")
      layer = std::make_unique<BatchNorm<S>>(in_c);
    else if (l.kind == "prelu")
      layer = std::make_unique<PRelu<S>>(in_c);
    else if (l.kind == "add")
      layer = std::make_unique<Add<S>>();
    else if (l.kind == "maxpool2")
      layer = std::make_unique<MaxPool2<S>>();
    else if (l.kind == "upsample2")
      layer = std::make_unique<Upsample2<S>>();
    else
      layer = std::make_unique<Concat<S>>();
    layers_.push_back(std::move(layer));
  }
  out_channels_ = nodes.back().channels;
  set_threads(threads);
}

template <typename S>
void Network<S>::set_threads(int threads) {
  for (auto& l : layers_) l->threads = std::max(1, threads);
}

template <typename S>
Shape Network<S>::output_shape(const Shape& input) const {
  std::vector<Shape> shapes;
  shapes.reserve(layers_.size());
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    std::vector<Shape> in;
    for (int k : inputs_[i]) in.push_back(k < 0 ? input : shapes[std::size_t(k)]);
    try {
      shapes.push_back(layers_[i]->output_shape(in));
    } catch (const std::invalid_argument& e) {
      throw std::invalid_argument("layer '" + spec_.layers[i].name + "': " + e.what());
    }
  }
  return shapes.back();
}

template <typename S>
const Tensor4<S>& Network<S>::forward(const Tensor4<S>& x, Mode mode) {
  output_shape(x.shape());
  cached_ = false;
  input_ = x;
  outputs_.resize(layers_.size());
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    Inputs<S> in;
    for (int k : inputs_[i]) in.push_back(k < 0 ? &input_ : &outputs_[std::size_t(k)]);
    layers_[i]->forward(in, outputs_[i], mode);
  }
  cached_ = true;
  return outputs_.back();
}

template <typename S>
Tensor4<S> Network<S>::backward(const Tensor4<S>& grad_out, bool input_grad) {
  if (!cached_) throw std::logic_error("backward called without a cached forward pass");
  if (!(grad_out.shape() == outputs_.back().shape()))
    throw std::invalid_argument("upstream gradient shape " + grad_out.shape().str() + " does not match output " +
                                outputs_.back().shape().str());
  std::vector<Tensor4<S>> grads(layers_.size());
  grads.back() = grad_out;
  Tensor4<S> gin;
  if (input_grad) gin.resize(input_.shape());
  for (std::size_t i = layers_.size(); i-- > 0;) {
    if (grads[i].size() == 0) continue;  // node does not reach the output
    Inputs<S> in;
    std::vector<Tensor4<S>*> gi;
    for (int k : inputs_[i]) {
      if (k < 0) {
        in.push_back(&input_);
        gi.push_back(input_grad ? &gin : nullptr);
      } else {
        Tensor4<S>& g = grads[std::size_t(k)];
        if (g.size() == 0) g.resize(outputs_[std::size_t(k)].shape());
        in.push_back(&outputs_[std::size_t(k)]);
        gi.push_back(&g);
      }
    }
    layers_[i]->backward(in, outputs_[i], grads[i], gi);
    grads[i] = Tensor4<S>();
    if (i + 1 < layers_.size()) outputs_[i] = Tensor4<S>();
  }
  clear_cache();
  return gin;
}

template <typename S>
void Network<S>::clear_cache() {
  cached_ = false;
  outputs_.clear();
  input_ = Tensor4<S>();
}

template <typename S>
void Network<S>::zero_grad() {
  for (auto* p : params()) p->grad.setZero();
}

template <typename S>
std::vector<std::pair<std::string, Param<S>*>> Network<S>::named_params() {
  std::vector<std::pair<std::string, Param<S>*>> out;
  for (std::size_t i = 0; i < layers_.size(); ++i)
    for (auto* p : layers_[i]->params()) out.emplace_back(spec_.layers[i].name + "." + p->name, p);
  return out;
}

template <typename S>
std::vector<std::pair<std::string, Eigen::Array<S, Eigen::Dynamic, 1>*>> Network<S>::named_buffers() {
  std::vector<std::pair<std::string, Eigen::Array<S, Eigen::Dynamic, 1>*>> out;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const auto bufs = layers_[i]->buffers();
    for (std::size_t b = 0; b < bufs.size(); ++b)
      out.emplace_back(spec_.layers[i].name + (b == 0 ? ".running_mean" : ".running_var"), bufs[b]);
  }
  return out;
}

template <typename S>
std::vector<Param<S>*> Network<S>::params() {
  std::vector<Param<S>*> out;
  for (auto& l : layers_)
    for (auto* p : l->params()) out.push_back(p);
  return out;
}

template <typename S>
std::size_t Network<S>::parameter_count() const {
  std::size_t n = 0;
  for (auto& l : layers_)
    for (auto* p : l->params()) n += std::size_t(p->value.size());
  return n;
}

template <typename S>
void he_uniform_init(Network<S>& net, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  for (auto* p : net.params()) {
    switch (p->role) {
      case ParamRole::conv_weight: {
        const double b = std::sqrt(6.0 / double(p->fan_in));
        std::uniform_real_distribution<double> u(-b, b);
        for (Eigen::Index i = 0; i < p->value.size(); ++i) p->value[i] = S(u(rng));
        break;
      }
      case ParamRole::bias:
      case ParamRole::bn_shift:
        p->value.setZero();
        break;
      case ParamRole::bn_scale:
        p->value.setOnes();
        break;
      case ParamRole::prelu_slope:
        p->value.setConstant(S(0.25));
        break;
    }
    p->grad.setZero();
  }
  for (auto& [name, buf] : net.named_buffers()) {
    if (name.ends_with(".running_mean"))
      buf->setZero();
    else
      buf->setOnes();
  }
}

template class Network<float>;
template class Network<double>;
template void he_uniform_init(Network<float>&, std::uint64_t);
template void he_uniform_init(Network<double>&, std::uint64_t);

}  // namespace fodnet::net
