// Finite-difference gradient oracles for layers and whole networks.
#pragma once

#include "fodnet/net/network.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

namespace net_oracle {

using namespace fodnet::net;

inline Tensor4<double> random_tensor(Shape s, std::mt19937_64& rng, double scale = 1.0) {
  Tensor4<double> t(s);
  std::normal_distribution<double> n(0.0, scale);
  for (auto& v : t.values()) v = n(rng);
  return t;
}

inline double dot(const Tensor4<double>& a, const Tensor4<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a.data()[i] * b.data()[i];
  return s;
}

// Relative error with an absolute floor for gradients that vanish analytically.
inline double rel_error(double analytic, double numeric, double floor = 1e-6) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

// Indices to probe: all when few, else a fixed random subset.
inline std::vector<std::size_t> probe(std::size_t n, std::mt19937_64& rng, std::size_t max = 80) {
  std::vector<std::size_t> idx;
  if (n <= max) {
    for (std::size_t i = 0; i < n; ++i) idx.push_back(i);
  } else {
    std::uniform_int_distribution<std::size_t> u(0, n - 1);
    for (std::size_t k = 0; k < max; ++k) idx.push_back(u(rng));
  }
  return idx;
}

// Central-difference check of a scalar objective sum(R * layer(inputs)).
inline double layer_gradient_error(Layer<double>& layer, std::vector<Tensor4<double>> inputs, Mode mode,
                            std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const double h = 1e-4;
  auto objective_of = [&](const Tensor4<double>& weights) {
    Inputs<double> in;
    for (auto& t : inputs) in.push_back(&t);
    Tensor4<double> out;
    layer.forward(in, out, mode);
    return dot(out, weights);
  };
  Inputs<double> in;
  for (auto& t : inputs) in.push_back(&t);
  Tensor4<double> out;
  layer.forward(in, out, mode);
  const Tensor4<double> upstream = random_tensor(out.shape(), rng);
  std::vector<Tensor4<double>> gin;
  for (auto& t : inputs) gin.emplace_back(t.shape());
  std::vector<Tensor4<double>*> gptr;
  for (auto& g : gin) gptr.push_back(&g);
  for (auto* p : layer.params()) p->grad.setZero();
  layer.backward(in, out, upstream, gptr);

  double worst = 0.0;
  for (auto* p : layer.params())
    for (std::size_t i : probe(std::size_t(p->value.size()), rng)) {
      const double v = p->value[Eigen::Index(i)];
      p->value[Eigen::Index(i)] = v + h;
      const double fp = objective_of(upstream);
      p->value[Eigen::Index(i)] = v - h;
      const double fm = objective_of(upstream);
      p->value[Eigen::Index(i)] = v;
      worst = std::max(worst, rel_error(p->grad[Eigen::Index(i)], (fp - fm) / (2 * h)));
    }
  for (std::size_t k = 0; k < inputs.size(); ++k)
    for (std::size_t i : probe(inputs[k].size(), rng)) {
      const double v = inputs[k].data()[i];
      inputs[k].data()[i] = v + h;
      const double fp = objective_of(upstream);
      inputs[k].data()[i] = v - h;
      const double fm = objective_of(upstream);
      inputs[k].data()[i] = v;
      worst = std::max(worst, rel_error(gin[k].data()[i], (fp - fm) / (2 * h)));
    }
  return worst;
}

inline void randomize(Layer<double>& layer, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 0.5);
  for (auto* p : layer.params())
    for (Eigen::Index i = 0; i < p->value.size(); ++i) p->value[i] = n(rng);
}

// Central-difference check of the L2 loss through a whole network.
inline double network_gradient_error(Network<double>& net, Shape s, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  he_uniform_init(net, seed);
  for (auto* p : net.params())
    if (p->role != ParamRole::conv_weight) {
      std::normal_distribution<double> n(0.0, 0.1);
      for (Eigen::Index i = 0; i < p->value.size(); ++i) p->value[i] += n(rng);
    }
  Tensor4<double> x = random_tensor(s, rng);
  Shape os = s;
  os.c = net.out_channels();
  const Tensor4<double> target = random_tensor(os, rng);
  auto loss_at = [&]() {
    const auto& y = net.forward(x, Mode::train);
    return l2_loss(y, target);
  };
  Tensor4<double> g;
  l2_loss(net.forward(x, Mode::train), target, &g);
  net.zero_grad();
  const Tensor4<double> gx = net.backward(g, true);
  // A smaller step keeps the probes from straddling PReLU kinks deep in the graph.
  const double h = 1e-6;
  double worst = 0.0;
  for (auto* p : net.params())
    for (std::size_t i : probe(std::size_t(p->value.size()), rng, 6)) {
      const double v = p->value[Eigen::Index(i)];
      p->value[Eigen::Index(i)] = v + h;
      const double fp = loss_at();
      p->value[Eigen::Index(i)] = v - h;
      const double fm = loss_at();
      p->value[Eigen::Index(i)] = v;
      worst = std::max(worst, rel_error(p->grad[Eigen::Index(i)], (fp - fm) / (2 * h), 1e-5));
    }
  for (std::size_t i : probe(x.size(), rng, 40)) {
    const double v = x.data()[i];
    x.data()[i] = v + h;
    const double fp = loss_at();
    x.data()[i] = v - h;
    const double fm = loss_at();
    x.data()[i] = v;
    worst = std::max(worst, rel_error(gx.data()[i], (fp - fm) / (2 * h), 1e-5));
  }
  return worst;
}

}  // namespace net_oracle
