// RMSprop optimizer; weight decay is added to the gradient inside the step.
#pragma once

#include "fodnet/net/layers.hpp"

#include <vector>

namespace fodnet::net {

struct RmsPropConfig {
  double lr = 3e-2;
  double rho = 0.9;
  double eps = 1e-8;
  double weight_decay = 1e-6;
};

/// acc <- rho*acc + (1-rho)*g^2;  p <- p - lr*(g + wd*p) / (sqrt(acc) + eps)
template <typename S>
class RmsProp {
 public:
  RmsProp(std::vector<Param<S>*> params, RmsPropConfig cfg = {});

  void step();
  RmsPropConfig& config() { return cfg_; }
  const RmsPropConfig& config() const { return cfg_; }
  std::vector<Eigen::Array<S, Eigen::Dynamic, 1>>& accumulators() { return acc_; }
  const std::vector<Eigen::Array<S, Eigen::Dynamic, 1>>& accumulators() const { return acc_; }

 private:
  std::vector<Param<S>*> params_;
  RmsPropConfig cfg_;
  std::vector<Eigen::Array<S, Eigen::Dynamic, 1>> acc_;
};

}  // namespace fodnet::net
