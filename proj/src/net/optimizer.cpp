#include "fodnet/net/optimizer.hpp"

#include <cmath>

namespace fodnet::net {

template <typename S>
RmsProp<S>::RmsProp(std::vector<Param<S>*> params, RmsPropConfig cfg) : params_(std::move(params)), cfg_(cfg) {
  for (auto* p : params_) acc_.push_back(Eigen::Array<S, Eigen::Dynamic, 1>::Zero(p->value.size()));
}

template <typename S>
void RmsProp<S>::step() {
  const double rho = cfg_.rho, lr = cfg_.lr, wd = cfg_.weight_decay, eps = cfg_.eps;
  for (std::size_t k = 0; k < params_.size(); ++k) {
    Param<S>& p = *params_[k];
    auto& acc = acc_[k];
    for (Eigen::Index i = 0; i < p.value.size(); ++i) {
      const double g = double(p.grad[i]);
      const double a = rho * double(acc[i]) + (1.0 - rho) * g * g;
      acc[i] = S(a);
      p.value[i] = S(double(p.value[i]) - lr * (g + wd * double(p.value[i])) / (std::sqrt(a) + eps));
    }
  }
}

template class RmsProp<float>;
template class RmsProp<double>;

}  // namespace fodnet::net
