#include "fodnet/net/tensor.hpp"

namespace fodnet::net {

std::string Shape::str() const {
  return std::to_string(n) + "x" + std::to_string(c) + "x" + std::to_string(x) + "x" + std::to_string(y) + "x" +
         std::to_string(z);
}

}  // namespace fodnet::net
