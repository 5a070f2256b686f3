// Batched 4D tensors (channels x X x Y x Z per sample) for the CNN engine.
// Storage is sample-major, then channel, then z, y, x (x fastest), so one
// sample is a channels x voxels row-major matrix.
#pragma once

#include <Eigen/Core>
#include <Eigen/StdVector>

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace fodnet::net {

struct Shape {
  int n = 1;  // batch
  int c = 0;
  int x = 0;
  int y = 0;
  int z = 0;

  std::size_t voxels() const { return std::size_t(x) * std::size_t(y) * std::size_t(z); }
  std::size_t sample_size() const { return std::size_t(c) * voxels(); }
  std::size_t size() const { return std::size_t(n) * sample_size(); }
  bool same_spatial(const Shape& o) const { return x == o.x && y == o.y && z == o.z; }
  bool operator==(const Shape&) const = default;
  std::string str() const;
};

template <typename S>
using RowMat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename S>
class Tensor4 {
 public:
  Tensor4() = default;
  explicit Tensor4(Shape shape, S fill = S(0)) : shape_(shape), data_(shape.size(), fill) {}

  const Shape& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }
  S* data() { return data_.data(); }
  const S* data() const { return data_.data(); }
  using Storage = std::vector<S, Eigen::aligned_allocator<S>>;
  Storage& values() { return data_; }
  const Storage& values() const { return data_; }

  S* sample(int n) { return data_.data() + std::size_t(n) * shape_.sample_size(); }
  const S* sample(int n) const { return data_.data() + std::size_t(n) * shape_.sample_size(); }
  S* channel(int n, int c) { return sample(n) + std::size_t(c) * shape_.voxels(); }
  const S* channel(int n, int c) const { return sample(n) + std::size_t(c) * shape_.voxels(); }

  /// One sample as a channels x voxels matrix.
  Eigen::Map<RowMat<S>> matrix(int n) { return {sample(n), shape_.c, Eigen::Index(shape_.voxels())}; }
  Eigen::Map<const RowMat<S>> matrix(int n) const { return {sample(n), shape_.c, Eigen::Index(shape_.voxels())}; }

  Eigen::Map<Eigen::Array<S, Eigen::Dynamic, 1>> array() { return {data_.data(), Eigen::Index(data_.size())}; }
  Eigen::Map<const Eigen::Array<S, Eigen::Dynamic, 1>> array() const {
    return {data_.data(), Eigen::Index(data_.size())};
  }

  S& at(int n, int c, int x, int y, int z) { return data_[index(n, c, x, y, z)]; }
  S at(int n, int c, int x, int y, int z) const { return data_[index(n, c, x, y, z)]; }
  std::size_t index(int n, int c, int x, int y, int z) const {
    return ((((std::size_t(n) * shape_.c + c) * shape_.z + z) * shape_.y + y) * shape_.x) + x;
  }

  void resize(Shape shape) {
    shape_ = shape;
    data_.assign(shape.size(), S(0));
  }
  void set_zero() { std::fill(data_.begin(), data_.end(), S(0)); }
  bool all_finite() const {
    for (S v : data_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  template <typename T>
  Tensor4<T> cast() const {
    Tensor4<T> out(shape_);
    for (std::size_t i = 0; i < data_.size(); ++i) out.data()[i] = T(data_[i]);
    return out;
  }

 private:
  Shape shape_;
  // Fixed alignment keeps vectorized reductions identical across allocations.
  std::vector<S, Eigen::aligned_allocator<S>> data_;
};

}  // namespace fodnet::net
