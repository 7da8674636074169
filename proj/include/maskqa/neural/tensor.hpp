#pragma once

#include <cstdint>
#include <functional>
#include <new>
#include <numeric>
#include <string>
#include <vector>

#include "maskqa/error.hpp"

namespace maskqa::nn {

/// 64-byte aligned storage. Eigen peels reductions according to the runtime
/// address, so fixed alignment keeps results bit-identical across runs.
template <class T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};

  AlignedAllocator() = default;
  template <class U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlign); }

  template <class U>
  bool operator==(const AlignedAllocator<U>&) const noexcept { return true; }
};

template <class T>
using Buffer = std::vector<T, AlignedAllocator<T>>;

/// Dense row-major tensor. Volumes use (N, C, D, H, W) with W = x fastest.
template <class T>
struct Tensor {
  std::vector<int> shape;
  Buffer<T> data;

  Tensor() = default;
  explicit Tensor(std::vector<int> s, T fill = T(0))
      : shape(std::move(s)), data(static_cast<std::size_t>(numel(shape)), fill) {}

  static std::int64_t numel(const std::vector<int>& s) {
    return std::accumulate(s.begin(), s.end(), std::int64_t{1},
                           [](std::int64_t a, int b) { return a * b; });
  }

  std::int64_t size() const { return static_cast<std::int64_t>(data.size()); }
  int rank() const { return static_cast<int>(shape.size()); }
  int dim(int i) const { return shape[static_cast<std::size_t>(i)]; }
  bool empty() const { return data.empty(); }

  /// Elements per sample (everything after the batch axis).
  std::int64_t sample_size() const { return shape.empty() ? 0 : size() / shape[0]; }
  /// Elements per channel (everything after the channel axis).
  std::int64_t spatial_size() const {
    std::int64_t s = 1;
    for (std::size_t i = 2; i < shape.size(); ++i) s *= shape[i];
    return s;
  }

  T* sample(int n) { return data.data() + n * sample_size(); }
  const T* sample(int n) const { return data.data() + n * sample_size(); }

  void fill(T v) { std::fill(data.begin(), data.end(), v); }

  template <class U>
  Tensor<U> cast() const {
    Tensor<U> out;
    out.shape = shape;
    out.data.assign(data.begin(), data.end());
    return out;
  }

  bool operator==(const Tensor&) const = default;
};

template <class T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* what) {
  require(a.shape == b.shape, ErrorKind::DimensionMismatch, std::string(what) + ": shape mismatch");
}

/// A trainable tensor with its gradient and Adam moments.
template <class T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;
  Tensor<T> m;
  Tensor<T> v;
  std::int64_t step = 0;

  Parameter() = default;
  Parameter(std::string n, std::vector<int> shape)
      : name(std::move(n)), value(shape), grad(shape), m(shape), v(shape) {}

  void zero_grad() { grad.fill(T(0)); }
};

std::string shape_string(const std::vector<int>& shape);

}  // namespace maskqa::nn
