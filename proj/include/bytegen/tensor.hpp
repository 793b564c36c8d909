#pragma once

#include <cassert>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <new>
#include <numeric>
#include <stdexcept>
#include <vector>

namespace bytegen {

// 64-byte-aligned storage. SIMD kernels choose their peeling by the buffer
// address; pinning the alignment makes every run of the same computation
// bit-identical regardless of heap layout.
template <typename T, std::size_t Align>
struct AlignedAllocator {
  using value_type = T;
  template <typename U>
  struct rebind {
    using other = AlignedAllocator<U, Align>;
  };
  AlignedAllocator() = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U, Align>&) {}
  T* allocate(std::size_t n) {
    return static_cast<T*>(::operator new(n * sizeof(T), std::align_val_t(Align)));
  }
  void deallocate(T* p, std::size_t) noexcept {
    ::operator delete(p, std::align_val_t(Align));
  }
  template <typename U>
  bool operator==(const AlignedAllocator<U, Align>&) const {
    return true;
  }
};

using DoubleVec = std::vector<double, AlignedAllocator<double, 64>>;

// Dense double-precision array of rank 0..3. Rank 2 is the workhorse
// (channels x length feature maps); rank 3 holds convolution weights
// [C_out, C_in, K]; rank 0 is a scalar. Row-major layout.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(std::vector<int> shape) {
    Tensor t;
    t.shape_ = std::move(shape);
    t.v_.assign(t.compute_numel(), 0.0);
    return t;
  }

  static Tensor scalar(double value) {
    Tensor t;
    t.v_.assign(1, value);
    return t;
  }

  static Tensor from(std::vector<int> shape, std::vector<double> values) {
    Tensor t;
    t.shape_ = std::move(shape);
    t.v_.assign(values.begin(), values.end());
    if (t.v_.size() != t.compute_numel())
      throw std::invalid_argument("tensor shape does not match value count");
    return t;
  }

  const std::vector<int>& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  std::size_t numel() const { return v_.size(); }
  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  double* data() { return v_.data(); }
  const double* data() const { return v_.data(); }
  DoubleVec& values() { return v_; }
  const DoubleVec& values() const { return v_; }

  double item() const {
    assert(v_.size() == 1);
    return v_[0];
  }

  // rank-2 accessors: [channels, length]
  int channels() const {
    assert(rank() == 2);
    return shape_[0];
  }
  int length() const {
    assert(rank() == 2);
    return shape_[1];
  }
  double& at(int c, int l) {
    assert(rank() == 2);
    return v_[static_cast<std::size_t>(c) * shape_[1] + l];
  }
  double at(int c, int l) const {
    assert(rank() == 2);
    return v_[static_cast<std::size_t>(c) * shape_[1] + l];
  }

  // rank-3 accessors: [d0, d1, d2]
  double& at(int i, int j, int k) {
    assert(rank() == 3);
    return v_[(static_cast<std::size_t>(i) * shape_[1] + j) * shape_[2] + k];
  }
  double at(int i, int j, int k) const {
    assert(rank() == 3);
    return v_[(static_cast<std::size_t>(i) * shape_[1] + j) * shape_[2] + k];
  }

  // rank-1 accessor
  double& operator[](std::size_t i) { return v_[i]; }
  double operator[](std::size_t i) const { return v_[i]; }

  void fill(double x) { std::fill(v_.begin(), v_.end(), x); }

  bool all_finite() const {
    for (double x : v_)
      if (!std::isfinite(x)) return false;
    return true;
  }

 private:
  std::size_t compute_numel() const {
    std::size_t n = 1;
    for (int d : shape_) {
      if (d < 0) throw std::invalid_argument("negative tensor dimension");
      n *= static_cast<std::size_t>(d);
    }
    return n;
  }

  std::vector<int> shape_;
  DoubleVec v_;
};

inline void debug_check_finite(const Tensor& t) {
#ifndef NDEBUG
  assert(t.all_finite());
#else
  (void)t;
#endif
}

}  // namespace bytegen
