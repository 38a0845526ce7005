#pragma once
#include <cstdint>
#include <initializer_list>
#include <memory>
#include <new>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "cubecast/rng.hpp"

namespace cubecast {

using Shape = std::vector<int64_t>;

// 64-byte-aligned allocator for tensor storage. Fixed alignment keeps SIMD
// peel/tail splits in vectorized reductions identical across allocations, so
// repeated runs produce bit-identical floating-point results.
template <typename T>
struct AlignedAlloc {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};
  AlignedAlloc() = default;
  template <typename U>
  AlignedAlloc(const AlignedAlloc<U>&) {}
  T* allocate(std::size_t n) {
    return static_cast<T*>(::operator new(n * sizeof(T), kAlign));
  }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlign); }
  template <typename U>
  bool operator==(const AlignedAlloc<U>&) const {
    return true;
  }
};

inline int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) n *= d;
  return n;
}

std::string shape_str(const Shape& s);

// Dense row-major tensor. Copies share the underlying buffer; kernels always
// allocate fresh outputs, so a tensor is treated as immutable once it has been
// handed to another op. clone() gives an owned deep copy for the few places
// that mutate in place (optimizer state, gradient accumulators).
template <typename T>
class TensorT {
 public:
  using Buffer = std::vector<T, AlignedAlloc<T>>;

  TensorT() = default;
  explicit TensorT(Shape shape)
      : shape_(std::move(shape)), buf_(std::make_shared<Buffer>(shape_numel(shape_), T(0))) {
    check_shape();
  }

  static TensorT full(Shape shape, T value) {
    TensorT t(std::move(shape));
    for (T& v : *t.buf_) v = value;
    return t;
  }

  static TensorT from(Shape shape, const std::vector<T>& data) {
    if (shape_numel(shape) != static_cast<int64_t>(data.size()))
      throw std::invalid_argument("tensor data size does not match shape " + shape_str(shape));
    TensorT t;
    t.shape_ = std::move(shape);
    t.buf_ = std::make_shared<Buffer>(data.begin(), data.end());
    t.check_shape();
    return t;
  }

  static TensorT trunc_normal(Shape shape, double sigma, Rng& rng) {
    TensorT t(std::move(shape));
    for (T& v : *t.buf_) v = static_cast<T>(rng.trunc_normal(sigma));
    return t;
  }

  bool defined() const { return buf_ != nullptr; }
  const Shape& shape() const { return shape_; }
  int64_t dim(int i) const { return shape_.at(static_cast<size_t>(i)); }
  int ndim() const { return static_cast<int>(shape_.size()); }
  int64_t size() const { return buf_ ? static_cast<int64_t>(buf_->size()) : 0; }

  T* data() { return buf_->data(); }
  const T* data() const { return buf_->data(); }
  const void* buffer_id() const { return static_cast<const void*>(buf_.get()); }

  T& operator[](int64_t i) { return (*buf_)[static_cast<size_t>(i)]; }
  const T& operator[](int64_t i) const { return (*buf_)[static_cast<size_t>(i)]; }

  // Row-major multi-index access, mainly for tests and small loops.
  template <typename... Ix>
  T& at(Ix... ix) {
    return (*buf_)[static_cast<size_t>(offset({static_cast<int64_t>(ix)...}))];
  }
  template <typename... Ix>
  const T& at(Ix... ix) const {
    return (*buf_)[static_cast<size_t>(offset({static_cast<int64_t>(ix)...}))];
  }

  // Shares the buffer; element count must match.
  TensorT reshaped(Shape s) const {
    if (shape_numel(s) != size())
      throw std::invalid_argument("reshape " + shape_str(shape_) + " -> " + shape_str(s) +
                                  " changes element count");
    TensorT t;
    t.shape_ = std::move(s);
    t.buf_ = buf_;
    return t;
  }

  TensorT clone() const {
    TensorT t;
    t.shape_ = shape_;
    t.buf_ = std::make_shared<Buffer>(*buf_);
    return t;
  }

  void fill(T v) {
    for (T& x : *buf_) x = v;
  }

 private:
  int64_t offset(std::initializer_list<int64_t> ix) const {
    if (ix.size() != shape_.size())
      throw std::invalid_argument("index rank mismatch for shape " + shape_str(shape_));
    int64_t off = 0;
    size_t d = 0;
    for (int64_t i : ix) {
      off = off * shape_[d] + i;
      ++d;
    }
    return off;
  }

  void check_shape() const {
    for (int64_t d : shape_)
      if (d <= 0) throw std::invalid_argument("non-positive tensor extent in " + shape_str(shape_));
  }

  Shape shape_;
  std::shared_ptr<Buffer> buf_;
};

using Tensor = TensorT<double>;

// Throws if any element is NaN or infinite; the message names the op so a
// diverged training step points at its source.
template <typename T>
void ensure_finite(const char* op, const TensorT<T>& t);

template <typename T>
double max_abs_diff(const TensorT<T>& a, const TensorT<T>& b);

template <typename T>
bool same_shape(const TensorT<T>& a, const TensorT<T>& b) {
  return a.shape() == b.shape();
}

}  // namespace cubecast
