#pragma once

#define EIGEN_DONT_PARALLELIZE 1

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <initializer_list>
#include <new>
#include <numeric>
#include <sstream>
#include <vector>

#include "hpl/errors.hpp"
#include "hpl/rng.hpp"

namespace hpl {

// 64-byte-aligned storage so every tensor starts on the same cache-line
// boundary. Eigen picks its vectorization split from the pointer's alignment
// class; pinning it makes floating-point results bit-reproducible across
// runs instead of drifting with the allocator's addresses.
template <class T, size_t Align = 64>
struct AlignedAlloc {
  using value_type = T;
  AlignedAlloc() = default;
  template <class U>
  AlignedAlloc(const AlignedAlloc<U, Align>&) {}
  T* allocate(size_t n) {
    if (n == 0) return nullptr;
    const size_t bytes = ((n * sizeof(T) + Align - 1) / Align) * Align;
    void* p = std::aligned_alloc(Align, bytes);
    if (!p) throw std::bad_alloc();
    return static_cast<T*>(p);
  }
  void deallocate(T* p, size_t) noexcept { std::free(p); }
  template <class U>
  struct rebind {
    using other = AlignedAlloc<U, Align>;
  };
  bool operator==(const AlignedAlloc&) const { return true; }
  bool operator!=(const AlignedAlloc&) const { return false; }
};

// Dense row-major tensor. The last dimension is the feature axis for every
// matrix-shaped operation; leading dimensions are flattened into rows.
template <class S>
class TensorT {
 public:
  using Scalar = S;
  using Storage = std::vector<S, AlignedAlloc<S>>;
  using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using MapMat = Eigen::Map<Mat>;
  using CMapMat = Eigen::Map<const Mat>;
  using MapVec = Eigen::Map<Eigen::Matrix<S, Eigen::Dynamic, 1>>;
  using CMapVec = Eigen::Map<const Eigen::Matrix<S, Eigen::Dynamic, 1>>;

  TensorT() = default;
  explicit TensorT(std::vector<long> shape, S fill = S(0))
      : shape_(std::move(shape)), data_(checked_numel(shape_), fill) {}
  TensorT(std::initializer_list<long> shape, S fill = S(0))
      : TensorT(std::vector<long>(shape), fill) {}

  static TensorT zeros(std::vector<long> shape) { return TensorT(std::move(shape)); }
  static TensorT full(std::vector<long> shape, S v) { return TensorT(std::move(shape), v); }
  static TensorT scalar(S v) { return TensorT({1}, v); }

  static TensorT randn(std::vector<long> shape, Rng& rng, double stddev = 1.0) {
    TensorT t(std::move(shape));
    for (auto& v : t.data_) v = static_cast<S>(rng.normal(0.0, stddev));
    return t;
  }

  static TensorT from_vector(std::vector<long> shape, const std::vector<S>& values) {
    TensorT t;
    t.shape_ = std::move(shape);
    if (checked_numel(t.shape_) != static_cast<long>(values.size()))
      throw ParamError("tensor: value count does not match shape");
    t.data_.assign(values.begin(), values.end());
    return t;
  }

  const std::vector<long>& shape() const { return shape_; }
  long dim(size_t i) const { return shape_.at(i); }
  size_t ndim() const { return shape_.size(); }
  long numel() const { return static_cast<long>(data_.size()); }
  bool empty() const { return data_.empty(); }

  long rows() const {
    if (shape_.empty()) return 0;
    long r = 1;
    for (size_t i = 0; i + 1 < shape_.size(); ++i) r *= shape_[i];
    return r;
  }
  long cols() const { return shape_.empty() ? 0 : shape_.back(); }

  S* ptr() { return data_.data(); }
  const S* ptr() const { return data_.data(); }
  S& operator[](long i) { return data_[i]; }
  const S& operator[](long i) const { return data_[i]; }
  Storage& raw() { return data_; }
  const Storage& raw() const { return data_; }

  S item() const {
    if (numel() != 1) throw ParamError("tensor: item() on non-scalar");
    return data_[0];
  }

  MapMat mat() { return MapMat(ptr(), rows(), cols()); }
  CMapMat mat() const { return CMapMat(ptr(), rows(), cols()); }
  MapMat mat(long r, long c) {
    if (r * c != numel()) throw ParamError("tensor: mat() view size mismatch");
    return MapMat(ptr(), r, c);
  }
  CMapMat mat(long r, long c) const {
    if (r * c != numel()) throw ParamError("tensor: mat() view size mismatch");
    return CMapMat(ptr(), r, c);
  }
  MapVec vec() { return MapVec(ptr(), numel()); }
  CMapVec vec() const { return CMapVec(ptr(), numel()); }

  // Same storage, new shape.
  TensorT reshaped(std::vector<long> shape) const {
    TensorT t = *this;
    if (checked_numel(shape) != numel()) throw ParamError("tensor: reshape size mismatch");
    t.shape_ = std::move(shape);
    return t;
  }

  void fill(S v) { std::fill(data_.begin(), data_.end(), v); }

  bool same_shape(const TensorT& o) const { return shape_ == o.shape_; }

  bool all_finite() const {
    for (const S& v : data_)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }

  std::string shape_str() const {
    std::ostringstream os;
    os << '[';
    for (size_t i = 0; i < shape_.size(); ++i) os << (i ? "," : "") << shape_[i];
    os << ']';
    return os.str();
  }

  template <class T2>
  TensorT<T2> cast() const {
    TensorT<T2> out;
    out = TensorT<T2>::from_vector(shape_, std::vector<T2>(data_.begin(), data_.end()));
    return out;
  }

 private:
  static long checked_numel(const std::vector<long>& shape) {
    long n = shape.empty() ? 0 : 1;
    for (long d : shape) {
      if (d < 0) throw ParamError("tensor: negative dimension");
      n *= d;
    }
    return n;
  }

  std::vector<long> shape_;
  Storage data_;
};

using Real = float;  // training precision
using Tensor = TensorT<Real>;
using TensorD = TensorT<double>;

// Mask / index companions.
using ByteTensor = TensorT<uint8_t>;
using IndexVec = std::vector<long>;

}  // namespace hpl
