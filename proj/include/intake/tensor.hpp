#pragma once

#include <cstddef>
#include <initializer_list>
#include <new>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

namespace intake {

/// 64-byte aligned blocks. Large blocks are recycled instead of returned to
/// the system; training reallocates the same activation sizes every step and
/// fresh pages cost a fault each.
void* acquire_block(std::size_t bytes);
void release_block(void* p, std::size_t bytes) noexcept;

/// Eigen peels reductions to the next aligned address, so a fixed alignment
/// keeps summation order, and therefore results, identical from run to run.
/// Elements are default-initialized: `Storage(n)` leaves doubles unset.
template <class T>
struct AlignedAllocator {
  using value_type = T;

  AlignedAllocator() = default;
  template <class U>
  AlignedAllocator(const AlignedAllocator<U>&) {}

  T* allocate(std::size_t n) { return static_cast<T*>(acquire_block(n * sizeof(T))); }
  void deallocate(T* p, std::size_t n) noexcept { release_block(p, n * sizeof(T)); }

  template <class U>
  void construct(U* p) noexcept {
    ::new (static_cast<void*>(p)) U;
  }
  template <class U, class... Args>
  void construct(U* p, Args&&... args) {
    ::new (static_cast<void*>(p)) U(std::forward<Args>(args)...);
  }

  template <class U>
  bool operator==(const AlignedAllocator<U>&) const { return true; }
};

using Storage = std::vector<double, AlignedAllocator<double>>;

/// Dense row-major tensor of doubles. Shape entries are positive.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> shape, double fill = 0.0);
  Tensor(std::vector<std::size_t> shape, std::span<const double> data);
  Tensor(std::vector<std::size_t> shape, std::initializer_list<double> data)
      : Tensor(std::move(shape), std::span<const double>(data.begin(), data.size())) {}
  Tensor(std::vector<std::size_t> shape, const std::vector<double>& data)
      : Tensor(std::move(shape), std::span<const double>(data)) {}
  Tensor(std::vector<std::size_t> shape, Storage data);

  static Tensor like(const Tensor& other, double fill = 0.0) { return Tensor(other.shape_, fill); }
  /// Contents unspecified; for outputs that are written in full.
  static Tensor uninitialized(std::vector<std::size_t> shape);

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }
  Storage& storage() { return data_; }
  const Storage& storage() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double& at(std::initializer_list<std::size_t> index) { return data_[offset(index)]; }
  double at(std::initializer_list<std::size_t> index) const { return data_[offset(index)]; }

  void fill(double value);
  void set_zero() { fill(0.0); }

  /// Same data, new shape with the same element count.
  Tensor reshaped(std::vector<std::size_t> shape) const;

  bool all_finite() const;
  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
  std::string shape_string() const;

  Tensor& operator+=(const Tensor& other);

 private:
  std::size_t offset(std::initializer_list<std::size_t> index) const;

  std::vector<std::size_t> shape_;
  Storage data_;
};

std::size_t shape_size(const std::vector<std::size_t>& shape);

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;

/// Views `rows * cols` contiguous doubles starting at `ptr` as a row-major matrix.
inline MatrixMap as_matrix(double* ptr, std::size_t rows, std::size_t cols) {
  return MatrixMap(ptr, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}
inline ConstMatrixMap as_matrix(const double* ptr, std::size_t rows, std::size_t cols) {
  return ConstMatrixMap(ptr, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

}  // namespace intake
