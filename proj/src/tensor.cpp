#include "intake/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <mutex>
#include <stdexcept>
#include <unordered_map>

namespace intake {

namespace {

constexpr std::align_val_t kAlignment{64};
constexpr std::size_t kRecycleMinBytes = std::size_t{1} << 18;
constexpr std::size_t kRecycleCapBytes = std::size_t{1} << 31;

struct BlockPool {
  std::mutex mutex;
  std::unordered_map<std::size_t, std::vector<void*>> free;
  std::size_t cached = 0;

  ~BlockPool() {
    for (auto& [bytes, blocks] : free) {
      for (void* p : blocks) ::operator delete(p, kAlignment);
    }
  }
};

BlockPool& pool() {
  static BlockPool p;
  return p;
}

}  // namespace

void* acquire_block(std::size_t bytes) {
  if (bytes >= kRecycleMinBytes) {
    BlockPool& p = pool();
    std::lock_guard lock(p.mutex);
    auto it = p.free.find(bytes);
    if (it != p.free.end() && !it->second.empty()) {
      void* block = it->second.back();
      it->second.pop_back();
      p.cached -= bytes;
      return block;
    }
  }
  return ::operator new(bytes, kAlignment);
}

void release_block(void* block, std::size_t bytes) noexcept {
  if (bytes >= kRecycleMinBytes) {
    BlockPool& p = pool();
    std::lock_guard lock(p.mutex);
    if (p.cached + bytes <= kRecycleCapBytes) {
      try {
        p.free[bytes].push_back(block);
        p.cached += bytes;
        return;
      } catch (...) {
      }
    }
  }
  ::operator delete(block, kAlignment);
}

std::size_t shape_size(const std::vector<std::size_t>& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) {
    if (d == 0) throw std::invalid_argument("tensor shape entries must be positive");
    n *= d;
  }
  return n;
}

Tensor::Tensor(std::vector<std::size_t> shape, double fill)
    : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}

Tensor::Tensor(std::vector<std::size_t> shape, std::span<const double> data)
    : shape_(std::move(shape)), data_(data.begin(), data.end()) {
  if (data_.size() != shape_size(shape_)) {
    throw std::invalid_argument("tensor data length does not match shape " + shape_string());
  }
}

Tensor::Tensor(std::vector<std::size_t> shape, Storage data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (data_.size() != shape_size(shape_)) {
    throw std::invalid_argument("tensor data length does not match shape " + shape_string());
  }
}

Tensor Tensor::uninitialized(std::vector<std::size_t> shape) {
  Tensor t;
  t.data_ = Storage(shape_size(shape));
  t.shape_ = std::move(shape);
  return t;
}

void Tensor::fill(double value) { std::fill(data_.begin(), data_.end(), value); }

Tensor Tensor::reshaped(std::vector<std::size_t> shape) const {
  if (shape_size(shape) != data_.size()) {
    throw std::invalid_argument("cannot reshape " + shape_string());
  }
  return Tensor(std::move(shape), data_);
}

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

std::string Tensor::shape_string() const {
  std::ostringstream out;
  out << '(';
  for (std::size_t i = 0; i < shape_.size(); ++i) {
    if (i) out << ", ";
    out << shape_[i];
  }
  out << ')';
  return out.str();
}

Tensor& Tensor::operator+=(const Tensor& other) {
  if (!same_shape(other)) {
    throw std::invalid_argument("shape mismatch in += : " + shape_string() + " vs " + other.shape_string());
  }
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
  return *this;
}

std::size_t Tensor::offset(std::initializer_list<std::size_t> index) const {
  if (index.size() != shape_.size()) throw std::out_of_range("tensor index rank mismatch");
  std::size_t off = 0;
  std::size_t axis = 0;
  for (std::size_t i : index) {
    if (i >= shape_[axis]) throw std::out_of_range("tensor index out of range");
    off = off * shape_[axis] + i;
    ++axis;
  }
  return off;
}

}  // namespace intake
