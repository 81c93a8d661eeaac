#pragma once

#include <cassert>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

namespace fbocc {

/// Dense row-major N-d array of doubles. All feature maps, frustum
/// features, voxel volumes and probability volumes in this project are
/// stored as Tensors; shapes are fixed at construction.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> shape, double fill = 0.0);

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_[i]; }
  std::size_t size() const { return data_.size(); }
  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::span<const double> values() const { return data_; }
  std::span<double> values() { return data_; }

  double& operator[](std::size_t flat) { return data_[flat]; }
  double operator[](std::size_t flat) const { return data_[flat]; }

  double& operator()(std::size_t i) {
    assert(rank() == 1);
    return data_[i];
  }
  double operator()(std::size_t i) const {
    assert(rank() == 1);
    return data_[i];
  }
  double& operator()(std::size_t i, std::size_t j) {
    assert(rank() == 2);
    return data_[i * stride_[0] + j];
  }
  double operator()(std::size_t i, std::size_t j) const {
    assert(rank() == 2);
    return data_[i * stride_[0] + j];
  }
  double& operator()(std::size_t i, std::size_t j, std::size_t k) {
    assert(rank() == 3);
    return data_[i * stride_[0] + j * stride_[1] + k];
  }
  double operator()(std::size_t i, std::size_t j, std::size_t k) const {
    assert(rank() == 3);
    return data_[i * stride_[0] + j * stride_[1] + k];
  }
  double& operator()(std::size_t i, std::size_t j, std::size_t k, std::size_t l) {
    assert(rank() == 4);
    return data_[i * stride_[0] + j * stride_[1] + k * stride_[2] + l];
  }
  double operator()(std::size_t i, std::size_t j, std::size_t k, std::size_t l) const {
    assert(rank() == 4);
    return data_[i * stride_[0] + j * stride_[1] + k * stride_[2] + l];
  }
  double& operator()(std::size_t i, std::size_t j, std::size_t k, std::size_t l, std::size_t m) {
    assert(rank() == 5);
    return data_[i * stride_[0] + j * stride_[1] + k * stride_[2] + l * stride_[3] + m];
  }
  double operator()(std::size_t i, std::size_t j, std::size_t k, std::size_t l,
                    std::size_t m) const {
    assert(rank() == 5);
    return data_[i * stride_[0] + j * stride_[1] + k * stride_[2] + l * stride_[3] + m];
  }

  bool all_finite() const;
  double sum() const;  // sequential, row-major

 private:
  std::vector<std::size_t> shape_;
  std::vector<std::size_t> stride_;
  std::vector<double> data_;
};

/// Pairwise (binary-tree) summation. Exact for power-of-two counts of
/// identical values, which keeps compress/expand round trips bit-exact.
double pairwise_sum(std::span<const double> xs);

/// FNV-1a over raw bytes; used for golden-output regressions.
std::uint64_t fnv1a64(const void* data, std::size_t nbytes);
std::uint64_t fnv1a64(const Tensor& t);

/// mt19937_64 with a platform-independent uniform mapping (the standard
/// pins the engine's output sequence but not the distributions).
class DeterministicRng {
 public:
  explicit DeterministicRng(std::uint64_t seed) : state_(nullptr) { reseed(seed); }
  ~DeterministicRng();
  DeterministicRng(const DeterministicRng&) = delete;
  DeterministicRng& operator=(const DeterministicRng&) = delete;

  void reseed(std::uint64_t seed);
  std::uint64_t next_u64();
  /// Uniform in [0, 1), 53-bit resolution.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  std::size_t index(std::size_t n) { return static_cast<std::size_t>(next_u64() % n); }

 private:
  void* state_;
};

/// Runs fn(i) for i in [0, n) split over `threads` workers. Blocks are
/// contiguous so callers writing disjoint outputs stay deterministic
/// regardless of the thread count.
void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& fn);

}  // namespace fbocc
