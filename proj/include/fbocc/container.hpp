#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fbocc/tensor.hpp"

namespace fbocc {

/// Self-describing binary bundle of named arrays.
///
/// Layout (all integers little-endian):
///   magic "FBTC" | u32 version (=1) | u64 header_len | header JSON |
///   payloads, concatenated in header order.
/// The header is {"tensors": [{"name", "dtype", "shape"}, ...]} with
/// dtype one of f64, f32, i32, u8, u64. Payloads are row-major.
class TensorContainer {
 public:
  struct Entry {
    std::string name;
    std::string dtype;
    std::vector<std::size_t> shape;
    std::vector<std::uint8_t> payload;

    std::size_t element_count() const;
  };

  void add_f64(const std::string& name, std::vector<std::size_t> shape,
               std::span<const double> values);
  void add_f32(const std::string& name, std::vector<std::size_t> shape,
               std::span<const float> values);
  void add_i32(const std::string& name, std::vector<std::size_t> shape,
               std::span<const std::int32_t> values);
  void add_u8(const std::string& name, std::vector<std::size_t> shape,
              std::span<const std::uint8_t> values);
  void add_u64(const std::string& name, std::vector<std::size_t> shape,
               std::span<const std::uint64_t> values);
  void add_tensor(const std::string& name, const Tensor& t);

  bool has(const std::string& name) const;
  const Entry& get(const std::string& name) const;
  const std::vector<Entry>& entries() const { return entries_; }

  std::vector<double> as_f64(const std::string& name) const;
  std::vector<float> as_f32(const std::string& name) const;
  std::vector<std::int32_t> as_i32(const std::string& name) const;
  std::vector<std::uint8_t> as_u8(const std::string& name) const;
  std::vector<std::uint64_t> as_u64(const std::string& name) const;
  Tensor get_tensor(const std::string& name) const;

  std::vector<std::uint8_t> serialize() const;
  static TensorContainer parse(std::span<const std::uint8_t> bytes);

  void save(const std::string& path) const;
  static TensorContainer load(const std::string& path);

 private:
  std::vector<Entry> entries_;
};

}  // namespace fbocc
