#include "fbocc/container.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

static_assert(std::endian::native == std::endian::little,
              "TensorContainer payloads are little-endian; big-endian hosts are unsupported");

namespace fbocc {

namespace {

std::size_t dtype_size(const std::string& dtype) {
  if (dtype == "f64" || dtype == "u64") return 8;
  if (dtype == "f32" || dtype == "i32") return 4;
  if (dtype == "u8") return 1;
  throw std::runtime_error("TensorContainer: unknown dtype '" + dtype + "'");
}

template <typename T>
std::vector<std::uint8_t> to_bytes(std::span<const T> values) {
  std::vector<std::uint8_t> bytes(values.size() * sizeof(T));
  std::memcpy(bytes.data(), values.data(), bytes.size());
  return bytes;
}

template <typename T>
std::vector<T> from_bytes(const std::vector<std::uint8_t>& bytes) {
  std::vector<T> values(bytes.size() / sizeof(T));
  std::memcpy(values.data(), bytes.data(), bytes.size());
  return values;
}

std::size_t shape_product(const std::vector<std::size_t>& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

}  // namespace

std::size_t TensorContainer::Entry::element_count() const { return shape_product(shape); }

void TensorContainer::add_f64(const std::string& name, std::vector<std::size_t> shape,
                              std::span<const double> values) {
  if (shape_product(shape) != values.size()) {
    throw std::invalid_argument("TensorContainer: shape does not match value count for '" + name + "'");
  }
  entries_.push_back({name, "f64", std::move(shape), to_bytes(values)});
}

void TensorContainer::add_f32(const std::string& name, std::vector<std::size_t> shape,
                              std::span<const float> values) {
  if (shape_product(shape) != values.size()) {
    throw std::invalid_argument("TensorContainer: shape does not match value count for '" + name + "'");
  }
  entries_.push_back({name, "f32", std::move(shape), to_bytes(values)});
}

void TensorContainer::add_i32(const std::string& name, std::vector<std::size_t> shape,
                              std::span<const std::int32_t> values) {
  if (shape_product(shape) != values.size()) {
    throw std::invalid_argument("TensorContainer: shape does not match value count for '" + name + "'");
  }
  entries_.push_back({name, "i32", std::move(shape), to_bytes(values)});
}

void TensorContainer::add_u8(const std::string& name, std::vector<std::size_t> shape,
                             std::span<const std::uint8_t> values) {
  if (shape_product(shape) != values.size()) {
    throw std::invalid_argument("TensorContainer: shape does not match value count for '" + name + "'");
  }
  entries_.push_back({name, "u8", std::move(shape), to_bytes(values)});
}

void TensorContainer::add_u64(const std::string& name, std::vector<std::size_t> shape,
                              std::span<const std::uint64_t> values) {
  if (shape_product(shape) != values.size()) {
    throw std::invalid_argument("TensorContainer: shape does not match value count for '" + name + "'");
  }
  entries_.push_back({name, "u64", std::move(shape), to_bytes(values)});
}

void TensorContainer::add_tensor(const std::string& name, const Tensor& t) {
  add_f64(name, t.shape(), t.values());
}

bool TensorContainer::has(const std::string& name) const {
  for (const auto& e : entries_) {
    if (e.name == name) return true;
  }
  return false;
}

const TensorContainer::Entry& TensorContainer::get(const std::string& name) const {
  for (const auto& e : entries_) {
    if (e.name == name) return e;
  }
  throw std::runtime_error("TensorContainer: no tensor named '" + name + "'");
}

namespace {
const TensorContainer::Entry& expect_dtype(const TensorContainer::Entry& e, const char* dtype) {
  if (e.dtype != dtype) {
    throw std::runtime_error("TensorContainer: tensor '" + e.name + "' has dtype " + e.dtype +
                             ", expected " + dtype);
  }
  return e;
}
}  // namespace

std::vector<double> TensorContainer::as_f64(const std::string& name) const {
  return from_bytes<double>(expect_dtype(get(name), "f64").payload);
}
std::vector<float> TensorContainer::as_f32(const std::string& name) const {
  return from_bytes<float>(expect_dtype(get(name), "f32").payload);
}
std::vector<std::int32_t> TensorContainer::as_i32(const std::string& name) const {
  return from_bytes<std::int32_t>(expect_dtype(get(name), "i32").payload);
}
std::vector<std::uint8_t> TensorContainer::as_u8(const std::string& name) const {
  return expect_dtype(get(name), "u8").payload;
}
std::vector<std::uint64_t> TensorContainer::as_u64(const std::string& name) const {
  return from_bytes<std::uint64_t>(expect_dtype(get(name), "u64").payload);
}

Tensor TensorContainer::get_tensor(const std::string& name) const {
  const auto& e = expect_dtype(get(name), "f64");
  Tensor t(e.shape);
  std::memcpy(t.data(), e.payload.data(), e.payload.size());
  return t;
}

std::vector<std::uint8_t> TensorContainer::serialize() const {
  nlohmann::json header;
  header["tensors"] = nlohmann::json::array();
  for (const auto& e : entries_) {
    header["tensors"].push_back({{"name", e.name}, {"dtype", e.dtype}, {"shape", e.shape}});
  }
  const std::string header_text = header.dump();

  std::vector<std::uint8_t> out;
  out.insert(out.end(), {'F', 'B', 'T', 'C'});
  const std::uint32_t version = 1;
  const std::uint64_t header_len = header_text.size();
  out.resize(out.size() + sizeof(version) + sizeof(header_len));
  std::memcpy(out.data() + 4, &version, sizeof(version));
  std::memcpy(out.data() + 8, &header_len, sizeof(header_len));
  out.insert(out.end(), header_text.begin(), header_text.end());
  for (const auto& e : entries_) {
    out.insert(out.end(), e.payload.begin(), e.payload.end());
  }
  return out;
}

TensorContainer TensorContainer::parse(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 16) throw std::runtime_error("TensorContainer: file too short for header");
  if (std::memcmp(bytes.data(), "FBTC", 4) != 0) {
    throw std::runtime_error("TensorContainer: bad magic");
  }
  std::uint32_t version = 0;
  std::uint64_t header_len = 0;
  std::memcpy(&version, bytes.data() + 4, sizeof(version));
  std::memcpy(&header_len, bytes.data() + 8, sizeof(header_len));
  if (version != 1) {
    throw std::runtime_error("TensorContainer: unsupported version " + std::to_string(version));
  }
  if (bytes.size() < 16 + header_len) {
    throw std::runtime_error("TensorContainer: truncated header");
  }
  const std::string header_text(reinterpret_cast<const char*>(bytes.data()) + 16,
                                static_cast<std::size_t>(header_len));
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(header_text);
  } catch (const std::exception& e) {
    throw std::runtime_error(std::string("TensorContainer: malformed header JSON: ") + e.what());
  }
  if (!header.contains("tensors") || !header["tensors"].is_array()) {
    throw std::runtime_error("TensorContainer: header missing field 'tensors'");
  }

  TensorContainer out;
  std::size_t offset = 16 + static_cast<std::size_t>(header_len);
  std::size_t index = 0;
  for (const auto& j : header["tensors"]) {
    for (const char* field : {"name", "dtype", "shape"}) {
      if (!j.contains(field)) {
        throw std::runtime_error("TensorContainer: header tensor " + std::to_string(index) +
                                 " missing field '" + field + "'");
      }
    }
    Entry e;
    e.name = j["name"].get<std::string>();
    e.dtype = j["dtype"].get<std::string>();
    e.shape = j["shape"].get<std::vector<std::size_t>>();
    const std::size_t nbytes = e.element_count() * dtype_size(e.dtype);
    if (offset + nbytes > bytes.size()) {
      throw std::runtime_error("TensorContainer: payload length mismatch");
    }
    e.payload.assign(bytes.begin() + static_cast<std::ptrdiff_t>(offset),
                     bytes.begin() + static_cast<std::ptrdiff_t>(offset + nbytes));
    offset += nbytes;
    out.entries_.push_back(std::move(e));
    ++index;
  }
  if (offset != bytes.size()) {
    throw std::runtime_error("TensorContainer: payload length mismatch");
  }
  return out;
}

void TensorContainer::save(const std::string& path) const {
  const auto bytes = serialize();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("TensorContainer: cannot open " + path + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("TensorContainer: write failed for " + path);
}

TensorContainer TensorContainer::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("TensorContainer: cannot open " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return parse(bytes);
}

}  // namespace fbocc
