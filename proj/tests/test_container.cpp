#include <doctest.h>

#include <cstdio>
#include <cstring>
#include <filesystem>

#include "fbocc/container.hpp"
#include "fbocc/scene.hpp"

using namespace fbocc;

TEST_CASE("container round trip is byte identical") {
  TensorContainer c;
  DeterministicRng rng(5);
  Tensor t({3, 20, 20, 16});
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(-4.0, 4.0);
  c.add_tensor("volume", t);
  std::vector<std::uint8_t> mask(100, 1);
  mask[3] = 0;
  c.add_u8("mask", {10, 10}, mask);
  std::vector<std::int32_t> ids = {1, -2, 3};
  c.add_i32("ids", {3}, ids);

  const auto bytes = c.serialize();
  const auto parsed = TensorContainer::parse(bytes);
  CHECK(parsed.serialize() == bytes);

  const auto back = parsed.get_tensor("volume");
  CHECK(back.shape() == t.shape());
  CHECK(fnv1a64(back) == fnv1a64(t));
  CHECK(parsed.as_u8("mask") == mask);
  CHECK(parsed.as_i32("ids") == ids);
}

TEST_CASE("container file save/load") {
  const auto path = std::filesystem::temp_directory_path() / "fbocc_container_test.ftc";
  TensorContainer c;
  Tensor t({4, 4});
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<double>(i);
  c.add_tensor("grid", t);
  c.save(path.string());
  const auto loaded = TensorContainer::load(path.string());
  CHECK(loaded.serialize() == c.serialize());
  std::filesystem::remove(path);
}

TEST_CASE("container structured errors") {
  TensorContainer c;
  std::vector<double> vals = {1.0, 2.0, 3.0, 4.0};
  c.add_f64("x", {2, 2}, vals);
  auto bytes = c.serialize();

  SUBCASE("truncated payload") {
    bytes.resize(bytes.size() - 8);
    CHECK_THROWS_WITH_AS(TensorContainer::parse(bytes),
                         "TensorContainer: payload length mismatch", std::runtime_error);
  }

  SUBCASE("trailing garbage") {
    bytes.push_back(0);
    CHECK_THROWS_WITH_AS(TensorContainer::parse(bytes),
                         "TensorContainer: payload length mismatch", std::runtime_error);
  }

  SUBCASE("bad magic") {
    bytes[0] = 'X';
    CHECK_THROWS_WITH_AS(TensorContainer::parse(bytes), "TensorContainer: bad magic",
                         std::runtime_error);
  }

  SUBCASE("missing header field") {
    // Rebuild a header without "dtype".
    const std::string header = R"({"tensors":[{"name":"x","shape":[2,2]}]})";
    std::vector<std::uint8_t> buf = {'F', 'B', 'T', 'C'};
    const std::uint32_t version = 1;
    const std::uint64_t hlen = header.size();
    buf.resize(16);
    std::memcpy(buf.data() + 4, &version, 4);
    std::memcpy(buf.data() + 8, &hlen, 8);
    buf.insert(buf.end(), header.begin(), header.end());
    try {
      TensorContainer::parse(buf);
      FAIL("expected an exception");
    } catch (const std::runtime_error& e) {
      CHECK(std::string(e.what()).find("missing field 'dtype'") != std::string::npos);
    }
  }

  SUBCASE("duplicate-name lookup and dtype mismatch") {
    const auto parsed = TensorContainer::parse(bytes);
    CHECK_THROWS(parsed.as_u8("x"));
    CHECK_THROWS(parsed.get("missing"));
  }
}

TEST_CASE("occupancy ground-truth container validation") {
  const auto path = std::filesystem::temp_directory_path() / "fbocc_gt_test.ftc";

  SUBCASE("round trip") {
    OccupancyGrid gt;
    gt.shape = {4, 3, 2};
    gt.labels.assign(24, kFreeClass);
    gt.labels[5] = 4;
    gt.camera_mask.assign(24, 1);
    gt.camera_mask[7] = 0;
    write_occupancy_gt(path.string(), gt);
    const auto back = read_occupancy_gt(path.string());
    CHECK(back.shape == gt.shape);
    CHECK(back.labels == gt.labels);
    CHECK(back.camera_mask == gt.camera_mask);
  }

  SUBCASE("labels outside [0,17] are reported with indices") {
    TensorContainer c;
    std::vector<std::uint8_t> labels(8, 0);
    labels[2] = 18;
    labels[5] = 200;
    c.add_u8("semantics", {2, 2, 2}, labels);
    c.save(path.string());
    try {
      read_occupancy_gt(path.string());
      FAIL("expected an exception");
    } catch (const std::runtime_error& e) {
      const std::string what = e.what();
      CHECK(what.find("labels outside [0,17]") != std::string::npos);
      CHECK(what.find("2") != std::string::npos);
      CHECK(what.find("5") != std::string::npos);
    }
  }
  std::filesystem::remove(path);
}
