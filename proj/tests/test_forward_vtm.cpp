#include <doctest.h>

#include <cmath>

#include "fbocc/forward_vtm.hpp"

using namespace fbocc;

namespace {

/// Deterministic pseudo-image with integer-derived values only.
Tensor fixed_test_image(std::size_t c, std::size_t h, std::size_t w) {
  Tensor img({c, h, w});
  for (std::size_t ci = 0; ci < c; ++ci) {
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        img(ci, y, x) = static_cast<double>((ci * 31 + y * 7 + x * 3) % 17) / 16.0;
      }
    }
  }
  return img;
}

CameraModel forward_camera(double f, int h, int w, const Eigen::Vector3d& position,
                           double yaw = 0.0) {
  CameraModel cam;
  cam.intrinsics = Eigen::Matrix3d::Identity();
  cam.intrinsics(0, 0) = f;
  cam.intrinsics(1, 1) = f;
  cam.intrinsics(0, 2) = (w - 1) * 0.5;
  cam.intrinsics(1, 2) = (h - 1) * 0.5;
  const double cy = std::cos(yaw), sy = std::sin(yaw);
  cam.cam_to_ego.rotation.col(0) = Eigen::Vector3d(sy, -cy, 0.0);
  cam.cam_to_ego.rotation.col(1) = Eigen::Vector3d(0.0, 0.0, -1.0);
  cam.cam_to_ego.rotation.col(2) = Eigen::Vector3d(cy, sy, 0.0);
  cam.cam_to_ego.translation = position;
  cam.height = h;
  cam.width = w;
  cam.validate();
  return cam;
}

/// Naive quadruple-loop splat: per cell, unproject and accumulate.
VoxelFeatureVolume splat_oracle(const FrustumFeatures& frustum, const CameraModel& cam,
                                const DepthBinSpec& bins, const VoxelGridSpec& grid,
                                double* in_grid_mass = nullptr) {
  const std::size_t c = frustum.values.dim(0), d = frustum.values.dim(1);
  const std::size_t hf = frustum.values.dim(2), wf = frustum.values.dim(3);
  const auto gs = grid.shape();
  VoxelFeatureVolume vol;
  vol.values = Tensor({c, gs[0], gs[1], gs[2]});
  if (in_grid_mass) *in_grid_mass = 0.0;
  for (std::size_t di = 0; di < d; ++di) {
    for (std::size_t y = 0; y < hf; ++y) {
      for (std::size_t x = 0; x < wf; ++x) {
        const double u = (static_cast<double>(x) + 0.5) * frustum.stride - 0.5;
        const double v = (static_cast<double>(y) + 0.5) * frustum.stride - 0.5;
        const double depth = bins.bin_center(di);
        const Eigen::Vector3d p = unproject_pixel(u, v, depth, cam);
        const auto idx = grid.voxel_index(p);
        if (!idx) continue;
        for (std::size_t ci = 0; ci < c; ++ci) {
          vol.values(ci, (*idx)[0], (*idx)[1], (*idx)[2]) += frustum.values(ci, di, y, x);
          if (in_grid_mass) *in_grid_mass += frustum.values(ci, di, y, x);
        }
      }
    }
  }
  return vol;
}

}  // namespace

TEST_CASE("depth bin edges and lookup") {
  DepthBinSpec bins;
  bins.validate();
  const auto edges = bins.edges();
  REQUIRE(edges.size() == 81);
  CHECK(edges[0] == 2.0);
  CHECK(edges[80] == 42.0);
  CHECK(bins.bin_width() == doctest::Approx(0.5).epsilon(1e-15));

  CHECK(bins.bin_of(2.0) == 0);
  CHECK(bins.bin_of(41.999) == 79);
  CHECK_FALSE(bins.bin_of(1.0).has_value());
  CHECK_FALSE(bins.bin_of(42.0).has_value());
  CHECK(bins.bin_center(0) == doctest::Approx(2.25));
}

TEST_CASE("encoder with zero weights yields the uniform depth distribution") {
  EncoderConfig cfg;
  cfg.in_channels = 2;
  cfg.conv1_channels = 4;
  cfg.conv2_channels = 4;
  cfg.hidden_channels = 6;
  cfg.context_channels = 5;
  cfg.depth_bins = 80;
  const auto weights = EncoderWeights::zeros(cfg);
  const auto out = predict_depth_and_context(fixed_test_image(2, 32, 64), cfg, weights);

  CHECK(out.features.values.shape() == std::vector<std::size_t>{5, 2, 4});
  CHECK(out.depth.probs.shape() == std::vector<std::size_t>{80, 2, 4});
  CHECK(out.semantics.logits.shape() == std::vector<std::size_t>{18, 2, 4});
  for (std::size_t i = 0; i < out.depth.probs.size(); ++i) {
    CHECK(out.depth.probs[i] == 1.0 / 80.0);
  }
  for (std::size_t i = 0; i < out.features.values.size(); ++i) {
    CHECK(out.features.values[i] == 0.0);
  }
}

TEST_CASE("encoder depth rows are categorical for random weights") {
  EncoderConfig cfg;
  cfg.in_channels = 3;
  cfg.conv1_channels = 6;
  cfg.conv2_channels = 6;
  cfg.hidden_channels = 8;
  cfg.context_channels = 4;
  cfg.depth_bins = 16;
  const auto weights = EncoderWeights::random(cfg, 123);
  const auto out = predict_depth_and_context(fixed_test_image(3, 32, 48), cfg, weights);
  const std::size_t hf = out.depth.probs.dim(1), wf = out.depth.probs.dim(2);
  for (std::size_t y = 0; y < hf; ++y) {
    for (std::size_t x = 0; x < wf; ++x) {
      double total = 0.0;
      for (std::size_t bin = 0; bin < 16; ++bin) {
        const double p = out.depth.probs(bin, y, x);
        CHECK(p >= 0.0);
        CHECK(p <= 1.0);
        total += p;
      }
      CHECK(total == doctest::Approx(1.0).epsilon(1e-5));
    }
  }
}

TEST_CASE("encoder golden regression on seed-42 weights") {
  EncoderConfig cfg;
  cfg.in_channels = 3;
  cfg.conv1_channels = 8;
  cfg.conv2_channels = 8;
  cfg.hidden_channels = 12;
  cfg.context_channels = 6;
  cfg.depth_bins = 24;
  const auto weights = EncoderWeights::random(cfg, 42);
  const auto out = predict_depth_and_context(fixed_test_image(3, 48, 80), cfg, weights);

  std::uint64_t h = fnv1a64(out.features.values);
  h ^= fnv1a64(out.depth.probs);
  h ^= fnv1a64(out.semantics.logits);
  // Frozen from the first run; any arithmetic change must be deliberate.
  CHECK(h == 0xd269c7047243d0d5ULL);
}

TEST_CASE("encoder rejects mismatched weight shapes, naming the tensor") {
  EncoderConfig cfg;
  cfg.in_channels = 1;
  cfg.conv1_channels = 2;
  cfg.conv2_channels = 2;
  cfg.hidden_channels = 3;
  cfg.context_channels = 2;
  cfg.depth_bins = 4;
  auto weights = EncoderWeights::zeros(cfg);
  weights.ctx_w = Tensor({2, 99});
  try {
    predict_depth_and_context(fixed_test_image(1, 16, 16), cfg, weights);
    FAIL("expected an exception");
  } catch (const std::invalid_argument& e) {
    CHECK(std::string(e.what()).find("head_context.weight") != std::string::npos);
  }
}

TEST_CASE("lift basics") {
  ImageFeatureMap features;
  features.values = Tensor({1, 2, 2});
  features.stride = 16;
  DepthDistribution depth;
  depth.probs = Tensor({80, 2, 2}, 1.0 / 80.0);

  SUBCASE("uniform distribution spreads a feature evenly") {
    features.values(0, 1, 1) = 80.0;
    const auto frustum = lift(features, depth);
    for (std::size_t d = 0; d < 80; ++d) {
      CHECK(frustum.values(0, d, 1, 1) == doctest::Approx(1.0));
      CHECK(frustum.values(0, d, 0, 0) == 0.0);
    }
  }

  SUBCASE("one-hot depth concentrates in one slice") {
    features.values(0, 0, 0) = 2.5;
    DepthDistribution onehot;
    onehot.probs = Tensor({80, 2, 2});
    for (std::size_t y = 0; y < 2; ++y) {
      for (std::size_t x = 0; x < 2; ++x) onehot.probs(13, y, x) = 1.0;
    }
    const auto frustum = lift(features, onehot);
    CHECK(frustum.values(0, 13, 0, 0) == 2.5);
    for (std::size_t d = 0; d < 80; ++d) {
      if (d != 13) CHECK(frustum.values(0, d, 0, 0) == 0.0);
    }
  }

  SUBCASE("summing over depth recovers the features") {
    DeterministicRng rng(17);
    ImageFeatureMap f2;
    f2.values = Tensor({4, 3, 5});
    for (std::size_t i = 0; i < f2.values.size(); ++i) f2.values[i] = rng.uniform(-2.0, 2.0);
    DepthDistribution d2;
    d2.probs = Tensor({12, 3, 5});
    for (std::size_t y = 0; y < 3; ++y) {
      for (std::size_t x = 0; x < 5; ++x) {
        double total = 0.0;
        std::vector<double> raw(12);
        for (auto& r : raw) {
          r = rng.uniform(0.01, 1.0);
          total += r;
        }
        for (std::size_t d = 0; d < 12; ++d) d2.probs(d, y, x) = raw[d] / total;
      }
    }
    const auto frustum = lift(f2, d2);
    for (std::size_t c = 0; c < 4; ++c) {
      for (std::size_t y = 0; y < 3; ++y) {
        for (std::size_t x = 0; x < 5; ++x) {
          double total = 0.0;
          for (std::size_t d = 0; d < 12; ++d) total += frustum.values(c, d, y, x);
          CHECK(total == doctest::Approx(f2.values(c, y, x)).epsilon(1e-5));
        }
      }
    }

    // Linearity in the features.
    ImageFeatureMap doubled;
    doubled.values = Tensor(f2.values.shape());
    doubled.stride = f2.stride;
    for (std::size_t i = 0; i < doubled.values.size(); ++i) {
      doubled.values[i] = 2.0 * f2.values[i];
    }
    const auto lifted2 = lift(doubled, d2);
    for (std::size_t i = 0; i < lifted2.values.size(); ++i) {
      CHECK(lifted2.values[i] == doctest::Approx(2.0 * frustum.values[i]).epsilon(1e-12));
    }
  }

  SUBCASE("dimension mismatch throws") {
    DepthDistribution bad;
    bad.probs = Tensor({80, 3, 2});
    CHECK_THROWS(lift(features, bad));
  }
}

namespace {

struct SplatFixture {
  DepthBinSpec bins;
  VoxelGridSpec grid;
  std::vector<CameraModel> rig;

  SplatFixture() {
    bins.num_bins = 8;
    bins.min_depth = 0.4;
    bins.max_depth = 4.4;
    grid.min_corner = Eigen::Vector3d(-2.0, -2.0, 0.0);
    grid.max_corner = Eigen::Vector3d(2.0, 2.0, 1.6);
    grid.voxel_size = 0.4;
    rig.push_back(forward_camera(40.0, 32, 32, Eigen::Vector3d(-1.8, 0.0, 0.8), 0.0));
    rig.push_back(forward_camera(40.0, 32, 32, Eigen::Vector3d(0.0, -1.8, 0.8), M_PI / 2.0));
  }

  FrustumFeatures random_frustum(std::uint64_t seed, std::size_t c = 3) const {
    DeterministicRng rng(seed);
    FrustumFeatures frustum;
    frustum.values = Tensor({c, bins.num_bins, 8, 8});
    frustum.stride = 4;  // 32-pixel images, 8x8 feature maps
    for (std::size_t i = 0; i < frustum.values.size(); ++i) {
      frustum.values[i] = rng.uniform(0.0, 1.0);
    }
    return frustum;
  }
};

}  // namespace

TEST_CASE("splat: zero frustum gives a zero volume") {
  const SplatFixture fx;
  FrustumFeatures frustum;
  frustum.values = Tensor({2, 8, 8, 8});
  frustum.stride = 4;
  const auto vol = splat(frustum, fx.rig[0], fx.bins, fx.grid);
  for (std::size_t i = 0; i < vol.values.size(); ++i) CHECK(vol.values[i] == 0.0);
}

TEST_CASE("splat: single nonzero cell lands in the hand-computed voxel") {
  const SplatFixture fx;
  FrustumFeatures frustum;
  frustum.values = Tensor({2, 8, 8, 8});
  frustum.stride = 4;
  const std::size_t d = 3, y = 4, x = 2;
  frustum.values(0, d, y, x) = 1.5;
  frustum.values(1, d, y, x) = -0.5;

  // Independent trace of the unprojection chain.
  const auto& cam = fx.rig[0];
  const double u = (x + 0.5) * 4.0 - 0.5;
  const double v = (y + 0.5) * 4.0 - 0.5;
  const double depth = fx.bins.min_depth + (d + 0.5) * fx.bins.bin_width();
  const Eigen::Vector3d dir((u - cam.intrinsics(0, 2)) / cam.intrinsics(0, 0),
                            (v - cam.intrinsics(1, 2)) / cam.intrinsics(1, 1), 1.0);
  const Eigen::Vector3d p = cam.cam_to_ego.rotation * (dir * depth) + cam.cam_to_ego.translation;
  const auto idx = fx.grid.voxel_index(p);
  REQUIRE(idx.has_value());

  const auto vol = splat(frustum, cam, fx.bins, fx.grid);
  std::size_t nonzero = 0;
  for (std::size_t i = 0; i < vol.values.size(); ++i) {
    if (vol.values[i] != 0.0) ++nonzero;
  }
  CHECK(nonzero == 2);
  CHECK(vol.values(0, (*idx)[0], (*idx)[1], (*idx)[2]) == 1.5);
  CHECK(vol.values(1, (*idx)[0], (*idx)[1], (*idx)[2]) == -0.5);
}

TEST_CASE("splat equals the quadruple-loop oracle bit-exactly") {
  const SplatFixture fx;
  const auto frustum = fx.random_frustum(2024);
  const auto got = splat(frustum, fx.rig[0], fx.bins, fx.grid);
  double in_grid = 0.0;
  const auto want = splat_oracle(frustum, fx.rig[0], fx.bins, fx.grid, &in_grid);
  REQUIRE(got.values.size() == want.values.size());
  for (std::size_t i = 0; i < got.values.size(); ++i) {
    CHECK(got.values[i] == want.values[i]);
  }

  // Mass conservation against the oracle's in-grid mass.
  const double total = got.values.sum();
  CHECK(total == doctest::Approx(in_grid).epsilon(1e-5));
}

TEST_CASE("splat is linear in the features") {
  const SplatFixture fx;
  const auto fa = fx.random_frustum(7);
  const auto fb = fx.random_frustum(8);
  FrustumFeatures fsum;
  fsum.values = Tensor(fa.values.shape());
  fsum.stride = fa.stride;
  for (std::size_t i = 0; i < fsum.values.size(); ++i) {
    fsum.values[i] = fa.values[i] + fb.values[i];
  }
  const auto va = splat(fa, fx.rig[0], fx.bins, fx.grid);
  const auto vb = splat(fb, fx.rig[0], fx.bins, fx.grid);
  const auto vsum = splat(fsum, fx.rig[0], fx.bins, fx.grid);
  for (std::size_t i = 0; i < vsum.values.size(); ++i) {
    CHECK(vsum.values[i] == doctest::Approx(va.values[i] + vb.values[i]).epsilon(1e-5));
  }
}

TEST_CASE("multi-camera forward combines per-camera splats") {
  const SplatFixture fx;
  EncoderConfig cfg;
  cfg.in_channels = 3;
  cfg.conv1_channels = 4;
  cfg.conv2_channels = 4;
  cfg.hidden_channels = 6;
  cfg.context_channels = 3;
  cfg.depth_bins = fx.bins.num_bins;
  const auto weights = EncoderWeights::random(cfg, 9);
  const std::vector<Tensor> images = {fixed_test_image(3, 32, 32), fixed_test_image(3, 32, 32)};

  SUBCASE("one camera equals its own splat") {
    const std::vector<CameraModel> solo = {fx.rig[0]};
    const auto vol = multi_camera_forward(std::span(images).first(1), solo, cfg, weights, fx.bins,
                                          fx.grid);
    const auto enc = predict_depth_and_context(images[0], cfg, weights);
    const auto direct = splat(lift(enc.features, enc.depth), fx.rig[0], fx.bins, fx.grid);
    for (std::size_t i = 0; i < vol.values.size(); ++i) {
      CHECK(vol.values[i] == direct.values[i]);
    }
  }

  SUBCASE("duplicated camera doubles the volume") {
    const std::vector<CameraModel> twice = {fx.rig[0], fx.rig[0]};
    const auto vol = multi_camera_forward(images, twice, cfg, weights, fx.bins, fx.grid);
    const std::vector<CameraModel> solo = {fx.rig[0]};
    const auto single = multi_camera_forward(std::span(images).first(1), solo, cfg, weights,
                                             fx.bins, fx.grid);
    for (std::size_t i = 0; i < vol.values.size(); ++i) {
      CHECK(vol.values[i] == doctest::Approx(2.0 * single.values[i]).epsilon(1e-12));
    }
  }

  SUBCASE("two cameras equal the sum of independent splats") {
    const auto vol = multi_camera_forward(images, fx.rig, cfg, weights, fx.bins, fx.grid);
    Tensor want;
    for (std::size_t m = 0; m < 2; ++m) {
      const auto enc = predict_depth_and_context(images[m], cfg, weights);
      const auto part = splat(lift(enc.features, enc.depth), fx.rig[m], fx.bins, fx.grid);
      if (m == 0) {
        want = part.values;
      } else {
        for (std::size_t i = 0; i < want.size(); ++i) want[i] += part.values[i];
      }
    }
    for (std::size_t i = 0; i < vol.values.size(); ++i) CHECK(vol.values[i] == want[i]);
  }

  SUBCASE("empty rig throws") {
    CHECK_THROWS(multi_camera_forward({}, {}, cfg, weights, fx.bins, fx.grid));
  }
}
