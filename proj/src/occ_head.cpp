#include "fbocc/occ_head.hpp"

#include <cmath>
#include <stdexcept>

#include "fbocc/container.hpp"

namespace fbocc {

const std::array<std::string_view, kNumClasses> kClassNames = {
    "others",        "barrier",      "bicycle",  "bus",       "car",        "construction_vehicle",
    "motorcycle",    "pedestrian",   "traffic_cone", "trailer", "truck",     "driveable_surface",
    "other_flat",    "sidewalk",     "terrain",  "manmade",   "vegetation", "free"};

void OccupancyGrid::validate() const {
  if (labels.size() != voxel_count()) {
    throw std::invalid_argument("OccupancyGrid: labels size does not match shape");
  }
  if (camera_mask.size() != voxel_count()) {
    throw std::invalid_argument("OccupancyGrid: camera_mask size does not match shape");
  }
  for (std::uint8_t l : labels) {
    if (l >= kNumClasses) throw std::invalid_argument("OccupancyGrid: label out of [0,17]");
  }
}

bool PredictionResult::is_simplex(double tol) const {
  const std::size_t k = probs.dim(0);
  const std::size_t n = probs.size() / k;
  for (std::size_t v = 0; v < n; ++v) {
    double total = 0.0;
    for (std::size_t c = 0; c < k; ++c) {
      const double p = probs[c * n + v];
      if (p < -tol || p > 1.0 + tol) return false;
      total += p;
    }
    if (std::abs(total - 1.0) > tol) return false;
  }
  return true;
}

namespace {

void check_shape(const Tensor& t, const std::vector<std::size_t>& want, const char* name) {
  if (t.shape() != want) {
    throw std::invalid_argument(std::string("weights: tensor '") + name +
                                "' has an unexpected shape");
  }
}

}  // namespace

HeadWeights HeadWeights::zeros(std::size_t c) {
  HeadWeights w;
  w.conv1_w = Tensor({c, c, 3, 3, 3});
  w.conv1_b = Tensor({c});
  w.conv2_w = Tensor({c, c, 3, 3, 3});
  w.conv2_b = Tensor({c});
  w.cls_w = Tensor({kNumClasses, c});
  w.cls_b = Tensor({kNumClasses});
  return w;
}

HeadWeights HeadWeights::random(std::size_t c, std::uint64_t seed) {
  DeterministicRng rng(seed);
  HeadWeights w = zeros(c);
  const double sc = 1.0 / std::sqrt(static_cast<double>(c) * 27.0);
  const double sl = 1.0 / std::sqrt(static_cast<double>(c));
  for (std::size_t i = 0; i < w.conv1_w.size(); ++i) w.conv1_w[i] = rng.uniform(-sc, sc);
  for (std::size_t i = 0; i < w.conv1_b.size(); ++i) w.conv1_b[i] = rng.uniform(-0.1, 0.1);
  for (std::size_t i = 0; i < w.conv2_w.size(); ++i) w.conv2_w[i] = rng.uniform(-sc, sc);
  for (std::size_t i = 0; i < w.conv2_b.size(); ++i) w.conv2_b[i] = rng.uniform(-0.1, 0.1);
  for (std::size_t i = 0; i < w.cls_w.size(); ++i) w.cls_w[i] = rng.uniform(-sl, sl);
  for (std::size_t i = 0; i < w.cls_b.size(); ++i) w.cls_b[i] = rng.uniform(-0.1, 0.1);
  return w;
}

void HeadWeights::validate(std::size_t c) const {
  check_shape(conv1_w, {c, c, 3, 3, 3}, "head.conv1.weight");
  check_shape(conv1_b, {c}, "head.conv1.bias");
  check_shape(conv2_w, {c, c, 3, 3, 3}, "head.conv2.weight");
  check_shape(conv2_b, {c}, "head.conv2.bias");
  check_shape(cls_w, {kNumClasses, c}, "head.classifier.weight");
  check_shape(cls_b, {kNumClasses}, "head.classifier.bias");
}

void HeadWeights::store(TensorContainer& out) const {
  out.add_tensor("head.conv1.weight", conv1_w);
  out.add_tensor("head.conv1.bias", conv1_b);
  out.add_tensor("head.conv2.weight", conv2_w);
  out.add_tensor("head.conv2.bias", conv2_b);
  out.add_tensor("head.classifier.weight", cls_w);
  out.add_tensor("head.classifier.bias", cls_b);
}

HeadWeights HeadWeights::from_container(const TensorContainer& in, std::size_t channels) {
  HeadWeights w;
  w.conv1_w = in.get_tensor("head.conv1.weight");
  w.conv1_b = in.get_tensor("head.conv1.bias");
  w.conv2_w = in.get_tensor("head.conv2.weight");
  w.conv2_b = in.get_tensor("head.conv2.bias");
  w.cls_w = in.get_tensor("head.classifier.weight");
  w.cls_b = in.get_tensor("head.classifier.bias");
  w.validate(channels);
  return w;
}

VoxelFeatureVolume expand_bev_to_voxel(const BevFeatureMap& bev, std::size_t z) {
  if (z == 0) throw std::invalid_argument("expand_bev_to_voxel: Z must be >= 1");
  const std::size_t c = bev.values.dim(0), x = bev.values.dim(1), y = bev.values.dim(2);
  VoxelFeatureVolume vol;
  vol.values = Tensor({c, x, y, z});
  for (std::size_t ci = 0; ci < c; ++ci) {
    for (std::size_t xi = 0; xi < x; ++xi) {
      for (std::size_t yi = 0; yi < y; ++yi) {
        const double v = bev.values(ci, xi, yi);
        for (std::size_t zi = 0; zi < z; ++zi) vol.values(ci, xi, yi, zi) = v;
      }
    }
  }
  return vol;
}

VoxelFeatureVolume fuse(const VoxelFeatureVolume& a, const VoxelFeatureVolume& b) {
  if (!a.values.same_shape(b.values)) {
    throw std::invalid_argument("fuse: volume shapes disagree");
  }
  VoxelFeatureVolume out;
  out.values = a.values;
  for (std::size_t i = 0; i < out.values.size(); ++i) out.values[i] += b.values[i];
  return out;
}

namespace {

/// Padded 3x3x3 convolution over a (C, X, Y, Z) volume; parallel over x
/// slabs (outputs are disjoint, so thread count cannot change results).
Tensor conv3d(const Tensor& in, const Tensor& w, const Tensor& b, int threads) {
  const std::size_t cin = in.dim(0), nx = in.dim(1), ny = in.dim(2), nz = in.dim(3);
  const std::size_t cout = w.dim(0);
  Tensor out({cout, nx, ny, nz});
  parallel_for(nx, threads, [&](std::size_t xi) {
    for (std::size_t co = 0; co < cout; ++co) {
      for (std::size_t yi = 0; yi < ny; ++yi) {
        for (std::size_t zi = 0; zi < nz; ++zi) {
          double acc = b(co);
          for (std::size_t ci = 0; ci < cin; ++ci) {
            for (int kx = -1; kx <= 1; ++kx) {
              const long long sx = static_cast<long long>(xi) + kx;
              if (sx < 0 || sx >= static_cast<long long>(nx)) continue;
              for (int ky = -1; ky <= 1; ++ky) {
                const long long sy = static_cast<long long>(yi) + ky;
                if (sy < 0 || sy >= static_cast<long long>(ny)) continue;
                for (int kz = -1; kz <= 1; ++kz) {
                  const long long sz = static_cast<long long>(zi) + kz;
                  if (sz < 0 || sz >= static_cast<long long>(nz)) continue;
                  acc += w(co, ci, static_cast<std::size_t>(kx + 1),
                           static_cast<std::size_t>(ky + 1), static_cast<std::size_t>(kz + 1)) *
                         in(ci, static_cast<std::size_t>(sx), static_cast<std::size_t>(sy),
                            static_cast<std::size_t>(sz));
                }
              }
            }
          }
          out(co, xi, yi, zi) = acc;
        }
      }
    }
  });
  return out;
}

}  // namespace

PredictionResult head_forward(const VoxelFeatureVolume& vol, const HeadWeights& weights,
                              int threads) {
  const std::size_t c = vol.values.dim(0);
  weights.validate(c);
  Tensor h = conv3d(vol.values, weights.conv1_w, weights.conv1_b, threads);
  for (std::size_t i = 0; i < h.size(); ++i) {
    if (h[i] < 0.0) h[i] = 0.0;
  }
  h = conv3d(h, weights.conv2_w, weights.conv2_b, threads);

  const std::size_t nx = h.dim(1), ny = h.dim(2), nz = h.dim(3);
  PredictionResult pred;
  pred.probs = Tensor({kNumClasses, nx, ny, nz});
  const std::size_t n = nx * ny * nz;
  parallel_for(nx, threads, [&](std::size_t xi) {
    std::array<double, kNumClasses> logits{};
    for (std::size_t yi = 0; yi < ny; ++yi) {
      for (std::size_t zi = 0; zi < nz; ++zi) {
        for (std::size_t k = 0; k < kNumClasses; ++k) {
          double acc = weights.cls_b(k);
          for (std::size_t ci = 0; ci < c; ++ci) acc += weights.cls_w(k, ci) * h(ci, xi, yi, zi);
          logits[k] = acc;
        }
        double mx = logits[0];
        for (std::size_t k = 1; k < kNumClasses; ++k) mx = std::max(mx, logits[k]);
        double total = 0.0;
        for (std::size_t k = 0; k < kNumClasses; ++k) {
          logits[k] = std::exp(logits[k] - mx);
          total += logits[k];
        }
        const std::size_t voxel = (xi * ny + yi) * nz + zi;
        for (std::size_t k = 0; k < kNumClasses; ++k) {
          pred.probs[k * n + voxel] = logits[k] / total;
        }
      }
    }
  });
  return pred;
}

std::vector<std::uint8_t> decode(const PredictionResult& pred) {
  const std::size_t k = pred.probs.dim(0);
  const std::size_t n = pred.probs.size() / k;
  std::vector<std::uint8_t> labels(n);
  for (std::size_t v = 0; v < n; ++v) {
    std::size_t best = 0;
    double best_p = pred.probs[v];
    for (std::size_t c = 1; c < k; ++c) {
      const double p = pred.probs[c * n + v];
      if (p > best_p) {
        best_p = p;
        best = c;
      }
    }
    labels[v] = static_cast<std::uint8_t>(best);
  }
  return labels;
}

void trilinear_sample_volume(const Tensor& volume, const VoxelGridSpec& grid,
                             const Eigen::Vector3d& p, std::span<double> out, double* weight_sum) {
  const std::size_t c = volume.dim(0);
  const std::size_t nx = volume.dim(1), ny = volume.dim(2), nz = volume.dim(3);
  for (std::size_t ci = 0; ci < c; ++ci) out[ci] = 0.0;
  if (weight_sum) *weight_sum = 0.0;

  // Continuous voxel-center coordinates.
  const double gx = (p.x() - grid.min_corner.x()) / grid.voxel_size - 0.5;
  const double gy = (p.y() - grid.min_corner.y()) / grid.voxel_size - 0.5;
  const double gz = (p.z() - grid.min_corner.z()) / grid.voxel_size - 0.5;
  const long long x0 = static_cast<long long>(std::floor(gx));
  const long long y0 = static_cast<long long>(std::floor(gy));
  const long long z0 = static_cast<long long>(std::floor(gz));
  const double fx = gx - static_cast<double>(x0);
  const double fy = gy - static_cast<double>(y0);
  const double fz = gz - static_cast<double>(z0);

  for (int dx = 0; dx <= 1; ++dx) {
    const long long xi = x0 + dx;
    if (xi < 0 || xi >= static_cast<long long>(nx)) continue;
    const double wx = dx ? fx : 1.0 - fx;
    for (int dy = 0; dy <= 1; ++dy) {
      const long long yi = y0 + dy;
      if (yi < 0 || yi >= static_cast<long long>(ny)) continue;
      const double wy = dy ? fy : 1.0 - fy;
      for (int dz = 0; dz <= 1; ++dz) {
        const long long zi = z0 + dz;
        if (zi < 0 || zi >= static_cast<long long>(nz)) continue;
        const double w = wx * wy * (dz ? fz : 1.0 - fz);
        if (w == 0.0) continue;
        if (weight_sum) *weight_sum += w;
        for (std::size_t ci = 0; ci < c; ++ci) {
          out[ci] += w * volume(ci, static_cast<std::size_t>(xi), static_cast<std::size_t>(yi),
                                static_cast<std::size_t>(zi));
        }
      }
    }
  }
}

VoxelFeatureVolume align_voxel_features(const VoxelFeatureVolume& prev,
                                        const RigidTransform& prev_from_current,
                                        const VoxelGridSpec& grid, int threads) {
  grid.validate();
  const auto gs = grid.shape();
  const std::size_t c = prev.values.dim(0);
  if (prev.values.dim(1) != gs[0] || prev.values.dim(2) != gs[1] || prev.values.dim(3) != gs[2]) {
    throw std::invalid_argument("align_voxel_features: volume shape does not match grid");
  }
  VoxelFeatureVolume out;
  out.values = Tensor({c, gs[0], gs[1], gs[2]});
  parallel_for(gs[0], threads, [&](std::size_t xi) {
    std::vector<double> sample(c);
    for (std::size_t yi = 0; yi < gs[1]; ++yi) {
      for (std::size_t zi = 0; zi < gs[2]; ++zi) {
        const Eigen::Vector3d q = prev_from_current.apply(grid.voxel_center(xi, yi, zi));
        trilinear_sample_volume(prev.values, grid, q, sample, nullptr);
        for (std::size_t ci = 0; ci < c; ++ci) out.values(ci, xi, yi, zi) = sample[ci];
      }
    }
  });
  return out;
}

}  // namespace fbocc
