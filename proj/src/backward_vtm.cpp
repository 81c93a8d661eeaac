#include "fbocc/backward_vtm.hpp"

#include <cmath>
#include <stdexcept>

#include "fbocc/container.hpp"

namespace fbocc {

BackwardLayerWeights BackwardLayerWeights::identity(std::size_t channels) {
  BackwardLayerWeights w;
  w.weight = Tensor({channels, channels});
  w.bias = Tensor({channels});
  for (std::size_t i = 0; i < channels; ++i) w.weight(i, i) = 1.0;
  return w;
}

BackwardLayerWeights BackwardLayerWeights::zeros(std::size_t channels) {
  BackwardLayerWeights w;
  w.weight = Tensor({channels, channels});
  w.bias = Tensor({channels});
  return w;
}

BackwardLayerWeights BackwardLayerWeights::random(std::size_t channels, std::uint64_t seed) {
  DeterministicRng rng(seed);
  BackwardLayerWeights w;
  w.weight = Tensor({channels, channels});
  w.bias = Tensor({channels});
  const double scale = 1.0 / std::sqrt(static_cast<double>(channels));
  for (std::size_t i = 0; i < w.weight.size(); ++i) w.weight[i] = rng.uniform(-scale, scale);
  for (std::size_t i = 0; i < channels; ++i) w.bias(i) = rng.uniform(-0.1, 0.1);
  return w;
}

void BackwardLayerWeights::validate(std::size_t channels) const {
  if (weight.rank() != 2 || weight.dim(0) != channels || weight.dim(1) != channels) {
    throw std::invalid_argument("weights: tensor 'backward.proj.weight' must be C x C");
  }
  if (bias.rank() != 1 || bias.dim(0) != channels) {
    throw std::invalid_argument("weights: tensor 'backward.proj.bias' must have C entries");
  }
  if (!weight.all_finite() || !bias.all_finite()) {
    throw std::invalid_argument("weights: backward projection weights must be finite");
  }
}

void BackwardLayerWeights::store(TensorContainer& out) const {
  out.add_tensor("backward.proj.weight", weight);
  out.add_tensor("backward.proj.bias", bias);
}

BackwardLayerWeights BackwardLayerWeights::from_container(const TensorContainer& in,
                                                          std::size_t channels) {
  BackwardLayerWeights w;
  w.weight = in.get_tensor("backward.proj.weight");
  w.bias = in.get_tensor("backward.proj.bias");
  w.validate(channels);
  return w;
}

BevFeatureMap compress_voxel_to_bev(const VoxelFeatureVolume& vol) {
  const std::size_t c = vol.values.dim(0), x = vol.values.dim(1), y = vol.values.dim(2),
                    z = vol.values.dim(3);
  BevFeatureMap bev;
  bev.values = Tensor({c, x, y});
  std::vector<double> column(z);
  for (std::size_t ci = 0; ci < c; ++ci) {
    for (std::size_t xi = 0; xi < x; ++xi) {
      for (std::size_t yi = 0; yi < y; ++yi) {
        for (std::size_t zi = 0; zi < z; ++zi) column[zi] = vol.values(ci, xi, yi, zi);
        bev.values(ci, xi, yi) = pairwise_sum(column) / static_cast<double>(z);
      }
    }
  }
  return bev;
}

std::optional<std::vector<double>> bilinear_sample(const ImageFeatureMap& map, double u, double v) {
  const std::size_t c = map.values.dim(0);
  const std::size_t hf = map.values.dim(1), wf = map.values.dim(2);
  if (u < 0.0 || v < 0.0 || u > static_cast<double>(wf - 1) || v > static_cast<double>(hf - 1)) {
    return std::nullopt;
  }
  std::size_t x0 = static_cast<std::size_t>(std::floor(u));
  std::size_t y0 = static_cast<std::size_t>(std::floor(v));
  if (x0 >= wf - 1 && wf > 1) x0 = wf - 2;  // right/bottom edge samples
  if (y0 >= hf - 1 && hf > 1) y0 = hf - 2;
  const std::size_t x1 = (wf > 1) ? x0 + 1 : x0;
  const std::size_t y1 = (hf > 1) ? y0 + 1 : y0;
  const double fx = u - static_cast<double>(x0);
  const double fy = v - static_cast<double>(y0);
  std::vector<double> out(c);
  for (std::size_t ci = 0; ci < c; ++ci) {
    const double top = map.values(ci, y0, x0) * (1.0 - fx) + map.values(ci, y0, x1) * fx;
    const double bot = map.values(ci, y1, x0) * (1.0 - fx) + map.values(ci, y1, x1) * fx;
    out[ci] = top * (1.0 - fy) + bot * fy;
  }
  return out;
}

std::optional<double> bilinear_sample_plane(const Tensor& planes, std::size_t plane, double u,
                                            double v) {
  const std::size_t hf = planes.dim(1), wf = planes.dim(2);
  if (u < 0.0 || v < 0.0 || u > static_cast<double>(wf - 1) || v > static_cast<double>(hf - 1)) {
    return std::nullopt;
  }
  std::size_t x0 = static_cast<std::size_t>(std::floor(u));
  std::size_t y0 = static_cast<std::size_t>(std::floor(v));
  if (x0 >= wf - 1 && wf > 1) x0 = wf - 2;
  if (y0 >= hf - 1 && hf > 1) y0 = hf - 2;
  const std::size_t x1 = (wf > 1) ? x0 + 1 : x0;
  const std::size_t y1 = (hf > 1) ? y0 + 1 : y0;
  const double fx = u - static_cast<double>(x0);
  const double fy = v - static_cast<double>(y0);
  const double top = planes(plane, y0, x0) * (1.0 - fx) + planes(plane, y0, x1) * fx;
  const double bot = planes(plane, y1, x0) * (1.0 - fx) + planes(plane, y1, x1) * fx;
  return top * (1.0 - fy) + bot * fy;
}

BevFeatureMap backward_project(const BevFeatureMap& bev, std::span<const EncoderOutput> cameras,
                               std::span<const CameraModel> rig, const DepthBinSpec& bins,
                               const VoxelGridSpec& grid, const BackwardLayerWeights& weights,
                               std::size_t n_heights, int threads) {
  bins.validate();
  grid.validate();
  if (n_heights < 1) throw std::invalid_argument("backward_project: n_heights must be >= 1");
  if (cameras.size() != rig.size()) {
    throw std::invalid_argument("backward_project: camera features and rig sizes disagree");
  }
  const std::size_t c = bev.values.dim(0);
  const std::size_t nx = bev.values.dim(1), ny = bev.values.dim(2);
  const auto gs = grid.shape();
  if (nx != gs[0] || ny != gs[1]) {
    throw std::invalid_argument("backward_project: BEV shape does not match grid");
  }
  weights.validate(c);

  const double z_extent = grid.max_corner.z() - grid.min_corner.z();
  std::vector<double> heights(n_heights);
  for (std::size_t k = 0; k < n_heights; ++k) {
    heights[k] =
        grid.min_corner.z() + (static_cast<double>(k) + 0.5) * z_extent / static_cast<double>(n_heights);
  }

  BevFeatureMap out;
  out.values = bev.values;

  parallel_for(nx * ny, threads, [&](std::size_t cell) {
    const std::size_t xi = cell / ny;
    const std::size_t yi = cell % ny;
    const Eigen::Vector3d base = grid.voxel_center(xi, yi, 0);
    std::vector<double> accum(c, 0.0);
    double total_weight = 0.0;
    std::size_t n_hits = 0;
    for (std::size_t k = 0; k < n_heights; ++k) {
      const Eigen::Vector3d ref(base.x(), base.y(), heights[k]);
      for (std::size_t m = 0; m < rig.size(); ++m) {
        const auto hit = project_ego_point(ref, rig[m]);
        if (!hit) continue;
        const int stride = cameras[m].features.stride;
        const double uf = image_to_feature_pixel(hit->u, stride);
        const double vf = image_to_feature_pixel(hit->v, stride);
        const auto feat = bilinear_sample(cameras[m].features, uf, vf);
        if (!feat) continue;
        double w = 0.0;
        if (const auto bin = bins.bin_of(hit->depth)) {
          const auto p = bilinear_sample_plane(cameras[m].depth.probs, *bin, uf, vf);
          w = p ? *p : 0.0;
        }
        ++n_hits;
        total_weight += w;
        for (std::size_t ci = 0; ci < c; ++ci) accum[ci] += w * (*feat)[ci];
      }
    }
    if (n_hits == 0 || total_weight == 0.0) return;  // pass-through
    for (std::size_t ci = 0; ci < c; ++ci) accum[ci] /= static_cast<double>(n_hits);
    for (std::size_t ci = 0; ci < c; ++ci) {
      double proj = weights.bias(ci);
      for (std::size_t cj = 0; cj < c; ++cj) proj += weights.weight(ci, cj) * accum[cj];
      out.values(ci, xi, yi) += proj;
    }
  });
  return out;
}

}  // namespace fbocc
